//! Batch experiment runner: TOML configuration, seeded sweeps, CSV and JSON
//! reports.
//!
//! A configuration has four sections, `[experiment]`, `[profile]`,
//! `[collection]` and `[output]`; command-line flags override file keys.
//! Every run writes `<name>.csv` and `<name>.json` into the output
//! directory, chosen by `--out`, then `output.dir`, then the
//! `EXTLAB_OUT_DIR` variable, then `extlab-out`.
//!
//! The CSV starts with `#` comment lines carrying the command and the
//! SHA-256 of the effective configuration, followed by the header
//! [`CSV_HEADER`] and one row per run, sorted by `(R, N or sigma, seed)`.
//! A scan appends one fit row named `fit:<quantity>:<variable>` whose `lhs`,
//! `rhs_core` and `ratio` columns hold the slope, the intercept and the
//! standard error of the slope.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 when an audit or
//! invariant fails.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::ensemble::{
    focused_sum, graph_cubes, layer_cubes, packet_bush, random_cubes, random_tube_family, separated_intervals, slab_cubes,
    CarlesonConfig, SquareLayout,
};
use crate::error::Error;
use crate::extension::{sampling_step, FreqBox, Profile, ProfileGrid};
use crate::geometry::{validate_scale, CubeCollection, DyadicCube, ScaleConfig, MAX_DIM};
use crate::selection::{select_multilinear, FunctionData};
use crate::verify::{
    critical_exponent, fit_exponent, uniform_incidence_cubes, verify_carleson, verify_classical, verify_corollary,
    verify_kakeya, verify_linear_refined, verify_multilinear_refined, verify_refined_decoupling,
    verify_saturated_decoupling, EstimateReport, Fit,
};
use crate::wavepacket::{decompose, default_floor_exponent, weight_classes, DEFAULT_WINDOW_FACTOR};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "EXTLAB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "extlab-out";
pub const CSV_HEADER: &str = "name,n,R,p,N,sigma,eps,seed,lhs,rhs_core,ratio";

/// Experiment selected by a configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Decompose,
    Select,
    Classical,
    RefinedDecoupling,
    Kakeya,
    Multilinear,
    Corollary,
    Saturated,
    Linear,
    Carleson,
}

impl ExperimentKind {
    fn label(self) -> &'static str {
        match self {
            Self::Decompose => "decompose",
            Self::Select => "select",
            Self::Classical => "classical",
            Self::RefinedDecoupling => "refined-decoupling",
            Self::Kakeya => "kakeya",
            Self::Multilinear => "multilinear",
            Self::Corollary => "corollary",
            Self::Saturated => "saturated",
            Self::Linear => "linear",
            Self::Carleson => "carleson",
        }
    }

    /// Number of profiles the experiment works with in dimension `n`.
    fn functions(self, n: usize) -> usize {
        match self {
            Self::Select | Self::Kakeya | Self::Multilinear | Self::Corollary | Self::Saturated => n,
            Self::Carleson => 2,
            _ => 1,
        }
    }

    fn uses_cube_counts(self) -> bool {
        matches!(self, Self::Select | Self::RefinedDecoupling | Self::Multilinear | Self::Corollary | Self::Saturated)
    }

    fn uses_collection(self) -> bool {
        self.uses_cube_counts() || matches!(self, Self::Kakeya | Self::Linear)
    }

    fn default_profile(self) -> ProfileKind {
        match self {
            Self::Select | Self::Multilinear | Self::Corollary | Self::Linear => ProfileKind::Focused,
            Self::Saturated => ProfileKind::Bush,
            _ => ProfileKind::Bump,
        }
    }

    fn default_collection(self) -> CollectionKind {
        match self {
            Self::Linear => CollectionKind::Slab,
            Self::Kakeya => CollectionKind::Full,
            _ => CollectionKind::Random,
        }
    }
}

/// Estimates runnable by `verify` and `scan`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimateKind {
    Classical,
    RefinedDecoupling,
    Kakeya,
    Multilinear,
    Corollary,
    Saturated,
    Linear,
    Carleson,
}

impl From<EstimateKind> for ExperimentKind {
    fn from(kind: EstimateKind) -> Self {
        match kind {
            EstimateKind::Classical => Self::Classical,
            EstimateKind::RefinedDecoupling => Self::RefinedDecoupling,
            EstimateKind::Kakeya => Self::Kakeya,
            EstimateKind::Multilinear => Self::Multilinear,
            EstimateKind::Corollary => Self::Corollary,
            EstimateKind::Saturated => Self::Saturated,
            EstimateKind::Linear => Self::Linear,
            EstimateKind::Carleson => Self::Carleson,
        }
    }
}

/// Profile generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// Smooth bump on the support, optionally focused at `profile.focus`.
    Bump,
    /// Sum of bumps focused at the centers of the cube collection.
    Focused,
    /// Unit packets through the centers of the cube collection.
    Bush,
    /// Sum of `profile.foci` bumps focused at random points.
    RandomPhase,
    /// Independent complex Gaussian samples.
    Noise,
    /// The constant 1 on the support.
    Constant,
}

/// Cube collection generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CollectionKind {
    /// `N` distinct uniformly random cubes.
    Random,
    /// Every cube of `[0, R]^n`.
    Full,
    /// `collection.slabs` slabs of `sigma` random cubes each.
    Slab,
    /// One full layer of cubes.
    Line,
    /// One cube per column along a slope-1/2 graph.
    Graph,
    /// The cells listed in `collection.cells`.
    Explicit,
}

/// Axis-parallel frequency box given by its corners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Append an exponent fit over the sweep.
    #[serde(default)]
    pub scan: bool,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(rename = "R", default = "default_scales", deserialize_with = "one_or_many")]
    pub r: Vec<u32>,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Ensemble size: seeds `seed, seed + 1, ...`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Exponent of the refined decoupling comparison, critical by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    /// Tolerance constant of the saturation condition.
    #[serde(default = "default_saturation")]
    pub saturation: f64,
    /// Tubes per family in the Kakeya experiment.
    #[serde(default = "default_tubes")]
    pub tubes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<ProfileKind>,
    /// One list of boxes per function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supports: Option<Vec<Vec<BoxSpec>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foci: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focus: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<CollectionKind>,
    /// Cube counts `N` of a sweep.
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none", deserialize_with = "some_one_or_many")]
    pub counts: Option<Vec<usize>>,
    /// Cubes per slab of a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "some_one_or_many")]
    pub sigma: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slabs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_per_slab: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Vec<u32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<SquareLayout>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

/// Full description of one batch of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub profile: ProfileSection,
    #[serde(default)]
    pub collection: CollectionSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_n() -> usize {
    2
}
fn default_scales() -> Vec<u32> {
    vec![256]
}
fn default_eps() -> f64 {
    0.1
}
fn default_seeds() -> usize {
    1
}
fn default_step() -> f64 {
    0.25
}
fn default_saturation() -> f64 {
    4.0
}
fn default_tubes() -> usize {
    100
}
const DEFAULT_COUNTS: [usize; 1] = [64];
const DEFAULT_SIGMAS: [usize; 1] = [16];
const DEFAULT_FOCI: usize = 6;

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

fn one_or_many<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> std::result::Result<Vec<T>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

fn some_one_or_many<'de, D: Deserializer<'de>, T: Deserialize<'de>>(d: D) -> std::result::Result<Option<Vec<T>>, D::Error> {
    one_or_many(d).map(Some)
}

/// Failure of a batch, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Invariant(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(m) => write!(f, "config error: {m}"),
            Self::Invariant(m) => write!(f, "invariant failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Invariant(m) => Self::Invariant(m),
            other => Self::Config(other.to_string()),
        }
    }
}

fn config_error(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {reason}"))
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            experiment: ExperimentSection {
                kind,
                scan: false,
                n: default_n(),
                r: default_scales(),
                eps: default_eps(),
                seed: 0,
                seeds: default_seeds(),
                step: default_step(),
                exponent: None,
                saturation: default_saturation(),
                tubes: default_tubes(),
            },
            profile: ProfileSection::default(),
            collection: CollectionSection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("malformed configuration: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the experiment, profile and collection sections.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSection::default();
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    fn profile_kind(&self) -> ProfileKind {
        self.profile.tag.unwrap_or(self.experiment.kind.default_profile())
    }

    fn collection_kind(&self) -> CollectionKind {
        self.collection.kind.unwrap_or(self.experiment.kind.default_collection())
    }

    fn counts(&self) -> Vec<usize> {
        self.collection.counts.clone().unwrap_or(DEFAULT_COUNTS.to_vec())
    }

    fn sigmas(&self) -> Vec<usize> {
        self.collection.sigma.clone().unwrap_or(DEFAULT_SIGMAS.to_vec())
    }

    fn rows_per_slab(&self) -> u32 {
        self.collection.rows_per_slab.unwrap_or(2)
    }

    /// Frequency supports, one list of boxes per function.
    pub fn supports(&self) -> Result<Vec<Vec<FreqBox>>, CliError> {
        let e = &self.experiment;
        let wanted = e.kind.functions(e.n);
        let supports = match &self.profile.supports {
            Some(specs) => specs
                .iter()
                .map(|boxes| {
                    boxes
                        .iter()
                        .map(|b| {
                            if b.lo.len() != e.n - 1 || b.hi.len() != e.n - 1 {
                                return Err(config_error("profile.supports", format!("box corners need {} coordinates", e.n - 1)));
                            }
                            FreqBox::new(&b.lo, &b.hi).map_err(|err| config_error("profile.supports", err))
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?,
            None if wanted == 1 => vec![vec![FreqBox::full(e.n)]],
            None if e.n == 2 => separated_intervals().iter().map(|b| vec![*b]).collect(),
            None => transverse_squares().into_iter().map(|b| vec![b]).collect(),
        };
        if supports.len() != wanted {
            return Err(config_error("profile.supports", format!("{} experiments need {wanted} supports, got {}", e.kind.label(), supports.len())));
        }
        if supports.iter().any(|s| s.is_empty()) {
            return Err(config_error("profile.supports", "every function needs at least one box"));
        }
        Ok(supports)
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        if !(2..=MAX_DIM).contains(&e.n) {
            return Err(config_error("experiment.n", format!("{} is not 2 or 3", e.n)));
        }
        if e.r.is_empty() {
            return Err(config_error("experiment.R", "no scale given"));
        }
        for &r in &e.r {
            validate_scale(r).map_err(|_| config_error("experiment.R", format!("{r} is not an even power of two in [64, 16384]")))?;
        }
        if !(e.eps > 0.0 && e.eps <= 0.5) {
            return Err(config_error("experiment.eps", format!("{} is outside (0, 1/2]", e.eps)));
        }
        if e.seeds == 0 {
            return Err(config_error("experiment.seeds", "at least one seed is required"));
        }
        sampling_step(e.step).map_err(|err| config_error("experiment.step", err))?;
        if let Some(p) = e.exponent {
            if !(p >= 1.0) {
                return Err(config_error("experiment.exponent", format!("{p} is below 1")));
            }
        }
        if !(e.saturation > 0.0) {
            return Err(config_error("experiment.saturation", "must be positive"));
        }
        if e.kind == ExperimentKind::Kakeya && e.tubes == 0 {
            return Err(config_error("experiment.tubes", "at least one tube per family is required"));
        }
        if e.kind == ExperimentKind::Carleson && e.n != 2 {
            return Err(config_error("experiment.n", "the Carleson experiment is planar"));
        }
        if let Some(t) = self.output.threads {
            if t == 0 {
                return Err(config_error("output.threads", "at least one thread is required"));
            }
        }
        if let Some(f) = &self.profile.focus {
            if f.len() != e.n {
                return Err(config_error("profile.focus", format!("needs {} coordinates", e.n)));
            }
        }
        if self.profile.foci == Some(0) {
            return Err(config_error("profile.foci", "at least one focus is required"));
        }
        if e.kind.uses_cube_counts() && self.collection_kind() == CollectionKind::Random && self.counts().iter().any(|&c| c == 0) {
            return Err(config_error("collection.N", "cube counts must be positive"));
        }
        if e.kind == ExperimentKind::Linear && self.collection_kind() == CollectionKind::Slab && self.sigmas().iter().any(|&c| c == 0) {
            return Err(config_error("collection.sigma", "slab sizes must be positive"));
        }
        if self.collection_kind() == CollectionKind::Explicit {
            let cells = self.collection.cells.as_ref().ok_or_else(|| config_error("collection.cells", "required by explicit collections"))?;
            if cells.is_empty() || cells.iter().any(|c| c.len() != e.n) {
                return Err(config_error("collection.cells", format!("needs a nonempty list of cells with {} indices", e.n)));
            }
        }
        if e.kind == ExperimentKind::Carleson && self.profile.supports.is_some() {
            let s = self.supports()?;
            if s.iter().any(|b| b.len() != 1) {
                return Err(config_error("profile.supports", "the Carleson experiment takes one interval per function"));
            }
        }
        self.supports()?;
        Ok(())
    }

    /// Sweep points sorted by `(R, N or sigma, seed)`.
    fn points(&self) -> Vec<RunPoint> {
        let e = &self.experiment;
        let sizes: Vec<Option<usize>> = if e.kind == ExperimentKind::Linear && self.collection_kind() == CollectionKind::Slab {
            self.sigmas().into_iter().map(Some).collect()
        } else if e.kind.uses_cube_counts() && self.collection_kind() == CollectionKind::Random {
            self.counts().into_iter().map(Some).collect()
        } else {
            vec![None]
        };
        let mut points = Vec::new();
        for &r in &e.r {
            for &size in &sizes {
                for k in 0..e.seeds as u64 {
                    points.push(RunPoint { r, size, seed: e.seed.wrapping_add(k) });
                }
            }
        }
        points
    }
}

/// Three squares of `[-1, 1]^2` in transverse position.
fn transverse_squares() -> Vec<FreqBox> {
    [([-0.75, -0.75], [-0.25, -0.25]), ([0.25, -0.75], [0.75, -0.25]), ([-0.25, 0.25], [0.25, 0.75])]
        .iter()
        .map(|(lo, hi)| FreqBox::new(lo, hi).expect("valid box"))
        .collect()
}

#[derive(Clone, Copy, Debug)]
struct RunPoint {
    r: u32,
    size: Option<usize>,
    seed: u64,
}

/// Seed of the `stream`-th generator of a run.
fn substream(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

/// Outcome of one sweep point.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub report: EstimateReport,
    /// Value fitted by a scan.
    pub fitted: f64,
}

/// Outcome of a batch.
#[derive(Clone, Debug, Serialize)]
pub struct BatchResult {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub fit: Option<Fit>,
    pub fit_label: Option<String>,
}

impl BatchResult {
    /// Every failed audit, one line each.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        for run in &self.runs {
            let r = &run.report;
            for c in r.failures() {
                out.push(format!("{} R = {} N = {} seed = {}: {}: {}", r.name, r.r, r.cubes, r.seed, c.name, c.detail));
            }
        }
        out
    }

    pub fn csv(&self, command: &str) -> String {
        let mut out = String::new();
        writeln!(out, "# extlab {command}").unwrap();
        writeln!(out, "# config-sha256: {}", self.config_hash).unwrap();
        writeln!(out, "{CSV_HEADER}").unwrap();
        for run in &self.runs {
            let r = &run.report;
            let sigma = r.sigma.map(|s| s.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{},{},{sigma},{},{},{},{},{}", r.name, r.n, r.r, r.p, r.cubes, r.eps, r.seed, r.lhs, r.rhs_core, r.ratio).unwrap();
        }
        if let (Some(fit), Some(label)) = (&self.fit, &self.fit_label) {
            let e = &self.config.experiment;
            let r = if e.r.len() == 1 { e.r[0].to_string() } else { String::new() };
            let p = self.runs.first().map(|run| run.report.p.to_string()).unwrap_or_default();
            writeln!(out, "{label},{},{r},{p},,,{},,{},{},{}", e.n, e.eps, fit.slope, fit.intercept, fit.stderr).unwrap();
        }
        out
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn profile_for(
    cfg: &ExperimentConfig,
    kind: ProfileKind,
    grid: ProfileGrid,
    support: Vec<FreqBox>,
    centers: &[[f64; MAX_DIM]],
    seed: u64,
) -> Result<Profile, CliError> {
    let n = cfg.experiment.n;
    let focus = cfg.profile.focus.as_ref().map(|f| {
        let mut p = [0.0; MAX_DIM];
        p[..n].copy_from_slice(f);
        p
    });
    let profile = match kind {
        ProfileKind::Bump => Profile::bump(grid, support, focus)?,
        ProfileKind::Focused | ProfileKind::Bush if centers.is_empty() => {
            return Err(config_error("profile.tag", "focused and bush profiles need a cube collection"))
        }
        ProfileKind::Focused => focused_sum(grid, support, centers, seed)?,
        ProfileKind::Bush => packet_bush(grid, support, centers, seed)?,
        ProfileKind::RandomPhase => Profile::random_phase(grid, support, seed, cfg.profile.foci.unwrap_or(DEFAULT_FOCI))?,
        ProfileKind::Noise => Profile::noise(grid, support, seed)?,
        ProfileKind::Constant => Profile::constant(grid, support, num_complex::Complex64::new(1.0, 0.0))?,
    };
    Ok(profile)
}

fn collection_for(cfg: &ExperimentConfig, scale: &ScaleConfig, point: &RunPoint) -> Result<CubeCollection, CliError> {
    let c = &cfg.collection;
    let cells = scale.cells_per_axis();
    let cubes = match cfg.collection_kind() {
        CollectionKind::Random => random_cubes(scale, point.size.unwrap_or(DEFAULT_COUNTS[0]), point.seed).map_err(|e| config_error("collection.N", e))?,
        CollectionKind::Full => CubeCollection::full(*scale),
        CollectionKind::Slab => slab_cubes(scale, c.slabs.unwrap_or(1), cfg.rows_per_slab(), point.size.unwrap_or(DEFAULT_SIGMAS[0]), point.seed)
            .map_err(|e| config_error("collection.sigma", e))?,
        CollectionKind::Line => layer_cubes(scale, c.layer.unwrap_or(cells / 2)).map_err(|e| config_error("collection.layer", e))?,
        CollectionKind::Graph => graph_cubes(scale)?,
        CollectionKind::Explicit => {
            let list = c.cells.as_ref().expect("validated");
            let cubes = list.iter().map(|cell| DyadicCube::from_cell(scale, cell)).collect::<Result<Vec<_>, _>>().map_err(|e| config_error("collection.cells", e))?;
            CubeCollection::new(*scale, cubes)?
        }
    };
    Ok(cubes)
}

/// `(prod ||f_i||_2)^{1/k}`.
fn norm_product(profiles: &[&Profile]) -> f64 {
    profiles.iter().map(|p| p.l2_norm()).product::<f64>().powf(1.0 / profiles.len() as f64)
}

fn normalized(lhs: f64, norm: f64) -> f64 {
    if norm > 0.0 {
        lhs / norm
    } else {
        0.0
    }
}

fn run_point(cfg: &ExperimentConfig, point: &RunPoint) -> Result<RunRecord, CliError> {
    let e = &cfg.experiment;
    let kind = e.kind;
    let scale = ScaleConfig::new(e.n, point.r, e.eps)?;
    let grid = ProfileGrid::standard(e.n, point.r)?;
    let supports = cfg.supports()?;
    let cubes = if kind.uses_collection() { Some(collection_for(cfg, &scale, point)?) } else { None };
    let centers: Vec<[f64; MAX_DIM]> = cubes.as_ref().map(|c| c.iter().map(|q| q.center()).collect()).unwrap_or_default();
    let profile_kind = cfg.profile_kind();
    let mut profiles = Vec::with_capacity(supports.len());
    for (i, support) in supports.iter().enumerate() {
        profiles.push(profile_for(cfg, profile_kind, grid, support.clone(), &centers, substream(point.seed, i as u64 + 1))?);
    }
    let p = critical_exponent(e.n);
    let function_data = |with_classes: bool, exponent: f64| -> Result<Vec<FunctionData>, CliError> {
        let region = cubes.clone().expect("collection");
        profiles
            .iter()
            .map(|f| {
                let d = if with_classes {
                    FunctionData::new(f.clone(), region.clone(), exponent, e.step)
                } else {
                    FunctionData::field_only(f.clone(), region.clone(), exponent, e.step)
                };
                d.map_err(CliError::from)
            })
            .collect()
    };
    let refs: Vec<&Profile> = profiles.iter().collect();
    let (report, fitted) = match kind {
        ExperimentKind::Decompose => {
            let f = &profiles[0];
            let packets = decompose(f, DEFAULT_WINDOW_FACTOR)?;
            let classes = weight_classes(&packets, default_floor_exponent(e.n))?;
            let total = (packets.coefficient_energy() + packets.residual * packets.residual).sqrt();
            let mut report = EstimateReport::new("decompose", &scale, 2.0, total, f.l2_norm());
            report.cubes = packets.len();
            let defect = packets.parseval_defect();
            report.check("parseval", defect <= 1e-9, format!("relative defect {defect:.3e}"));
            report.extra("packets", packets.len() as f64);
            report.extra("residual", packets.residual);
            report.extra("parseval_defect", defect);
            report.extra("weight_classes", classes.len() as f64);
            report.extra("dropped_mass", classes.dropped_mass);
            let ratio = report.ratio;
            (report, ratio)
        }
        ExperimentKind::Select => {
            let data = function_data(true, p)?;
            let cubes = cubes.as_ref().expect("collection");
            let sel = select_multilinear(&data, cubes, e.eps)?;
            let a = &sel.audit;
            let loss = (a.max_classes as f64).powi(e.n as i32) * (a.max_levels as f64).powi(e.n as i32);
            let mut report = EstimateReport::new("select", &scale, p, sel.core.len() as f64, a.kept as f64 / loss);
            report.cubes = cubes.len();
            report.multiplicities = sel.multiplicities.clone();
            report.check("pigeonhole guarantee", a.guarantee_holds, format!("|core| = {}, kept = {}, J = {}, L = {}", sel.core.len(), a.kept, a.max_classes, a.max_levels));
            for stage in &a.stages {
                report.check(&format!("pigeonhole: {}", stage.stage), stage.holds(), format!("{} of {} in {} buckets", stage.chosen, stage.input, stage.buckets));
            }
            report.extra("selected", sel.selected.len() as f64);
            report.extra("pruned", sel.pruned.len() as f64);
            report.extra("kept", a.kept as f64);
            let ratio = report.ratio;
            (report, ratio)
        }
        ExperimentKind::Classical => {
            let report = verify_classical(&profiles[0], &scale, e.step)?;
            let ratio = report.ratio;
            (report, ratio)
        }
        ExperimentKind::RefinedDecoupling => {
            let data = function_data(false, e.exponent.unwrap_or(p))?;
            let report = verify_refined_decoupling(&data[0], cubes.as_ref().expect("collection"))?;
            let ratio = report.ratio;
            (report, ratio)
        }
        ExperimentKind::Kakeya => {
            let families = supports
                .iter()
                .enumerate()
                .map(|(i, s)| random_tube_family(&scale, &s[0], e.tubes, substream(point.seed, 100 + i as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            let (uniform, levels) = uniform_incidence_cubes(&families, cubes.as_ref().expect("collection"), 0.0)?;
            let report = verify_kakeya(&families, &uniform, &levels, 0.0)?;
            let ratio = report.ratio;
            (report, ratio)
        }
        ExperimentKind::Multilinear => {
            let data = function_data(true, p)?;
            let (report, _) = verify_multilinear_refined(&data, cubes.as_ref().expect("collection"))?;
            let value = normalized(report.lhs, norm_product(&refs));
            (report, value)
        }
        ExperimentKind::Corollary => {
            let data = function_data(false, p)?;
            let report = verify_corollary(&data, cubes.as_ref().expect("collection"))?;
            let value = normalized(report.lhs, norm_product(&refs));
            (report, value)
        }
        ExperimentKind::Saturated => {
            let data = function_data(false, p)?;
            let report = verify_saturated_decoupling(&data, cubes.as_ref().expect("collection"), e.saturation)?;
            let ratio = report.ratio;
            (report, ratio)
        }
        ExperimentKind::Linear => {
            let data = function_data(true, p)?;
            let (report, _) = verify_linear_refined(&data[0], cubes.as_ref().expect("collection"), cfg.rows_per_slab())?;
            let value = normalized(report.lhs, norm_product(&refs));
            (report, value)
        }
        ExperimentKind::Carleson => {
            let profiles = if cfg.profile.focus.is_none() && profile_kind == ProfileKind::Bump {
                let focus = [point.r as f64 / 2.0 + 0.5, point.r as f64 / 2.0 + 0.5, 0.0];
                supports.iter().map(|s| Profile::bump(grid, s.clone(), Some(focus))).collect::<Result<Vec<_>, _>>()?
            } else {
                profiles.clone()
            };
            let layout = cfg.collection.layout.unwrap_or(SquareLayout::HorizontalLine);
            let squares = CarlesonConfig::new(point.r, layout, point.seed)?;
            let report = verify_carleson(&profiles[0], &profiles[1], &squares, e.step)?;
            let value = normalized(report.lhs, norm_product(&[&profiles[0], &profiles[1]]));
            (report, value)
        }
    };
    Ok(RunRecord { report: report.with_seed(point.seed), fitted })
}

/// Swept variable and fitted quantity of a scan.
fn fit_axis(cfg: &ExperimentConfig) -> (&'static str, &'static str) {
    let kind = cfg.experiment.kind;
    let variable = match kind {
        ExperimentKind::Linear if cfg.collection_kind() == CollectionKind::Slab => "sigma",
        k if k.uses_cube_counts() && cfg.collection_kind() == CollectionKind::Random && cfg.counts().len() > 1 => "N",
        _ => "R",
    };
    let quantity = match kind {
        ExperimentKind::Multilinear | ExperimentKind::Corollary | ExperimentKind::Linear | ExperimentKind::Carleson => "lhs",
        _ => "ratio",
    };
    (quantity, variable)
}

/// Runs every sweep point of `cfg`, in parallel, in sorted order.
pub fn run(cfg: &ExperimentConfig) -> Result<BatchResult, CliError> {
    cfg.validate()?;
    let points = cfg.points();
    let execute = || points.par_iter().map(|pt| run_point(cfg, pt)).collect::<Result<Vec<_>, _>>();
    let runs = match cfg.output.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| config_error("output.threads", e))?
            .install(execute)?,
        None => execute()?,
    };
    let (fit, fit_label) = if cfg.experiment.scan {
        let (quantity, variable) = fit_axis(cfg);
        let data: Vec<(f64, f64)> = runs
            .iter()
            .map(|run| {
                let x = match variable {
                    "sigma" => run.report.sigma.unwrap_or(0) as f64,
                    "N" => run.report.cubes as f64,
                    _ => run.report.r as f64,
                };
                (x, run.fitted)
            })
            .collect();
        let fit = fit_exponent(&data).map_err(|e| CliError::Config(format!("scan needs at least three positive points with two distinct scales: {e}")))?;
        (Some(fit), Some(format!("fit:{quantity}:{variable}")))
    } else {
        (None, None)
    };
    Ok(BatchResult { config_hash: cfg.hash(), config: cfg.clone(), runs, fit, fit_label })
}

/// Command-line interface.
#[derive(Debug, Parser)]
#[command(name = "extlab", version, about = "Wave-packet experiments for the paraboloid extension operator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate one estimate on every sweep point.
    Verify {
        kind: EstimateKind,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Evaluate an estimate over a sweep and fit its exponent.
    Scan {
        kind: EstimateKind,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Wave packet decomposition and weight classes of a profile.
    Decompose {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Multilinear pigeonhole selection on a cube collection.
    Select {
        #[command(flatten)]
        args: RunArgs,
    },
}

/// Flags shared by every subcommand; each overrides the matching file key.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Scales, comma separated.
    #[arg(long = "R", value_delimiter = ',')]
    pub r: Option<Vec<u32>>,
    /// Cube counts, comma separated.
    #[arg(long = "N", value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    /// Cubes per slab, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Option<Vec<usize>>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Spatial lattice spacing.
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub exponent: Option<f64>,
    #[arg(long)]
    pub profile: Option<ProfileKind>,
    #[arg(long)]
    pub collection: Option<CollectionKind>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base name of the report files.
    #[arg(long)]
    pub name: Option<String>,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
}

impl RunArgs {
    /// Configuration from the file, if any, with the flags applied.
    pub fn resolve(&self, kind: ExperimentKind, scan: bool) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::new(kind),
        };
        let e = &mut cfg.experiment;
        e.kind = kind;
        e.scan = scan || e.scan;
        macro_rules! apply {
            ($($flag:ident => $target:expr),* $(,)?) => {$(if let Some(v) = &self.$flag { $target = v.clone().into(); })*};
        }
        apply!(n => e.n, r => e.r, eps => e.eps, seed => e.seed, seeds => e.seeds, step => e.step);
        if let Some(p) = self.exponent {
            e.exponent = Some(p);
        }
        apply!(counts => cfg.collection.counts, sigma => cfg.collection.sigma, profile => cfg.profile.tag, collection => cfg.collection.kind);
        apply!(out => cfg.output.dir, name => cfg.output.name, threads => cfg.output.threads);
        Ok(cfg)
    }
}

fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Writes `<name>.csv` and `<name>.json`, returning their paths.
pub fn write_reports(result: &BatchResult, command: &str, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| config_error("output.dir", format!("{}: {e}", dir.display())))?;
    let name = result.config.output.name.clone().unwrap_or_else(|| result.config.experiment.kind.label().to_string());
    let csv = dir.join(format!("{name}.csv"));
    let json = dir.join(format!("{name}.json"));
    std::fs::write(&csv, result.csv(command)).map_err(|e| config_error("output.dir", format!("{}: {e}", csv.display())))?;
    std::fs::write(&json, result.json()).map_err(|e| config_error("output.dir", format!("{}: {e}", json.display())))?;
    Ok((csv, json))
}

/// Parses, runs and reports; returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let (command, kind, scan, args) = match &cli.command {
        Command::Verify { kind, args } => (format!("verify {}", ExperimentKind::from(*kind).label()), ExperimentKind::from(*kind), false, args),
        Command::Scan { kind, args } => (format!("scan {}", ExperimentKind::from(*kind).label()), ExperimentKind::from(*kind), true, args),
        Command::Decompose { args } => ("decompose".to_string(), ExperimentKind::Decompose, false, args),
        Command::Select { args } => ("select".to_string(), ExperimentKind::Select, false, args),
    };
    let outcome = args.resolve(kind, scan).and_then(|cfg| {
        let result = run(&cfg)?;
        let (csv, json) = write_reports(&result, &command, &output_dir(&cfg))?;
        Ok((result, csv, json))
    });
    match outcome {
        Ok((result, csv, json)) => {
            eprintln!("wrote {} and {}", csv.display(), json.display());
            if let (Some(fit), Some(label)) = (&result.fit, &result.fit_label) {
                eprintln!("{label}: slope {:.4} +- {:.4} over {} points", fit.slope, fit.stderr, fit.points);
            }
            let failures = result.failures();
            if failures.is_empty() {
                0
            } else {
                for f in &failures {
                    eprintln!("invariant failed: {f}");
                }
                2
            }
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_scalar_scales() {
        let cfg = ExperimentConfig::from_toml(
            "[experiment]\nkind = \"multilinear\"\nR = 1024\nseeds = 3\n[collection]\nN = [16, 64]\n[profile]\ntag = \"focused\"\nsupports = [[{ lo = [-1.0], hi = [-0.25] }], [{ lo = [0.25], hi = [1.0] }]]\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.r, vec![1024]);
        assert_eq!(cfg.collection.counts, Some(vec![16, 64]));
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.points().len(), 6);
    }

    #[test]
    fn hash_ignores_the_output_section() {
        let mut a = ExperimentConfig::new(ExperimentKind::Classical);
        let h = a.hash();
        a.output.dir = Some(PathBuf::from("/tmp/elsewhere"));
        assert_eq!(a.hash(), h);
        a.experiment.seed = 1;
        assert_ne!(a.hash(), h);
        assert_eq!(h.len(), 64);
    }

    #[test]
    fn diagnostics_name_the_field() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Classical);
        cfg.experiment.r = vec![100];
        let e = cfg.validate().unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("experiment.R") && e.to_string().contains("100"));
        let mut cfg = ExperimentConfig::new(ExperimentKind::Multilinear);
        cfg.profile.supports = Some(vec![vec![BoxSpec { lo: vec![-1.0], hi: vec![0.0] }]]);
        assert!(cfg.validate().unwrap_err().to_string().contains("profile.supports"));
        assert!(ExperimentConfig::from_toml("[experiment]\nkind = \"classical\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn classical_run_reports_the_critical_exponent() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Classical);
        cfg.experiment.r = vec![64];
        cfg.experiment.seed = 7;
        let result = run(&cfg).unwrap();
        assert_eq!(result.runs.len(), 1);
        let row = &result.runs[0].report;
        assert_eq!(row.p, 6.0);
        assert!(row.ratio > 0.0);
        let csv = result.csv("verify classical");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[2], CSV_HEADER);
        assert!(lines[3].starts_with("classical,2,64,6,"));
    }

    #[test]
    fn flags_override_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[experiment]\nkind = \"classical\"\nn = 2\nR = [64, 256]\nseed = 3\n").unwrap();
        let args = RunArgs { config: Some(path), r: Some(vec![1024]), seeds: Some(2), ..Default::default() };
        let cfg = args.resolve(ExperimentKind::Classical, true).unwrap();
        assert_eq!(cfg.experiment.r, vec![1024]);
        assert_eq!(cfg.experiment.seed, 3);
        assert_eq!(cfg.experiment.seeds, 2);
        assert!(cfg.experiment.scan);
    }
}
