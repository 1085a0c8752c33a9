//! Both sides of each estimate, their ratios, audits and exponent fits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ensemble::CarlesonConfig;
use crate::error::{invalid, Error, Result};
use crate::extension::{cube_power_sums, FreqBox, Profile, SliceEngine};
use crate::geometry::{
    almost_horizontal_partition, direction_of_cap, incidence_counts, incidence_counts_brute, transversality_volume,
    CubeCollection, ScaleConfig, Tube, MAX_DIM, TRANSVERSALITY_THRESHOLD,
};
use crate::selection::{
    essentially_constant_restrict, incidence_level, level_floor, select_linear, select_multilinear, FunctionData,
    LinearSelection, SelectionResult,
};
use crate::wavepacket::PacketNorms;

/// Critical exponent `2(n+1)/(n-1)`.
pub fn critical_exponent(n: usize) -> f64 {
    2.0 * (n as f64 + 1.0) / (n as f64 - 1.0)
}

/// Exponent `(n-1)/(n(n+1))` of the multilinear gain.
pub fn multilinear_gain(n: usize) -> f64 {
    (n as f64 - 1.0) / (n as f64 * (n as f64 + 1.0))
}

/// Least-squares line through `(log scale, log value)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; zero for an exact fit or two points.
    pub stderr: f64,
    pub points: usize,
}

fn least_squares(points: &[(f64, f64)]) -> Result<Fit> {
    if points.iter().any(|&(s, v)| !(s > 0.0) || !(v > 0.0) || !s.is_finite() || !v.is_finite()) {
        return Err(Error::DegenerateFit("scales and values must be positive and finite".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(s, v)| (s.ln(), v.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-24 * (1.0 + mx * mx) {
        return Err(Error::DegenerateFit("all scales coincide".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if logs.len() > 2 {
        let rss: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
        (rss / (k - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(Fit { slope, intercept, stderr, points: logs.len() })
}

/// Fit of `log value` against `log scale` over at least three points with
/// at least two distinct scales.
pub fn fit_exponent(points: &[(f64, f64)]) -> Result<Fit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} points, at least 3 required", points.len())));
    }
    least_squares(points)
}

/// Slope between two scales from the geometric means of the values at each.
pub fn two_scale_slope(points: &[(f64, f64)]) -> Result<Fit> {
    let mut by_scale: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &(s, v) in points {
        if !(v > 0.0) {
            return Err(Error::DegenerateFit("values must be positive".into()));
        }
        by_scale.entry(s.to_bits()).or_default().push(v.ln());
    }
    if by_scale.len() != 2 {
        return Err(Error::DegenerateFit(format!("{} distinct scales, exactly 2 required", by_scale.len())));
    }
    let means: Vec<(f64, f64)> =
        by_scale.iter().map(|(s, logs)| (f64::from_bits(*s), (logs.iter().sum::<f64>() / logs.len() as f64).exp())).collect();
    let mut fit = least_squares(&means)?;
    fit.points = points.len();
    Ok(fit)
}

/// Named pass/fail audit attached to a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

/// Both sides of one estimate on one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: String,
    pub n: usize,
    pub r: u32,
    pub p: f64,
    /// Number of cubes the estimate is stated for.
    pub cubes: usize,
    pub sigma: Option<usize>,
    pub multiplicities: Vec<u32>,
    pub eps: f64,
    pub seed: u64,
    pub lhs: f64,
    pub rhs_core: f64,
    pub ratio: f64,
    pub fit: Option<Fit>,
    pub checks: Vec<Check>,
    pub extras: BTreeMap<String, f64>,
}

impl EstimateReport {
    pub fn new(name: &str, cfg: &ScaleConfig, p: f64, lhs: f64, rhs_core: f64) -> Self {
        let ratio = if rhs_core > 0.0 {
            lhs / rhs_core
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        Self {
            name: name.to_string(),
            n: cfg.n,
            r: cfg.r,
            p,
            cubes: 0,
            sigma: None,
            multiplicities: Vec::new(),
            eps: cfg.eps,
            seed: 0,
            lhs,
            rhs_core,
            ratio,
            fit: None,
            checks: Vec::new(),
            extras: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&mut self, name: &str, holds: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.to_string(), holds, detail: detail.into() });
    }

    pub fn extra(&mut self, name: &str, value: f64) {
        self.extras.insert(name.to_string(), value);
    }

    /// Whether every audit of the report holds.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.holds).collect()
    }
}

fn product_root(values: impl Iterator<Item = f64>, root: f64) -> f64 {
    values.product::<f64>().powf(1.0 / root)
}

/// Largest over smallest of positive values.
fn spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(0.0, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// `||Ef||_{L^p([0, R]^n)}` against `||f||_2`.
pub fn verify_classical(profile: &Profile, cfg: &ScaleConfig, step: f64) -> Result<EstimateReport> {
    let p = critical_exponent(cfg.n);
    let full = CubeCollection::full(*cfg);
    let sums = cube_power_sums(profile, &full, step, &[p])?;
    let lhs = sums[0].iter().sum::<f64>().powf(1.0 / p);
    let mut report = EstimateReport::new("classical", cfg, p, lhs, profile.l2_norm());
    report.cubes = full.len();
    Ok(report)
}

/// `sum_T ||F_T||_p^p` over every packet, with `||F_T||_p` taken over the
/// `10 R^eps` fattening of its tube inside `[0, R]^n`.
pub fn packet_power_sum(data: &FunctionData, eps: f64) -> Result<f64> {
    let p = data.exponent;
    let fat_multiple = 10.0 * (data.packets.grid.r as f64).powf(eps);
    let table = PacketNorms::new(data.packets.grid, data.step, p, fat_multiple)?;
    Ok(data.packets.packets.iter().map(|pk| table.packet_norm(pk).powf(p)).sum())
}

/// `||Ef||_{L^p(union of cubes)}` against `M^{1/2-1/p} (sum_T ||F_T||_p^p)^{1/p}`
/// after restricting to cubes of uniform fat-tube incidence, with `M` the
/// largest incidence count.
pub fn verify_refined_decoupling(data: &FunctionData, cubes: &CubeCollection) -> Result<EstimateReport> {
    let sum = packet_power_sum(data, cubes.config().eps)?;
    verify_refined_decoupling_with(data, cubes, sum)
}

/// [`verify_refined_decoupling`] with a precomputed [`packet_power_sum`].
pub fn verify_refined_decoupling_with(data: &FunctionData, cubes: &CubeCollection, packet_sum: f64) -> Result<EstimateReport> {
    let cfg = *cubes.config();
    let p = data.exponent;
    let tubes: Vec<Tube> = data.packets.tubes();
    let counts = incidence_counts(&tubes, cubes, cfg.eps);
    let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let restricted = essentially_constant_restrict(cubes, &values)?;
    let kept = &restricted.cubes;
    let kept_counts: Vec<u32> = kept.iter().map(|q| counts[cubes.position(q).expect("subset")]).collect();
    let m = *kept_counts.iter().max().expect("nonempty restriction");
    let min = *kept_counts.iter().min().expect("nonempty restriction");
    let lhs = data.norm_on_union(kept)?;
    let rhs = (m as f64).powf(0.5 - 1.0 / p) * packet_sum.powf(1.0 / p);
    let mut report = EstimateReport::new("refined_decoupling", &cfg, p, lhs, rhs);
    report.cubes = kept.len();
    report.multiplicities = vec![m];
    report.check("incidence uniformity", m <= 2 * min.max(1), format!("counts in [{min}, {m}]"));
    report.check("nonzero incidence", min >= 1, format!("smallest count {min}"));
    report.extra("input_cubes", cubes.len() as f64);
    report.extra("packets", tubes.len() as f64);
    Ok(report)
}

/// Smallest transversality volume over one direction from each family.
pub fn family_transversality(families: &[Vec<Tube>], n: usize) -> Result<f64> {
    let dirs: Vec<Vec<[f64; MAX_DIM]>> = families
        .iter()
        .map(|f| {
            let mut caps: Vec<[u64; 2]> = f.iter().map(|t| [t.cap_center[0].to_bits(), t.cap_center[1].to_bits()]).collect();
            caps.sort_unstable();
            caps.dedup();
            caps.iter().map(|c| direction_of_cap(&[f64::from_bits(c[0]), f64::from_bits(c[1])][..n - 1])).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut worst = f64::INFINITY;
    let mut choice = vec![0usize; n];
    loop {
        let pick: Vec<[f64; MAX_DIM]> = (0..n).map(|i| dirs[i][choice[i]]).collect();
        worst = worst.min(transversality_volume(&pick, n)?);
        let mut axis = 0;
        while axis < n {
            choice[axis] += 1;
            if choice[axis] < dirs[axis].len() {
                break;
            }
            choice[axis] = 0;
            axis += 1;
        }
        if axis == n {
            return Ok(worst);
        }
    }
}

/// Majority bucket of joint incidence levels among the cubes met by every
/// family, with the lower level ends `M_i`.
pub fn uniform_incidence_cubes(families: &[Vec<Tube>], candidates: &CubeCollection, eps: f64) -> Result<(CubeCollection, Vec<u32>)> {
    let counts: Vec<Vec<u32>> = families.iter().map(|f| incidence_counts(f, candidates, eps)).collect();
    let mut buckets: BTreeMap<Vec<u32>, Vec<usize>> = BTreeMap::new();
    for pos in 0..candidates.len() {
        let levels: Vec<u32> = counts.iter().map(|c| incidence_level(c[pos])).collect();
        if levels.iter().all(|&l| l > 0) {
            buckets.entry(levels).or_default().push(pos);
        }
    }
    let mut best: Option<(Vec<u32>, Vec<usize>)> = None;
    for (levels, members) in buckets {
        if best.as_ref().is_none_or(|b| members.len() > b.1.len()) {
            best = Some((levels, members));
        }
    }
    let (levels, members) = best.ok_or(Error::Empty("cubes met by every family"))?;
    Ok((candidates.select(members), levels.iter().map(|&l| level_floor(l)).collect()))
}

/// `|Q|` against `(prod |T_i| / prod M_i)^{1/(n-1)}`, with every incidence
/// count recomputed by brute force.
pub fn verify_kakeya(families: &[Vec<Tube>], cubes: &CubeCollection, multiplicities: &[u32], eps: f64) -> Result<EstimateReport> {
    let cfg = *cubes.config();
    let n = cfg.n;
    if families.len() != n || multiplicities.len() != n {
        return Err(invalid("families", format!("expected {n} families and levels")));
    }
    if cubes.is_empty() || families.iter().any(|f| f.is_empty()) {
        return Err(Error::Empty("tube family or cube collection"));
    }
    let volume = family_transversality(families, n)?;
    if volume < TRANSVERSALITY_THRESHOLD {
        return Err(Error::NotTransverse { volume, threshold: TRANSVERSALITY_THRESHOLD });
    }
    for (i, family) in families.iter().enumerate() {
        let fast = incidence_counts(family, cubes, eps);
        let brute = incidence_counts_brute(family, cubes, eps);
        if fast != brute {
            return Err(Error::Invariant(format!("grid-index counts of family {i} differ from brute force")));
        }
        let m = multiplicities[i];
        if m == 0 || brute.iter().any(|&c| c < m || c >= 2 * m) {
            return Err(Error::Invariant(format!("family {i}: counts leave [{m}, {})", 2 * m)));
        }
    }
    let tubes = product_root(families.iter().map(|f| f.len() as f64), 1.0);
    let levels = product_root(multiplicities.iter().map(|&m| m as f64), 1.0);
    let rhs = (tubes / levels).powf(1.0 / (n as f64 - 1.0));
    let mut report = EstimateReport::new("kakeya", &cfg, critical_exponent(n), cubes.len() as f64, rhs);
    report.cubes = cubes.len();
    report.multiplicities = multiplicities.to_vec();
    report.eps = eps;
    report.extra("transversality", volume);
    Ok(report)
}

/// Constant of the displayed intermediate bound: `lhs` over
/// `R^{(n-1)/4} (prod M_i)^{1/(n(n+1))} (prod w_i)^{1/n} (prod |T_i|)^{(n-1)/(2n(n+1))}`.
fn chain_constant(lhs: f64, cfg: &ScaleConfig, selection: &SelectionResult) -> f64 {
    let n = cfg.n as f64;
    let ms = product_root(selection.multiplicities.iter().map(|&m| m as f64), n * (n + 1.0));
    let ws = product_root(selection.class_weights.iter().cloned(), n);
    let ts = product_root(selection.classes.iter().map(|c| c.len() as f64), 2.0 * n * (n + 1.0) / (n - 1.0));
    lhs / (cfg.scale().powf((n - 1.0) / 4.0) * ms * ws * ts)
}

fn selection_checks(report: &mut EstimateReport, selection: &SelectionResult) {
    let audit = &selection.audit;
    for stage in &audit.stages {
        report.check(&format!("pigeonhole: {}", stage.stage), stage.holds(), format!("{} of {} in {} buckets", stage.chosen, stage.input, stage.buckets));
    }
    report.check(
        "selection guarantee",
        audit.guarantee_holds,
        format!("|core| = {}, kept = {}, J = {}, L = {}", selection.core.len(), audit.kept, audit.max_classes, audit.max_levels),
    );
    let uniform = selection.counts.iter().all(|c| c.iter().zip(&selection.multiplicities).all(|(&k, &m)| k >= m && k < 2 * m.max(1)));
    report.check("incidence levels", uniform, format!("M = {:?}", selection.multiplicities));
    report.check("class selection", audit.class_slack <= 1.0, format!("worst slack {:.4}", audit.class_slack));
}

/// `(prod ||Ef_i||_{L^p(S)})^{1/n}` over the selected cubes `S` against
/// `N^{-(n-1)/(n(n+1))} (prod ||f_i||_2)^{1/n}`.
pub fn verify_multilinear_refined(data: &[FunctionData], cubes: &CubeCollection) -> Result<(EstimateReport, SelectionResult)> {
    let cfg = *cubes.config();
    let n = cfg.n as f64;
    let p = critical_exponent(cfg.n);
    let selection = select_multilinear(data, cubes, cfg.eps)?;
    let norms: Vec<f64> = data.iter().map(|d| d.norm_on_union(&selection.selected)).collect::<Result<_>>()?;
    let lhs = product_root(norms.iter().cloned(), n);
    let rhs = (cubes.len() as f64).powf(-multilinear_gain(cfg.n)) * product_root(data.iter().map(|d| d.profile_norm()), n);
    let mut report = EstimateReport::new("multilinear", &cfg, p, lhs, rhs);
    report.cubes = cubes.len();
    report.multiplicities = selection.multiplicities.clone();
    selection_checks(&mut report, &selection);
    let core_norms: Vec<f64> = data.iter().map(|d| d.norm_on_union(&selection.core)).collect::<Result<_>>()?;
    let core_lhs = product_root(core_norms.into_iter(), n);
    if selection.multiplicities.iter().all(|&m| m > 0) {
        report.extra("chain_constant", chain_constant(core_lhs, &cfg, &selection));
        let tubes = product_root(selection.classes.iter().map(|c| c.len() as f64), 1.0);
        let levels = product_root(selection.multiplicities.iter().map(|&m| m as f64), 1.0);
        report.extra("kakeya_constant", selection.core.len() as f64 / (tubes / levels).powf(1.0 / (n - 1.0)));
    }
    report.extra("selected", selection.selected.len() as f64);
    report.extra("core", selection.core.len() as f64);
    Ok((report, selection))
}

/// The multilinear comparison on the intersection of the per-function
/// essentially constant restrictions, with its own cube count.
pub fn verify_corollary(data: &[FunctionData], cubes: &CubeCollection) -> Result<EstimateReport> {
    let cfg = *cubes.config();
    let n = cfg.n as f64;
    let mut kept = cubes.clone();
    for d in data {
        let values: Vec<f64> = cubes.iter().map(|q| d.norm_on(q)).collect::<Result<_>>()?;
        kept = kept.intersection(&essentially_constant_restrict(cubes, &values)?.cubes);
    }
    if kept.is_empty() {
        return Err(Error::Empty("cubes after the essentially constant restriction"));
    }
    let mut report = {
        let norms: Vec<f64> = data.iter().map(|d| d.norm_on_union(&kept)).collect::<Result<_>>()?;
        let lhs = product_root(norms.into_iter(), n);
        let rhs = (kept.len() as f64).powf(-multilinear_gain(cfg.n)) * product_root(data.iter().map(|d| d.profile_norm()), n);
        EstimateReport::new("corollary", &cfg, critical_exponent(cfg.n), lhs, rhs)
    };
    report.cubes = kept.len();
    for (i, d) in data.iter().enumerate() {
        let values: Vec<f64> = kept.iter().map(|q| d.norm_on(q)).collect::<Result<_>>()?;
        report.check(&format!("essentially constant {i}"), spread(&values) <= 2.0, format!("spread {:.4}", spread(&values)));
    }
    report.extra("input_cubes", cubes.len() as f64);
    Ok(report)
}

/// Saturated multilinear decoupling: `(prod ||Ef_i||_{L^p(S)})^{1/n}` against
/// `(prod M_i^{1/2-1/p})^{1/n} (prod sum_T ||F_T||_p^p)^{1/(np)}` on the
/// essentially constant restriction, for functions whose packets form one
/// weight class.  `saturation` is the tolerance constant of the saturation
/// condition, whose failure is reported as a failed check.
pub fn verify_saturated_decoupling(data: &[FunctionData], cubes: &CubeCollection, saturation: f64) -> Result<EstimateReport> {
    let cfg = *cubes.config();
    let n = cfg.n;
    let nf = n as f64;
    let p = critical_exponent(n);
    if let Some(i) = data.iter().position(|d| d.classes.len() != 1) {
        return Err(invalid("profiles", format!("function {i} has {} weight classes, one is required", data[i].classes.len())));
    }
    let mut kept = cubes.clone();
    for d in data {
        let values: Vec<f64> = cubes.iter().map(|q| d.norm_on(q)).collect::<Result<_>>()?;
        kept = kept.intersection(&essentially_constant_restrict(cubes, &values)?.cubes);
    }
    if kept.is_empty() {
        return Err(Error::Empty("cubes after the essentially constant restriction"));
    }
    let families: Vec<Vec<Tube>> = data.iter().map(|d| d.packets.tubes()).collect();
    let counts: Vec<Vec<u32>> = families.iter().map(|f| incidence_counts(f, &kept, cfg.eps)).collect();
    let ms: Vec<u32> = counts.iter().map(|c| *c.iter().max().expect("nonempty")).collect();
    let mins: Vec<u32> = counts.iter().map(|c| *c.iter().min().expect("nonempty")).collect();
    let mut sums = Vec::with_capacity(n);
    let mut scale = Vec::with_capacity(n);
    for d in data {
        let w = d.classes.top_normalization();
        scale.push(w);
        sums.push(w.powf(p) * packet_power_sum(d, cfg.eps)?);
    }
    let norms: Vec<f64> = data.iter().zip(&scale).map(|(d, w)| d.norm_on_union(&kept).map(|v| v * w)).collect::<Result<_>>()?;
    let lhs = product_root(norms.into_iter(), nf);
    let rhs = product_root(ms.iter().map(|&m| (m as f64).powf(0.5 - 1.0 / p)), nf) * product_root(sums.into_iter(), nf * p);
    let mut report = EstimateReport::new("saturated", &cfg, p, lhs, rhs);
    report.cubes = kept.len();
    report.multiplicities = ms.clone();
    let tubes = product_root(families.iter().map(|f| f.len() as f64), 1.0);
    let levels = product_root(ms.iter().map(|&m| m.max(1) as f64), 1.0);
    let saturation_lhs = (tubes / levels).powf(1.0 / (nf - 1.0));
    report.check(
        "saturation",
        saturation_lhs <= saturation * kept.len() as f64,
        format!("{saturation_lhs:.4} against {saturation} x {} cubes", kept.len()),
    );
    let uniform = ms.iter().zip(&mins).all(|(&m, &lo)| lo >= 1 && m <= 2 * lo);
    report.check("incidence uniformity", uniform, format!("max {ms:?}, min {mins:?}"));
    for (i, d) in data.iter().enumerate() {
        let values: Vec<f64> = kept.iter().map(|q| d.norm_on(q)).collect::<Result<_>>()?;
        report.check(&format!("essentially constant {i}"), spread(&values) <= 2.0, format!("spread {:.4}", spread(&values)));
    }
    report.extra("saturation_ratio", saturation_lhs / kept.len() as f64);
    Ok(report)
}

/// `||Ef||_{L^p(union of cubes)}` against `sigma^{-1/(n+1)} ||f||_2` on the
/// essentially constant restriction, partitioned into slabs of
/// `rows_per_slab` layers, with the audit of the linear selection.
pub fn verify_linear_refined(data: &FunctionData, cubes: &CubeCollection, rows_per_slab: u32) -> Result<(EstimateReport, LinearSelection)> {
    let cfg = *cubes.config();
    let p = critical_exponent(cfg.n);
    let values: Vec<f64> = cubes.iter().map(|q| data.norm_on(q)).collect::<Result<_>>()?;
    let kept = essentially_constant_restrict(cubes, &values)?.cubes;
    let partition = almost_horizontal_partition(&kept, rows_per_slab)?;
    if partition.sigma == 0 {
        return Err(invalid("sigma", "no nonempty slab"));
    }
    let selection = select_linear(data, &kept, &partition, cfg.eps)?;
    let lhs = data.norm_on_union(&kept)?;
    let rhs = (partition.sigma as f64).powf(-1.0 / (cfg.n as f64 + 1.0)) * data.profile_norm();
    let mut report = EstimateReport::new("linear", &cfg, p, lhs, rhs);
    report.cubes = kept.len();
    report.sigma = Some(partition.sigma);
    report.multiplicities = vec![selection.multiplicity];
    let kept_values: Vec<f64> = kept.iter().map(|q| data.norm_on(q)).collect::<Result<_>>()?;
    report.check("essentially constant", spread(&kept_values) <= 2.0, format!("spread {:.4}", spread(&kept_values)));
    let audit = &selection.audit;
    report.check(
        "trivial incidence bound",
        audit.trivial_bound_holds,
        format!("M = {}, |Q*| = {}, D = {}, |T| = {}", selection.multiplicity, selection.qstar.len(), audit.slab_bound, audit.packet_count),
    );
    report.check("nonzero incidence", audit.min_count >= 1, format!("smallest count {}", audit.min_count));
    report.check("sigma pigeonhole", audit.sigma_bound_holds, format!("|Q*| = {}, buckets = {}", selection.qstar.len(), audit.bucket_total));
    for stage in &audit.stages {
        report.check(&format!("pigeonhole: {}", stage.stage), stage.holds(), format!("{} of {} in {} buckets", stage.chosen, stage.input, stage.buckets));
    }
    report.extra("input_cubes", cubes.len() as f64);
    report.extra("slabs", partition.slabs.len() as f64);
    Ok((report, selection))
}

/// Per-square integrals `int_omega |Ef_1| |Ef_2|` on the lattice of step `step`.
fn square_products(f1: &Profile, f2: &Profile, squares: &[[u32; 2]], step: f64) -> Result<Vec<f64>> {
    let e1 = SliceEngine::new(f1, step)?;
    let e2 = SliceEngine::new(f2, step)?;
    let q = (1.0 / e1.step()).round() as u32;
    let mut rows: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in squares.iter().enumerate() {
        for k in 0..q {
            rows.entry(s[1] * q + k).or_default().push(i);
        }
    }
    let slices: Vec<u32> = rows.keys().copied().collect();
    let extract = |engine: &SliceEngine, slices: &[u32]| {
        engine.map_slices(slices, |s, values| {
            let mut out = Vec::new();
            for &i in &rows[&s] {
                let x0 = (squares[i][0] * q) as usize;
                out.extend_from_slice(&values[x0..x0 + q as usize]);
            }
            out
        })
    };
    let a = extract(&e1, &slices);
    let b = extract(&e2, &slices);
    let area = e1.step() * e1.step();
    let mut totals = vec![0.0; squares.len()];
    for (row, slice) in slices.iter().enumerate() {
        for (g, &i) in rows[slice].iter().enumerate() {
            let base = g * q as usize;
            for k in 0..q as usize {
                totals[i] += a[row][base + k].norm() * b[row][base + k].norm() * area;
            }
        }
    }
    Ok(totals)
}

fn supports_disjoint(a: &[FreqBox], b: &[FreqBox]) -> bool {
    a.iter().all(|x| b.iter().all(|y| x.hi[0] <= y.lo[0] || y.hi[0] <= x.lo[0]))
}

/// `||(|Ef_1| |Ef_2|)^{1/2}||_{L^2(S)}` over the union `S` of the squares
/// against `R^{1/4} (||f_1||_2 ||f_2||_2)^{1/2}`, with the bookkeeping of the
/// covering cubes.
pub fn verify_carleson(f1: &Profile, f2: &Profile, squares: &CarlesonConfig, step: f64) -> Result<EstimateReport> {
    if f1.n() != 2 || f2.n() != 2 {
        return Err(invalid("n", "the square configuration needs n = 2"));
    }
    if !supports_disjoint(&f1.support, &f2.support) {
        return Err(invalid("supports", "the two profiles must be supported on disjoint intervals"));
    }
    squares.validate()?;
    let cfg = ScaleConfig::new(2, squares.r, 0.1)?;
    let totals = square_products(f1, f2, &squares.squares, step)?;
    let lhs = totals.iter().sum::<f64>().sqrt();
    let rhs = cfg.scale().powf(0.25) * (f1.l2_norm() * f2.l2_norm()).sqrt();
    let mut report = EstimateReport::new("carleson", &cfg, 2.0, lhs, rhs);
    report.cubes = squares.squares.len();

    let (cubes, per_cube) = squares.covering_cubes(&cfg)?;
    let s = cfg.sqrt_r();
    let mut cube_values = vec![0.0; cubes.len()];
    for (sq, v) in squares.squares.iter().zip(&totals) {
        let cube = crate::geometry::DyadicCube::from_cell(&cfg, &[sq[0] / s, sq[1] / s])?;
        cube_values[cubes.position(&cube).expect("covering cube")] += v;
    }
    let restricted = essentially_constant_restrict(&cubes, &cube_values)?;
    let lambdas: Vec<f64> = restricted.cubes.iter().map(|q| per_cube[cubes.position(q).expect("subset")] as f64).collect();
    let uniform = essentially_constant_restrict(&restricted.cubes, &lambdas)?;
    let family = &uniform.cubes;
    let count = family.len();
    let m: usize = family.iter().map(|q| per_cube[cubes.position(q).expect("subset")]).sum();
    let lambda = 2f64.powi(uniform.level);
    let ratio = m as f64 / count as f64;
    report.check("lambda uniformity", ratio >= lambda && ratio <= 4.0 * lambda, format!("M/N = {ratio:.3}, lambda = {lambda}"));
    let bookkeeping = count as f64 >= m as f64 * cfg.scale().powf(-0.5) / 4.0;
    report.check("bookkeeping", bookkeeping, format!("N = {count}, M = {m}"));
    report.extra("covering_cubes", cubes.len() as f64);
    report.extra("family_cubes", count as f64);
    report.extra("family_squares", m as f64);
    report.extra("lambda", lambda);
    report.extra("lambda_target", squares.lambda_target);
    Ok(report)
}
