//! Seeded generators of cube collections, profiles, tube families and
//! Carleson square configurations.

use std::collections::BTreeSet;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::extension::{cis_turns, focusing_phase, FreqBox, Profile, ProfileGrid, ProfileTag};
use crate::geometry::{CubeCollection, DyadicCube, ScaleConfig, Tube, MAX_DIM};
use crate::wavepacket::{cap_center, cap_partition, packet_profile, PacketSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The two separated intervals `[-1, -1/4]` and `[1/4, 1]`.
pub fn separated_intervals() -> [FreqBox; 2] {
    [FreqBox::interval(-1.0, -0.25).expect("valid interval"), FreqBox::interval(0.25, 1.0).expect("valid interval")]
}

/// Cube of `[0, R]^n` from its flat key, first axis fastest.
pub fn cube_from_key(cfg: &ScaleConfig, key: usize) -> DyadicCube {
    let s = cfg.cells_per_axis() as usize;
    let mut cell = [0u32; MAX_DIM];
    let mut rest = key;
    for c in cell.iter_mut().take(cfg.n) {
        *c = (rest % s) as u32;
        rest /= s;
    }
    DyadicCube::from_cell(cfg, &cell[..cfg.n]).expect("key inside the grid")
}

/// `count` distinct cubes drawn uniformly from the grid of `[0, R]^n`.
pub fn random_cubes(cfg: &ScaleConfig, count: usize, seed: u64) -> Result<CubeCollection> {
    let total = cfg.cube_count();
    if count == 0 || count > total {
        return Err(invalid("N", format!("{count} cubes requested from a grid of {total}")));
    }
    let keys = sample(&mut rng(seed), total, count);
    CubeCollection::new(*cfg, keys.into_iter().map(|k| cube_from_key(cfg, k)))
}

/// `slabs` distinct horizontal slabs of `rows_per_slab` layers, each holding
/// `per_slab` distinct random cubes.
pub fn slab_cubes(cfg: &ScaleConfig, slabs: usize, rows_per_slab: u32, per_slab: usize, seed: u64) -> Result<CubeCollection> {
    let cells = cfg.cells_per_axis();
    if rows_per_slab == 0 || cells % rows_per_slab != 0 {
        return Err(invalid("rows_per_slab", format!("{rows_per_slab} does not divide {cells} layers")));
    }
    let slab_count = (cells / rows_per_slab) as usize;
    let per_layer = cfg.cube_count() / cells as usize;
    let capacity = per_layer * rows_per_slab as usize;
    if slabs == 0 || slabs > slab_count || per_slab == 0 || per_slab > capacity {
        return Err(invalid("sigma", format!("{slabs} slabs of {per_slab} cubes do not fit in {slab_count} slabs of {capacity}")));
    }
    let mut g = rng(seed);
    let mut chosen: Vec<usize> = sample(&mut g, slab_count, slabs).into_vec();
    chosen.sort_unstable();
    let mut cubes = Vec::new();
    for slab in chosen {
        for k in sample(&mut g, capacity, per_slab) {
            cubes.push(cube_from_key(cfg, slab * capacity + k));
        }
    }
    CubeCollection::new(*cfg, cubes)
}

/// Every cube of one horizontal layer.
pub fn layer_cubes(cfg: &ScaleConfig, layer: u32) -> Result<CubeCollection> {
    let per_layer = cfg.cube_count() / cfg.cells_per_axis() as usize;
    let base = layer as usize * per_layer;
    if layer >= cfg.cells_per_axis() {
        return Err(invalid("layer", format!("{layer} is outside the grid")));
    }
    CubeCollection::new(*cfg, (base..base + per_layer).map(|k| cube_from_key(cfg, k)))
}

/// One cube per column of the grid, at the height of a sinusoidal graph of
/// slope at most 1/2 over the first axis around the middle layer.
pub fn graph_cubes(cfg: &ScaleConfig) -> Result<CubeCollection> {
    let cells = cfg.cells_per_axis();
    let per_layer = cfg.cube_count() / cells as usize;
    let mid = cells as f64 / 2.0;
    let amp = cells as f64 / (4.0 * std::f64::consts::PI);
    let cubes = (0..per_layer).map(|key| {
        let mut cube_key = key;
        let x = (key % cells as usize) as f64 + 0.5;
        let height = mid + amp * (2.0 * std::f64::consts::PI * x / cells as f64).sin();
        let layer = (height.floor().max(0.0) as usize).min(cells as usize - 1);
        cube_key += layer * per_layer;
        cube_from_key(cfg, cube_key)
    });
    CubeCollection::new(*cfg, cubes)
}

/// Nearest translate index of the cap centered at `xi` whose axis passes
/// through `point`.
pub fn shift_through(r: u32, xi: &[f64], point: &[f64; MAX_DIM], n: usize) -> [i64; MAX_DIM - 1] {
    let s = (r as f64).sqrt();
    let mut shift = [0i64; MAX_DIM - 1];
    for axis in 0..n - 1 {
        shift[axis] = ((-point[axis] - 2.0 * xi[axis] * point[n - 1]) / s).round() as i64;
    }
    shift
}

/// Normalized sum over `centers` of unit-coefficient packets, one per cap of
/// `support`, whose tubes pass through the center, with independent random
/// phases.  Packets sharing a cap and translate are merged.
pub fn packet_bush(grid: ProfileGrid, support: Vec<FreqBox>, centers: &[[f64; MAX_DIM]], seed: u64) -> Result<Profile> {
    if centers.is_empty() {
        return Err(invalid("centers", "at least one focus point is required"));
    }
    let n = grid.n;
    let caps: Vec<_> = cap_partition(n, grid.r)?.into_iter().filter(|c| support.iter().any(|b| b.contains(&c.center[..n - 1]))).collect();
    if caps.is_empty() {
        return Err(invalid("support", "contains no cap center"));
    }
    let mut seen = BTreeSet::new();
    let mut g = rng(seed);
    let mut specs = Vec::new();
    for center in centers {
        for cap in &caps {
            let shift = shift_through(grid.r, &cap.center, center, n);
            let phase = g.gen::<f64>();
            if seen.insert((cap.index, shift)) {
                specs.push(PacketSpec { cap: cap.index, shift, coeff: cis_turns(phase) });
            }
        }
    }
    let raw = packet_profile(grid, &specs)?;
    let mut profile = Profile::from_samples(grid, support, raw.samples)?.normalized()?;
    profile.tag = ProfileTag::Packets { count: specs.len() };
    Ok(profile)
}

/// Normalized superposition of smooth bumps on `support`, one focused at
/// each of `centers`, with independent random phases.
pub fn focused_sum(grid: ProfileGrid, support: Vec<FreqBox>, centers: &[[f64; MAX_DIM]], seed: u64) -> Result<Profile> {
    if centers.is_empty() {
        return Err(invalid("centers", "at least one focus point is required"));
    }
    let n = grid.n;
    let phases = random_phases(centers.len(), seed);
    let boxes = support.clone();
    let raw = Profile::tabulate(grid, support, ProfileTag::Custom, |xi| {
        let amp: f64 = boxes.iter().map(|b| b.bump(xi)).sum();
        let wave: Complex64 = centers.iter().zip(&phases).map(|(c, ph)| ph * focusing_phase(xi, c, n)).sum();
        wave * amp
    })?;
    raw.normalized()
}

/// Random family of `count` tubes with caps whose centers lie in `support`,
/// each passing through a uniform random point of `[0, R]^n`.
pub fn random_tube_family(cfg: &ScaleConfig, support: &FreqBox, count: usize, seed: u64) -> Result<Vec<Tube>> {
    let n = cfg.n;
    let caps: Vec<_> = cap_partition(n, cfg.r)?.into_iter().filter(|c| support.contains(&c.center[..n - 1])).collect();
    if caps.is_empty() {
        return Err(invalid("support", "contains no cap center"));
    }
    let mut g = rng(seed);
    (0..count)
        .map(|_| {
            let cap = caps[g.gen_range(0..caps.len())];
            let mut point = [0.0; MAX_DIM];
            for p in point.iter_mut().take(n) {
                *p = g.gen::<f64>() * cfg.scale();
            }
            let shift = shift_through(cfg.r, &cap.center, &point, n);
            Tube::new(cfg, &cap.index[..n - 1], &cap.center[..n - 1], &shift[..n - 1])
        })
        .collect()
}

/// Tube of cap `cap` (one index per axis) through `point`.
pub fn tube_through(cfg: &ScaleConfig, cap: &[u32], point: &[f64; MAX_DIM]) -> Result<Tube> {
    let n = cfg.n;
    let centers: Vec<f64> = cap.iter().map(|&c| cap_center(cfg.r, c)).collect();
    let shift = shift_through(cfg.r, &centers, point, n);
    Tube::new(cfg, cap, &centers, &shift[..n - 1])
}

/// Generator of Carleson square configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SquareLayout {
    /// One square per unit column at height `R/2`.
    HorizontalLine,
    /// One square per unit column along a slope-1/2 sinusoid around `R/2`.
    LipschitzGraph,
    /// One square per column of a random subset of `R/2` columns at random heights.
    RandomDisjoint,
}

/// Unit squares of `[0, R]^2` with pairwise disjoint `x`-projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlesonConfig {
    pub r: u32,
    pub layout: SquareLayout,
    /// Integer lower-left corners of the squares, sorted by column.
    pub squares: Vec<[u32; 2]>,
    /// Intended squares per `R^{1/2}`-cube.
    pub lambda_target: f64,
}

impl CarlesonConfig {
    pub fn new(r: u32, layout: SquareLayout, seed: u64) -> Result<Self> {
        crate::geometry::validate_scale(r)?;
        let mid = r / 2;
        let squares: Vec<[u32; 2]> = match layout {
            SquareLayout::HorizontalLine => (0..r).map(|x| [x, mid]).collect(),
            SquareLayout::LipschitzGraph => {
                let amp = r as f64 / 8.0;
                let freq = 4.0 / r as f64;
                (0..r)
                    .map(|x| {
                        let y = mid as f64 + amp * (2.0 * std::f64::consts::PI * freq * (x as f64 + 0.5)).sin();
                        [x, (y.floor() as u32).min(r - 1)]
                    })
                    .collect()
            }
            SquareLayout::RandomDisjoint => {
                let mut g = rng(seed);
                let mut cols = sample(&mut g, r as usize, r as usize / 2).into_vec();
                cols.sort_unstable();
                cols.into_iter().map(|x| [x as u32, g.gen_range(0..r)]).collect()
            }
        };
        let per_cube = squares.len() as f64 / r as f64 * (r as f64).sqrt();
        let cfg = Self { r, layout, squares, lambda_target: per_cube };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks disjoint projections and a square count within a factor 2 of `R`.
    pub fn validate(&self) -> Result<()> {
        let mut cols = BTreeSet::new();
        for s in &self.squares {
            if s[0] >= self.r || s[1] >= self.r {
                return Err(invalid("squares", format!("square {s:?} leaves [0, R]^2")));
            }
            if !cols.insert(s[0]) {
                return Err(invalid("squares", format!("two squares share the column {}", s[0])));
            }
        }
        let count = self.squares.len() as f64;
        if count < self.r as f64 / 2.0 || count > 2.0 * self.r as f64 {
            return Err(invalid("squares", format!("{count} squares for R = {}", self.r)));
        }
        Ok(())
    }

    /// `R^{1/2}`-cubes containing at least one square, with the number of
    /// squares of each.
    pub fn covering_cubes(&self, cfg: &ScaleConfig) -> Result<(CubeCollection, Vec<usize>)> {
        let s = cfg.sqrt_r();
        let mut per_cell: std::collections::BTreeMap<[u32; 2], usize> = Default::default();
        for sq in &self.squares {
            *per_cell.entry([sq[0] / s, sq[1] / s]).or_default() += 1;
        }
        let cubes = CubeCollection::new(*cfg, per_cell.keys().map(|c| DyadicCube::from_cell(cfg, c).expect("cell inside the grid")))?;
        let counts = cubes.iter().map(|q| per_cell[&[q.corner[0] / s, q.corner[1] / s]]).collect();
        Ok((cubes, counts))
    }
}

/// `count` unit-modulus coefficients with uniformly random phases.
pub fn random_phases(count: usize, seed: u64) -> Vec<Complex64> {
    let mut g = rng(seed);
    (0..count).map(|_| cis_turns(g.gen::<f64>())).collect()
}
