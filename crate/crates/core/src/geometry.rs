//! Spatial scaffolding: scale parameters, dyadic cubes, tubes, tube-cube
//! incidence counting and horizontal slab partitions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest ambient dimension supported by the crate.
pub const MAX_DIM: usize = 3;

/// Default lower bound on the transversality volume of a direction tuple.
pub const TRANSVERSALITY_THRESHOLD: f64 = 0.01;

/// Smallest admissible spatial scale.
pub const MIN_SCALE: u32 = 64;

/// Largest admissible spatial scale.
pub const MAX_SCALE: u32 = 1 << 14;

/// Checks that `r` is an even power of two inside `[MIN_SCALE, MAX_SCALE]`.
pub fn validate_scale(r: u32) -> Result<()> {
    if !(MIN_SCALE..=MAX_SCALE).contains(&r) || !r.is_power_of_two() || r.trailing_zeros() % 2 != 0 {
        return Err(invalid(
            "R",
            format!("{r} is not an even power of two in [{MIN_SCALE}, {MAX_SCALE}]"),
        ));
    }
    Ok(())
}

/// Exact integer square root of an admissible scale.
pub fn sqrt_scale(r: u32) -> u32 {
    1 << (r.trailing_zeros() / 2)
}

/// Dimension, scale and epsilon shared by every geometric object of a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub n: usize,
    pub r: u32,
    pub eps: f64,
}

impl ScaleConfig {
    pub fn new(n: usize, r: u32, eps: f64) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&n) {
            return Err(invalid("n", format!("{n} is not 2 or 3")));
        }
        validate_scale(r)?;
        if !(eps > 0.0 && eps <= 0.25) {
            return Err(invalid("eps", format!("{eps} is outside (0, 1/4]")));
        }
        Ok(Self { n, r, eps })
    }

    /// The Strichartz exponent `2(n+1)/(n-1)`.
    pub fn exponent(&self) -> f64 {
        2.0 * (self.n as f64 + 1.0) / (self.n as f64 - 1.0)
    }

    pub fn scale(&self) -> f64 {
        self.r as f64
    }

    pub fn sqrt_r(&self) -> u32 {
        sqrt_scale(self.r)
    }

    /// Number of cubes of side `R^{1/2}` along each axis of `[0, R]^n`.
    pub fn cells_per_axis(&self) -> u32 {
        self.r / self.sqrt_r()
    }

    pub fn cube_count(&self) -> usize {
        (self.cells_per_axis() as usize).pow(self.n as u32)
    }

    /// Radius `R^{1/2 + eps}` of a fat tube.
    pub fn fat_radius(&self) -> f64 {
        self.scale().powf(0.5 + self.eps)
    }

    /// Maximal number of cubes of one slab met by an admissible tube.
    pub fn horizontal_bound(&self) -> usize {
        6usize.pow(self.n as u32)
    }
}

/// Axis-parallel cube of side `R^{1/2}` whose corner lies on the lattice
/// `R^{1/2} Z^n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub dim: u8,
    pub side: u32,
    pub corner: [u32; MAX_DIM],
}

impl DyadicCube {
    /// Cube with lattice index `cell`, so that `corner = cell * R^{1/2}`.
    pub fn from_cell(cfg: &ScaleConfig, cell: &[u32]) -> Result<Self> {
        if cell.len() != cfg.n {
            return Err(invalid("cube", format!("cell index has {} entries, expected {}", cell.len(), cfg.n)));
        }
        let side = cfg.sqrt_r();
        let mut corner = [0u32; MAX_DIM];
        for (axis, &c) in cell.iter().enumerate() {
            if c >= cfg.cells_per_axis() {
                return Err(Error::OutOfDomain(format!("cube cell {cell:?} leaves [0, {}]^{}", cfg.r, cfg.n)));
            }
            corner[axis] = c * side;
        }
        Ok(Self { dim: cfg.n as u8, side, corner })
    }

    /// Cube with the given lattice corner.
    pub fn new(cfg: &ScaleConfig, corner: &[u32]) -> Result<Self> {
        let side = cfg.sqrt_r();
        if corner.iter().any(|c| c % side != 0) {
            return Err(Error::Misaligned(format!("corner {corner:?} is not a multiple of {side}")));
        }
        let cell: Vec<u32> = corner.iter().map(|c| c / side).collect();
        Self::from_cell(cfg, &cell)
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn cell(&self) -> [u32; MAX_DIM] {
        let mut cell = [0u32; MAX_DIM];
        for axis in 0..self.dim() {
            cell[axis] = self.corner[axis] / self.side;
        }
        cell
    }

    pub fn center(&self) -> [f64; MAX_DIM] {
        let mut c = [0.0; MAX_DIM];
        let half = self.side as f64 / 2.0;
        for axis in 0..self.dim() {
            c[axis] = self.corner[axis] as f64 + half;
        }
        c
    }

    /// Linear index with the first axis varying fastest and the last slowest.
    pub fn key(&self, cells_per_axis: u32) -> usize {
        let cell = self.cell();
        let s = cells_per_axis as usize;
        let mut key = 0usize;
        for axis in (0..self.dim()).rev() {
            key = key * s + cell[axis] as usize;
        }
        key
    }

    /// Index of the horizontal layer of cubes containing this cube.
    pub fn layer(&self) -> u32 {
        self.corner[self.dim() - 1] / self.side
    }

    fn belongs_to(&self, cfg: &ScaleConfig) -> bool {
        self.dim() == cfg.n
            && self.side == cfg.sqrt_r()
            && self.corner[..cfg.n].iter().all(|&c| c % self.side == 0 && c < cfg.r)
    }
}

/// Finite set of dyadic cubes, kept sorted by [`DyadicCube::key`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeCollection {
    config: ScaleConfig,
    cubes: Vec<DyadicCube>,
}

impl CubeCollection {
    pub fn new(config: ScaleConfig, cubes: impl IntoIterator<Item = DyadicCube>) -> Result<Self> {
        let mut cubes: Vec<DyadicCube> = cubes.into_iter().collect();
        if let Some(bad) = cubes.iter().find(|q| !q.belongs_to(&config)) {
            return Err(invalid("cubes", format!("cube {bad:?} does not belong to scale R = {}", config.r)));
        }
        let s = config.cells_per_axis();
        cubes.sort_by_key(|q| q.key(s));
        cubes.dedup();
        Ok(Self { config, cubes })
    }

    /// Every cube of the partition of `[0, R]^n`.
    pub fn full(config: ScaleConfig) -> Self {
        let s = config.cells_per_axis();
        let cubes = (0..config.cube_count())
            .map(|key| {
                let mut cell = [0u32; MAX_DIM];
                let mut rest = key as u32;
                for c in cell.iter_mut().take(config.n) {
                    *c = rest % s;
                    rest /= s;
                }
                DyadicCube { dim: config.n as u8, side: config.sqrt_r(), corner: cell.map(|c| c * config.sqrt_r()) }
            })
            .collect();
        Self { config, cubes }
    }

    pub fn config(&self) -> &ScaleConfig {
        &self.config
    }

    pub fn cubes(&self) -> &[DyadicCube] {
        &self.cubes
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, DyadicCube> {
        self.cubes.iter()
    }

    pub fn position(&self, cube: &DyadicCube) -> Option<usize> {
        let s = self.config.cells_per_axis();
        self.cubes.binary_search_by_key(&cube.key(s), |q| q.key(s)).ok()
    }

    pub fn contains(&self, cube: &DyadicCube) -> bool {
        self.position(cube).is_some()
    }

    /// Sub-collection formed by the cubes at the given positions.
    pub fn select(&self, positions: impl IntoIterator<Item = usize>) -> Self {
        let cubes = positions.into_iter().map(|i| self.cubes[i]);
        Self::new(self.config, cubes).expect("cubes of a valid collection stay valid")
    }

    pub fn union(&self, other: &Self) -> Self {
        Self::new(self.config, self.cubes.iter().chain(other.cubes.iter()).copied())
            .expect("cubes of valid collections stay valid")
    }

    pub fn intersection(&self, other: &Self) -> Self {
        Self::new(self.config, self.cubes.iter().filter(|q| other.contains(q)).copied())
            .expect("cubes of a valid collection stay valid")
    }
}

/// Direction of the tubes attached to the cap centered at `xi`, namely the
/// unit vector along `(-2 xi, 1)`.
pub fn direction_of_cap(xi: &[f64]) -> Result<[f64; MAX_DIM]> {
    if xi.is_empty() || xi.len() >= MAX_DIM {
        return Err(invalid("xi", format!("frequency has {} coordinates", xi.len())));
    }
    if xi.iter().any(|x| !x.is_finite() || x.abs() > 1.0) {
        return Err(Error::OutOfDomain(format!("frequency {xi:?} lies outside [-1, 1]^{}", xi.len())));
    }
    let n = xi.len() + 1;
    let mut d = [0.0; MAX_DIM];
    for (axis, x) in xi.iter().enumerate() {
        d[axis] = -2.0 * x;
    }
    d[n - 1] = 1.0;
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in d.iter_mut() {
        *v /= norm;
    }
    Ok(d)
}

/// Angle between a unit direction and the vertical axis `e_n`.
pub fn angle_from_vertical(direction: &[f64; MAX_DIM], n: usize) -> f64 {
    direction[n - 1].clamp(-1.0, 1.0).acos()
}

/// Largest angle from the vertical of a cap direction, `arctan(2 sqrt(n-1))`.
pub fn max_cap_angle(n: usize) -> f64 {
    (2.0 * ((n - 1) as f64).sqrt()).atan()
}

/// Absolute determinant of the `n x n` matrix with the given directions as rows.
pub fn transversality_volume(directions: &[[f64; MAX_DIM]], n: usize) -> Result<f64> {
    if directions.len() != n {
        return Err(invalid("directions", format!("got {} directions in dimension {n}", directions.len())));
    }
    let mut m = [[0.0f64; MAX_DIM]; MAX_DIM];
    for (row, d) in directions.iter().enumerate() {
        m[row][..n].copy_from_slice(&d[..n]);
    }
    Ok(determinant(&mut m, n).abs())
}

fn determinant(m: &mut [[f64; MAX_DIM]; MAX_DIM], n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .expect("non-empty pivot range");
        if m[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            m.swap(pivot, col);
            det = -det;
        }
        det *= m[col][col];
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    det
}

/// Tube of radius `R^{1/2}` attached to the cap with the given center, whose
/// axis is `{x' + 2 xi x_n + v = 0}` for `0 <= x_n <= R`.  The translate is
/// `v = shift * R^{1/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub dim: u8,
    pub scale: u32,
    pub cap: [u32; MAX_DIM - 1],
    pub cap_center: [f64; MAX_DIM - 1],
    pub shift: [i64; MAX_DIM - 1],
}

impl Tube {
    pub fn new(cfg: &ScaleConfig, cap: &[u32], cap_center: &[f64], shift: &[i64]) -> Result<Self> {
        let m = cfg.n - 1;
        if cap.len() != m || cap_center.len() != m || shift.len() != m {
            return Err(invalid("tube", format!("expected {m} cap coordinates")));
        }
        direction_of_cap(cap_center)?;
        let mut tube = Self { dim: cfg.n as u8, scale: cfg.r, cap: [0; 2], cap_center: [0.0; 2], shift: [0; 2] };
        tube.cap[..m].copy_from_slice(cap);
        tube.cap_center[..m].copy_from_slice(cap_center);
        tube.shift[..m].copy_from_slice(shift);
        Ok(tube)
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn radius(&self) -> f64 {
        sqrt_scale(self.scale) as f64
    }

    pub fn length(&self) -> f64 {
        self.scale as f64
    }

    pub fn translate(&self) -> [f64; MAX_DIM - 1] {
        let s = sqrt_scale(self.scale) as f64;
        [self.shift[0] as f64 * s, self.shift[1] as f64 * s]
    }

    pub fn direction(&self) -> [f64; MAX_DIM] {
        direction_of_cap(&self.cap_center[..self.dim() - 1]).expect("tube caps are validated on construction")
    }

    /// Point of the axis at height `t`.
    pub fn axis_point(&self, t: f64) -> [f64; MAX_DIM] {
        let n = self.dim();
        let v = self.translate();
        let mut p = [0.0; MAX_DIM];
        for axis in 0..n - 1 {
            p[axis] = -v[axis] - 2.0 * self.cap_center[axis] * t;
        }
        p[n - 1] = t;
        p
    }

    /// Endpoints of the axis segment over `0 <= x_n <= R`.
    pub fn segment(&self) -> ([f64; MAX_DIM], [f64; MAX_DIM]) {
        (self.axis_point(0.0), self.axis_point(self.length()))
    }

    /// Sub-interval of `[t_lo, t_hi]` on which the axis stays inside the box
    /// `[lo, hi]^{n-1}` of horizontal coordinates.
    pub fn axis_range_in_box(&self, t_lo: f64, t_hi: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
        let v = self.translate();
        let (mut a, mut b) = (t_lo, t_hi);
        for axis in 0..self.dim() - 1 {
            let slope = -2.0 * self.cap_center[axis];
            let offset = -v[axis];
            if slope == 0.0 {
                if offset < lo || offset > hi {
                    return None;
                }
                continue;
            }
            let (s1, s2) = ((lo - offset) / slope, (hi - offset) / slope);
            a = a.max(s1.min(s2));
            b = b.min(s1.max(s2));
        }
        (a <= b).then_some((a, b))
    }

    /// Whether the tube meets the spatial domain `[0, R]^n`, up to its radius.
    pub fn meets_domain(&self) -> bool {
        let r = self.length();
        let rad = self.radius();
        self.axis_range_in_box(0.0, r, -rad, r + rad).is_some()
    }
}

/// Euclidean distance from `p` to the segment `[a, b]` in dimension `n`.
pub fn point_segment_distance(p: &[f64; MAX_DIM], a: &[f64; MAX_DIM], b: &[f64; MAX_DIM], n: usize) -> f64 {
    let mut ab2 = 0.0;
    let mut dot = 0.0;
    for k in 0..n {
        let ab = b[k] - a[k];
        ab2 += ab * ab;
        dot += (p[k] - a[k]) * ab;
    }
    let t = if ab2 > 0.0 { (dot / ab2).clamp(0.0, 1.0) } else { 0.0 };
    (0..n)
        .map(|k| {
            let d = p[k] - (a[k] + t * (b[k] - a[k]));
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Largest center-to-axis distance at which a cube counts as met by the fat
/// tube of radius `R^{1/2 + eps}`.
pub fn fat_reach(r: u32, n: usize, eps: f64) -> f64 {
    let scale = r as f64;
    scale.powf(0.5 + eps) + (n as f64).sqrt() / 2.0 * scale.sqrt()
}

/// Incidence predicate between the fat tube `R^{eps} T` and a cube: the
/// distance from the cube center to the axis segment is at most
/// `R^{1/2+eps} + (sqrt(n)/2) R^{1/2}`.  With `eps = 0` the core tube is used.
pub fn fat_tube_meets_cube(tube: &Tube, cube: &DyadicCube, eps: f64) -> bool {
    let n = tube.dim();
    let (a, b) = tube.segment();
    point_segment_distance(&cube.center(), &a, &b, n) <= fat_reach(tube.scale, n, eps)
}

/// Number of tubes meeting each cube, by exhaustive pair enumeration.
pub fn incidence_counts_brute(tubes: &[Tube], cubes: &CubeCollection, eps: f64) -> Vec<u32> {
    cubes
        .iter()
        .map(|q| tubes.iter().filter(|t| fat_tube_meets_cube(t, q, eps)).count() as u32)
        .collect()
}

/// Uniform-grid index over a cube collection, with cell size `R^{1/2}`.
pub struct IncidenceIndex<'a> {
    cubes: &'a CubeCollection,
    lookup: Vec<u32>,
}

impl<'a> IncidenceIndex<'a> {
    pub fn new(cubes: &'a CubeCollection) -> Self {
        let cfg = cubes.config();
        let s = cfg.cells_per_axis();
        let mut lookup = vec![u32::MAX; cfg.cube_count()];
        for (pos, q) in cubes.iter().enumerate() {
            lookup[q.key(s)] = pos as u32;
        }
        Self { cubes, lookup }
    }

    /// Calls `visit` with the position of every cube of the collection met by
    /// the fat tube.
    pub fn for_each_incidence(&self, tube: &Tube, eps: f64, mut visit: impl FnMut(usize)) {
        let cfg = self.cubes.config();
        let n = cfg.n;
        let side = cfg.sqrt_r() as f64;
        let cells = cfg.cells_per_axis();
        let reach = fat_reach(cfg.r, n, eps);
        let r = cfg.scale();
        for layer in 0..cells {
            let cn = (layer as f64 + 0.5) * side;
            let t_lo = (cn - reach).max(0.0);
            let t_hi = (cn + reach).min(r);
            if t_lo > t_hi {
                continue;
            }
            let (p_lo, p_hi) = (tube.axis_point(t_lo), tube.axis_point(t_hi));
            let mut range = [(0u32, 0u32); MAX_DIM - 1];
            let mut empty = false;
            for axis in 0..n - 1 {
                let lo = p_lo[axis].min(p_hi[axis]) - reach;
                let hi = p_lo[axis].max(p_hi[axis]) + reach;
                let first = ((lo / side) - 0.5).ceil().max(0.0);
                let last = ((hi / side) - 0.5).floor().min(cells as f64 - 1.0);
                if first > last {
                    empty = true;
                    break;
                }
                range[axis] = (first as u32, last as u32);
            }
            if empty {
                continue;
            }
            let (x_first, x_last) = range[0];
            let (y_first, y_last) = if n == 3 { range[1] } else { (0, 0) };
            for y in y_first..=y_last {
                for x in x_first..=x_last {
                    let key = if n == 3 {
                        (layer as usize * cells as usize + y as usize) * cells as usize + x as usize
                    } else {
                        layer as usize * cells as usize + x as usize
                    };
                    let pos = self.lookup[key];
                    if pos != u32::MAX && fat_tube_meets_cube(tube, &self.cubes.cubes()[pos as usize], eps) {
                        visit(pos as usize);
                    }
                }
            }
        }
    }

    /// Number of tubes meeting each cube, aligned with the collection order.
    pub fn counts(&self, tubes: &[Tube], eps: f64) -> Vec<u32> {
        let mut counts = vec![0u32; self.cubes.len()];
        for tube in tubes {
            self.for_each_incidence(tube, eps, |pos| counts[pos] += 1);
        }
        counts
    }
}

/// Number of fat tubes meeting each cube of the collection.
pub fn incidence_counts(tubes: &[Tube], cubes: &CubeCollection, eps: f64) -> Vec<u32> {
    IncidenceIndex::new(cubes).counts(tubes, eps)
}

/// Partition of a cube collection into horizontal slabs of
/// `rows_per_slab` consecutive layers of cubes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HorizontalPartition {
    pub slabs: Vec<CubeCollection>,
    pub slab_index: Vec<u32>,
    pub rows_per_slab: u32,
    pub sigma: usize,
    pub bound: usize,
}

/// Groups cubes by `floor(floor(corner_n / R^{1/2}) / rows_per_slab)`.
pub fn almost_horizontal_partition(cubes: &CubeCollection, rows_per_slab: u32) -> Result<HorizontalPartition> {
    if cubes.is_empty() {
        return Err(Error::Empty("cube collection to partition"));
    }
    if rows_per_slab == 0 {
        return Err(invalid("rows_per_slab", "must be positive"));
    }
    let mut groups: std::collections::BTreeMap<u32, Vec<DyadicCube>> = Default::default();
    for q in cubes.iter() {
        groups.entry(q.layer() / rows_per_slab).or_default().push(*q);
    }
    let cfg = *cubes.config();
    let slab_index: Vec<u32> = groups.keys().copied().collect();
    let slabs: Vec<CubeCollection> = groups
        .into_values()
        .map(|qs| CubeCollection::new(cfg, qs).expect("cubes of a valid collection stay valid"))
        .collect();
    let sigma = slabs.iter().map(|s| s.len()).min().expect("at least one slab");
    Ok(HorizontalPartition { slabs, slab_index, rows_per_slab, sigma, bound: cfg.horizontal_bound() })
}

impl HorizontalPartition {
    /// Largest number of cubes of a single slab met by one of the tubes.
    pub fn max_slab_incidence(&self, tubes: &[Tube], eps: f64) -> usize {
        let mut worst = 0;
        for slab in &self.slabs {
            let index = IncidenceIndex::new(slab);
            for tube in tubes {
                let mut hits = 0;
                index.for_each_incidence(tube, eps, |_| hits += 1);
                worst = worst.max(hits);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(n: usize, r: u32) -> ScaleConfig {
        ScaleConfig::new(n, r, 0.1).unwrap()
    }

    #[test]
    fn scale_validation() {
        assert!(ScaleConfig::new(2, 100, 0.1).is_err());
        assert!(ScaleConfig::new(2, 128, 0.1).is_err());
        assert!(ScaleConfig::new(2, 32, 0.1).is_err());
        assert!(ScaleConfig::new(2, 256, 0.0).is_err());
        assert!(ScaleConfig::new(4, 256, 0.1).is_err());
        let c = cfg(2, 1024);
        assert_eq!(c.sqrt_r(), 32);
        assert_eq!(c.exponent(), 6.0);
        assert_eq!(cfg(3, 64).exponent(), 4.0);
        assert_eq!(c.horizontal_bound(), 36);
    }

    #[test]
    fn cap_directions() {
        let d = direction_of_cap(&[0.5]).unwrap();
        assert_abs_diff_eq!(d[0], -1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
        let d = direction_of_cap(&[1.0]).unwrap();
        assert_abs_diff_eq!(angle_from_vertical(&d, 2), 2f64.atan(), epsilon = 1e-12);
        assert!(direction_of_cap(&[1.5]).is_err());
        assert!(direction_of_cap(&[0.0, -1.01]).is_err());
    }

    #[test]
    fn transversality_requires_matching_count() {
        let d = direction_of_cap(&[0.0]).unwrap();
        assert!(transversality_volume(&[d], 2).is_err());
        let parallel = transversality_volume(&[d, d], 2).unwrap();
        assert_abs_diff_eq!(parallel, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn vertical_tube_meets_pierced_cube() {
        let c = cfg(2, 256);
        let q = DyadicCube::from_cell(&c, &[3, 5]).unwrap();
        // with a vertical axis the tube sits at x1 = -v = 48, within 8 of the center
        let vertical = Tube::new(&c, &[8], &[0.0], &[-3]).unwrap();
        assert_abs_diff_eq!(vertical.axis_point(100.0)[0], 48.0);
        assert!(fat_tube_meets_cube(&vertical, &q, 0.1));
        assert!(fat_tube_meets_cube(&vertical, &q, 0.0));
        let far = Tube::new(&c, &[8], &[0.0], &[-13]).unwrap();
        assert!(!fat_tube_meets_cube(&far, &q, 0.1));
    }

    #[test]
    fn partition_rejects_empty() {
        let c = cfg(2, 64);
        let empty = CubeCollection::new(c, []).unwrap();
        assert!(almost_horizontal_partition(&empty, 1).is_err());
    }

    #[test]
    fn partition_groups_layers() {
        let c = cfg(2, 256);
        let cells = [[0u32, 0], [3, 0], [1, 2], [2, 3], [5, 3]];
        let q = CubeCollection::new(c, cells.iter().map(|cell| DyadicCube::from_cell(&c, cell).unwrap())).unwrap();
        let single = almost_horizontal_partition(&q, 1).unwrap();
        assert_eq!(single.slab_index, vec![0, 2, 3]);
        assert_eq!(single.sigma, 1);
        let double = almost_horizontal_partition(&q, 2).unwrap();
        assert_eq!(double.slab_index, vec![0, 1]);
        assert_eq!(double.sigma, 2);
    }
}
