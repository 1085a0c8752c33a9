//! Pigeonholing pipelines that extract uniform sub-collections of cubes.
//!
//! Every bucketing stage keeps the largest bucket, with ties resolved in
//! favor of the smallest bucket key, and records the integer counts needed
//! to check `|chosen| . #buckets >= |input|` after the fact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extension::{cube_norms, FreqBox, Profile};
use crate::geometry::{
    direction_of_cap, transversality_volume, CubeCollection, DyadicCube, HorizontalPartition, IncidenceIndex, Tube,
    MAX_DIM, TRANSVERSALITY_THRESHOLD,
};
use crate::wavepacket::{decompose, default_floor_exponent, weight_classes, PacketSet, WeightClasses, DEFAULT_WINDOW_FACTOR};

/// Exponent of the pruning threshold `R^{-prune_exp} ||f||_2`, as a multiple of `n`.
pub const PRUNE_EXPONENT_PER_DIM: f64 = 10.0;

/// Exponent of the additive slack of the class-selection audit, per dimension.
pub const CLASS_SLACK_EXPONENT_PER_DIM: f64 = 5.0;

/// Cached data of one function: its packets, weight classes, and the
/// `L^p` norms of `Ef` and of every class sum on each cube of a region.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FunctionData {
    pub profile: Profile,
    pub packets: PacketSet,
    pub classes: WeightClasses,
    pub region: CubeCollection,
    pub exponent: f64,
    pub step: f64,
    /// `||Ef||_{L^p(q)}` for every cube of the region.
    pub cube_norms: Vec<f64>,
    /// `||sum_{T in class} F_T||_{L^p(q)}`, indexed by cube then class.  Not
    /// computed when there is a single class.  An entry is `None` when the
    /// class is skipped because its sup bound `||g||_1 |q|^{1/p}` lies below
    /// the largest class norm already found on every cube.
    pub class_norms: Option<Vec<Vec<Option<f64>>>>,
}

impl FunctionData {
    /// Decomposes `profile` and evaluates the field and the class sums on
    /// every cube of `region` at spatial step `step`.
    pub fn new(profile: Profile, region: CubeCollection, exponent: f64, step: f64) -> Result<Self> {
        Self::build(profile, region, exponent, step, true)
    }

    /// As [`FunctionData::new`] without the class sums; class selection is
    /// then unavailable when there is more than one class.
    pub fn field_only(profile: Profile, region: CubeCollection, exponent: f64, step: f64) -> Result<Self> {
        Self::build(profile, region, exponent, step, false)
    }

    fn build(profile: Profile, region: CubeCollection, exponent: f64, step: f64, with_classes: bool) -> Result<Self> {
        let packets = decompose(&profile, DEFAULT_WINDOW_FACTOR)?;
        let classes = if packets.is_empty() {
            WeightClasses { classes: Vec::new(), floor: 0.0, min_weight: 0.0, max_weight: 0.0, dropped: Vec::new(), dropped_mass: 0.0 }
        } else {
            weight_classes(&packets, default_floor_exponent(profile.n()))?
        };
        let norms = cube_norms(&profile, &region, step, exponent)?;
        let class_norms = if with_classes && classes.len() > 1 {
            Some(class_norm_table(&packets, &classes, &region, step, exponent)?)
        } else {
            None
        };
        Ok(Self { profile, packets, classes, region, exponent, step, cube_norms: norms, class_norms })
    }

    pub fn profile_norm(&self) -> f64 {
        self.profile.l2_norm()
    }

    fn position(&self, cube: &DyadicCube) -> Result<usize> {
        self.region.position(cube).ok_or_else(|| invalid("cubes", format!("cube {cube:?} lies outside the cached region")))
    }

    /// `||Ef||_{L^p(q)}`.
    pub fn norm_on(&self, cube: &DyadicCube) -> Result<f64> {
        Ok(self.cube_norms[self.position(cube)?])
    }

    /// `||Ef||_{L^p(union of cubes)}`.
    pub fn norm_on_union(&self, cubes: &CubeCollection) -> Result<f64> {
        let p = self.exponent;
        let mut sum = 0.0;
        for q in cubes.iter() {
            sum += self.norm_on(q)?.powf(p);
        }
        Ok(sum.powf(1.0 / p))
    }

    /// Tubes of the packets of class `class`.
    pub fn class_tubes(&self, class: usize) -> Vec<Tube> {
        self.classes.classes[class].members.iter().map(|&i| self.packets.packets[i].tube).collect()
    }

    /// Index of the class whose sum has the largest norm on `cube`, lowest
    /// index on ties, together with that norm.
    pub fn dominant_class(&self, cube: &DyadicCube) -> Result<(usize, Option<f64>)> {
        let pos = self.position(cube)?;
        Ok(match &self.class_norms {
            None if self.classes.len() > 1 => return Err(invalid("class_norms", "class sums were not computed")),
            None => (0, None),
            Some(table) => {
                let mut best: Option<(usize, f64)> = None;
                for (j, v) in table[pos].iter().enumerate() {
                    if let Some(v) = *v {
                        if best.map_or(true, |(_, b)| v > b) {
                            best = Some((j, v));
                        }
                    }
                }
                let (j, v) = best.ok_or_else(|| invalid("class_norms", "no class norm on the cube"))?;
                (j, Some(v))
            }
        })
    }
}

/// Class-sum norms on every cube of `region`, visiting classes by
/// decreasing sup bound and skipping the cubes where a class cannot be the
/// largest.
fn class_norm_table(packets: &PacketSet, classes: &WeightClasses, region: &CubeCollection, step: f64, exponent: f64) -> Result<Vec<Vec<Option<f64>>>> {
    let cfg = region.config();
    let volume_factor = cfg.scale().powf(cfg.n as f64 / (2.0 * exponent)) * (1.0 + 1e-9);
    let mut pieces = Vec::with_capacity(classes.len());
    for class in &classes.classes {
        let piece = packets.synthesize_subset(&class.members)?;
        let bound = piece.l1_norm() * volume_factor;
        pieces.push((piece, bound));
    }
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.sort_by(|&a, &b| pieces[b].1.total_cmp(&pieces[a].1).then(a.cmp(&b)));
    let mut table = vec![vec![None; classes.len()]; region.len()];
    let mut best = vec![0.0f64; region.len()];
    for j in order {
        let bound = pieces[j].1;
        let needed: Vec<usize> = (0..region.len()).filter(|&pos| bound >= best[pos]).collect();
        if needed.is_empty() {
            break;
        }
        let subset = CubeCollection::new(*cfg, needed.iter().map(|&pos| region.cubes()[pos]))?;
        for (&pos, v) in needed.iter().zip(cube_norms(&pieces[j].0, &subset, step, exponent)?) {
            table[pos][j] = Some(v);
            best[pos] = best[pos].max(v);
        }
    }
    Ok(table)
}

/// Counts of one pigeonhole stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageAudit {
    pub stage: String,
    pub input: usize,
    pub buckets: usize,
    pub chosen: usize,
}

impl StageAudit {
    /// `chosen . buckets >= input`.
    pub fn holds(&self) -> bool {
        self.chosen as u128 * self.buckets as u128 >= self.input as u128
    }
}

/// Largest bucket of `items` under `key`, first key on ties.
fn largest_bucket<T: Copy, K: Ord + Clone>(stage: &str, items: &[T], key: impl Fn(&T) -> K) -> (K, Vec<T>, StageAudit) {
    let mut buckets: BTreeMap<K, Vec<T>> = BTreeMap::new();
    for item in items {
        buckets.entry(key(item)).or_default().push(*item);
    }
    let count = buckets.len();
    let (best_key, best) = buckets
        .into_iter()
        .fold(None::<(K, Vec<T>)>, |acc, (k, v)| match acc {
            Some((_, ref b)) if b.len() >= v.len() => acc,
            _ => Some((k, v)),
        })
        .expect("bucketing a nonempty list");
    let audit = StageAudit { stage: stage.to_string(), input: items.len(), buckets: count, chosen: best.len() };
    (best_key, best, audit)
}

/// Dyadic incidence level: 0 for no incidence, else `k + 1` with
/// `2^k <= count < 2^{k+1}`.
pub fn incidence_level(count: u32) -> u32 {
    if count == 0 {
        0
    } else {
        32 - count.leading_zeros()
    }
}

/// Lower end `M` of an incidence level: counts of the level lie in `[M, 2M)`.
pub fn level_floor(level: u32) -> u32 {
    if level == 0 {
        0
    } else {
        1 << (level - 1)
    }
}

/// Number of incidence levels available to counts in `0..=max_count`.
pub fn level_count(max_count: usize) -> usize {
    incidence_level(max_count.min(u32::MAX as usize) as u32) as usize + 1
}

/// Split of a collection into cubes passing the pruning threshold for every
/// function and the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pruning {
    pub kept: CubeCollection,
    pub discarded: CubeCollection,
    pub thresholds: Vec<f64>,
}

/// Discards the cubes on which `||Ef_i||_{L^p(q)} < R^{-10n} ||f_i||_2` for some `i`.
pub fn prune_small_cubes(data: &[FunctionData], cubes: &CubeCollection) -> Result<Pruning> {
    let cfg = cubes.config();
    let r = cfg.scale();
    let thresholds: Vec<f64> = data.iter().map(|d| r.powf(-PRUNE_EXPONENT_PER_DIM * cfg.n as f64) * d.profile_norm()).collect();
    let mut kept = Vec::new();
    let mut discarded = Vec::new();
    for q in cubes.iter() {
        let mut ok = true;
        for (d, &t) in data.iter().zip(&thresholds) {
            let v = d.norm_on(q)?;
            if !(v >= t) || v == 0.0 {
                ok = false;
            }
        }
        if ok { kept.push(*q) } else { discarded.push(*q) }
    }
    Ok(Pruning { kept: CubeCollection::new(*cfg, kept)?, discarded: CubeCollection::new(*cfg, discarded)?, thresholds })
}

/// Class index maximizing the class-sum norm on `cube`, for every function.
pub fn assign_class_tuple(data: &[FunctionData], cube: &DyadicCube) -> Result<Vec<usize>> {
    data.iter().map(|d| d.dominant_class(cube).map(|(j, _)| j)).collect()
}

/// Worst value over the kept cubes of `||Ef_i||_q / ((J_i + 1) max_j ||class_j||_q + R^{-5n} ||f_i||_2)`.
/// The class-selection inequality holds when this is at most 1.
pub fn class_selection_slack(data: &[FunctionData], cubes: &CubeCollection) -> Result<f64> {
    let cfg = cubes.config();
    let slack_scale = cfg.scale().powf(-CLASS_SLACK_EXPONENT_PER_DIM * cfg.n as f64);
    let mut worst: f64 = 0.0;
    for d in data {
        if d.class_norms.is_none() {
            continue;
        }
        for q in cubes.iter() {
            let (_, best) = d.dominant_class(q)?;
            let bound = (d.classes.len() as f64 + 1.0) * best.unwrap_or(0.0) + slack_scale * d.profile_norm();
            worst = worst.max(d.norm_on(q)? / bound);
        }
    }
    Ok(worst)
}

/// Smallest transversality volume over all choices of one support corner
/// per function.
pub fn support_transversality(supports: &[&[FreqBox]], n: usize) -> Result<f64> {
    if supports.len() != n {
        return Err(invalid("supports", format!("expected {n} functions, got {}", supports.len())));
    }
    let corner_dirs: Vec<Vec<[f64; MAX_DIM]>> = supports
        .iter()
        .map(|boxes| {
            boxes.iter().flat_map(|b| b.corners(n)).map(|c| direction_of_cap(&c[..n - 1])).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut worst = f64::INFINITY;
    let mut choice = vec![0usize; n];
    loop {
        let dirs: Vec<[f64; MAX_DIM]> = (0..n).map(|i| corner_dirs[i][choice[i]]).collect();
        worst = worst.min(transversality_volume(&dirs, n)?);
        let mut axis = 0;
        while axis < n {
            choice[axis] += 1;
            if choice[axis] < corner_dirs[axis].len() {
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

/// Audit trail of the multilinear selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionAudit {
    pub input: usize,
    pub kept: usize,
    pub pruned: usize,
    pub stages: Vec<StageAudit>,
    /// Class count of each function.
    pub class_counts: Vec<usize>,
    /// Incidence level count available to each function.
    pub level_counts: Vec<usize>,
    /// `J = max class count`.
    pub max_classes: usize,
    /// `L = max level count`.
    pub max_levels: usize,
    /// `|core| . J^n . L^n >= kept`, in exact integer arithmetic.
    pub guarantee_holds: bool,
    pub transversality: f64,
    /// Worst ratio of the class-selection inequality over the kept cubes.
    pub class_slack: f64,
}

/// Result of the multilinear selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Core cubes together with the pruned cubes.
    pub selected: CubeCollection,
    /// Cubes surviving every pigeonhole stage.
    pub core: CubeCollection,
    pub pruned: CubeCollection,
    /// Chosen class index of each function.
    pub tuple: Vec<usize>,
    /// Packet indices of the chosen class of each function.
    pub classes: Vec<Vec<usize>>,
    /// Lower weight bound of the chosen class of each function.
    pub class_weights: Vec<f64>,
    /// Incidence level of each function on the core cubes.
    pub levels: Vec<u32>,
    /// `M_i`: counts on the core cubes lie in `[M_i, 2 M_i)`.
    pub multiplicities: Vec<u32>,
    /// Incidence counts of every core cube, indexed by cube then function.
    pub counts: Vec<Vec<u32>>,
    pub audit: SelectionAudit,
}

impl SelectionResult {
    /// Tubes of the chosen class of function `i`.
    pub fn class_tubes(&self, data: &[FunctionData], i: usize) -> Vec<Tube> {
        self.classes[i].iter().map(|&k| data[i].packets.packets[k].tube).collect()
    }
}

fn incidence_table(tubes: &[Vec<Tube>], cubes: &CubeCollection, eps: f64) -> Vec<Vec<u32>> {
    let index = IncidenceIndex::new(cubes);
    let per_fn: Vec<Vec<u32>> = tubes.iter().map(|t| index.counts(t, eps)).collect();
    (0..cubes.len()).map(|pos| per_fn.iter().map(|c| c[pos]).collect()).collect()
}

/// Prune, class-tuple and incidence-level pigeonholing of `cubes` for the
/// functions of `data`, with fat tubes of exponent `eps`.
pub fn select_multilinear(data: &[FunctionData], cubes: &CubeCollection, eps: f64) -> Result<SelectionResult> {
    let cfg = *cubes.config();
    let n = cfg.n;
    if data.len() != n {
        return Err(invalid("functions", format!("expected {n} functions, got {}", data.len())));
    }
    let supports: Vec<&[FreqBox]> = data.iter().map(|d| d.profile.support.as_slice()).collect();
    let transversality = support_transversality(&supports, n)?;
    if transversality < TRANSVERSALITY_THRESHOLD {
        return Err(Error::NotTransverse { volume: transversality, threshold: TRANSVERSALITY_THRESHOLD });
    }
    let pruning = prune_small_cubes(data, cubes)?;
    if pruning.kept.is_empty() {
        return Err(Error::Empty("cubes after pruning"));
    }
    let class_slack = class_selection_slack(data, &pruning.kept)?;

    let kept: Vec<DyadicCube> = pruning.kept.cubes().to_vec();
    let tuples: Vec<Vec<usize>> = kept.iter().map(|q| assign_class_tuple(data, q)).collect::<Result<_>>()?;
    let indexed: Vec<usize> = (0..kept.len()).collect();
    let (tuple, tuple_bucket, tuple_audit) = largest_bucket("class tuple", &indexed, |&i| tuples[i].clone());
    let qstar = CubeCollection::new(cfg, tuple_bucket.iter().map(|&i| kept[i]))?;

    let tubes: Vec<Vec<Tube>> = (0..n).map(|i| data[i].class_tubes(tuple[i])).collect();
    let counts = incidence_table(&tubes, &qstar, eps);
    let indexed: Vec<usize> = (0..qstar.len()).collect();
    let (levels, level_bucket, level_audit) =
        largest_bucket("incidence levels", &indexed, |&pos| counts[pos].iter().map(|&c| incidence_level(c)).collect::<Vec<_>>());
    let core = qstar.select(level_bucket.iter().copied());
    let core_counts: Vec<Vec<u32>> = level_bucket.iter().map(|&pos| counts[pos].clone()).collect();

    let class_counts: Vec<usize> = data.iter().map(|d| d.classes.len()).collect();
    let level_counts: Vec<usize> = tubes.iter().map(|t| level_count(t.len())).collect();
    let max_classes = *class_counts.iter().max().expect("n >= 2");
    let max_levels = *level_counts.iter().max().expect("n >= 2");
    let loss = (max_classes as u128).pow(n as u32) * (max_levels as u128).pow(n as u32);
    let guarantee_holds = core.len() as u128 * loss >= kept.len() as u128;

    let audit = SelectionAudit {
        input: cubes.len(),
        kept: kept.len(),
        pruned: pruning.discarded.len(),
        stages: vec![tuple_audit, level_audit],
        class_counts,
        level_counts,
        max_classes,
        max_levels,
        guarantee_holds,
        transversality,
        class_slack,
    };
    Ok(SelectionResult {
        selected: core.union(&pruning.discarded),
        pruned: pruning.discarded,
        classes: (0..n).map(|i| data[i].classes.classes[tuple[i]].members.clone()).collect(),
        class_weights: (0..n).map(|i| data[i].classes.classes[tuple[i]].lower).collect(),
        multiplicities: levels.iter().map(|&l| level_floor(l)).collect(),
        tuple,
        levels,
        counts: core_counts,
        core,
        audit,
    })
}

/// Audit trail of the linear selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearAudit {
    pub input: usize,
    pub kept: usize,
    pub stages: Vec<StageAudit>,
    /// Product of the bucket counts of all stages.
    pub bucket_total: usize,
    pub sigma: usize,
    /// `|Q*| . bucket_total . |Q| >= sigma . kept`.
    pub sigma_bound_holds: bool,
    /// Smallest incidence count on the selected cubes.
    pub min_count: u32,
    /// Packets whose tubes meet `[0, R]^n`.
    pub packet_count: usize,
    /// Dimension constant of the partition.
    pub slab_bound: usize,
    /// `M |Q*| <= D_n |T_R(f)|`.
    pub trivial_bound_holds: bool,
}

/// Result of the linear selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSelection {
    /// `Q*`: the selected cubes inside the chosen slab.
    pub qstar: CubeCollection,
    /// Cubes with uniform class and incidence level, over every slab.
    pub uniform: CubeCollection,
    /// Position of the chosen slab in the partition.
    pub slab: usize,
    pub class: usize,
    pub level: u32,
    /// `M`: counts on the uniform cubes lie in `[M, 2M)`.
    pub multiplicity: u32,
    pub audit: LinearAudit,
}

/// Class and incidence-level pigeonholing for one function, followed by the
/// choice of the slab where the uniform cubes are densest.
pub fn select_linear(data: &FunctionData, cubes: &CubeCollection, partition: &HorizontalPartition, eps: f64) -> Result<LinearSelection> {
    let cfg = *cubes.config();
    if partition.slabs.iter().any(|s| s.is_empty()) {
        return Err(Error::Empty("slab of the partition"));
    }
    let pruning = prune_small_cubes(std::slice::from_ref(data), cubes)?;
    if pruning.kept.is_empty() {
        return Err(Error::Empty("cubes after pruning"));
    }
    let kept: Vec<DyadicCube> = pruning.kept.cubes().to_vec();
    let classes: Vec<usize> = kept.iter().map(|q| data.dominant_class(q).map(|(j, _)| j)).collect::<Result<_>>()?;
    let indexed: Vec<usize> = (0..kept.len()).collect();
    let (class, class_bucket, class_audit) = largest_bucket("class", &indexed, |&i| classes[i]);
    let qclass = CubeCollection::new(cfg, class_bucket.iter().map(|&i| kept[i]))?;

    let tubes = data.class_tubes(class);
    let counts = IncidenceIndex::new(&qclass).counts(&tubes, eps);
    let indexed: Vec<usize> = (0..qclass.len()).collect();
    let (level, level_bucket, level_audit) = largest_bucket("incidence level", &indexed, |&pos| incidence_level(counts[pos]));
    let uniform = qclass.select(level_bucket.iter().copied());
    let min_count = level_bucket.iter().map(|&pos| counts[pos]).min().expect("nonempty bucket");

    let mut slab = 0;
    let mut best = (0usize, 1usize);
    for (j, s) in partition.slabs.iter().enumerate() {
        let hits = uniform.intersection(s).len();
        if hits as u128 * best.1 as u128 > best.0 as u128 * s.len() as u128 {
            best = (hits, s.len());
            slab = j;
        }
    }
    let qstar = uniform.intersection(&partition.slabs[slab]);
    let bucket_total = class_audit.buckets * level_audit.buckets;
    let multiplicity = level_floor(level);
    let packet_count = data.packets.packets.iter().filter(|p| p.meets_domain()).count();
    let audit = LinearAudit {
        input: cubes.len(),
        kept: kept.len(),
        stages: vec![class_audit, level_audit],
        bucket_total,
        sigma: partition.sigma,
        sigma_bound_holds: qstar.len() as u128 * bucket_total as u128 * cubes.len() as u128 >= partition.sigma as u128 * kept.len() as u128,
        min_count,
        packet_count,
        slab_bound: partition.bound,
        trivial_bound_holds: multiplicity as u128 * qstar.len() as u128 <= partition.bound as u128 * packet_count as u128,
    };
    Ok(LinearSelection { qstar, uniform, slab, class, level, multiplicity, audit })
}

/// Outcome of the restriction to one dyadic value bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Restriction {
    pub cubes: CubeCollection,
    /// Values of the selected cubes lie in `[2^level, 2^{level+1})`.
    pub level: i32,
    pub nonzero: usize,
    pub audit: StageAudit,
}

/// `floor(log2 v)` for positive finite `v`.
pub fn floor_log2(v: f64) -> i32 {
    let mut k = v.log2().floor() as i32;
    while 2f64.powi(k) > v {
        k -= 1;
    }
    while 2f64.powi(k + 1) <= v {
        k += 1;
    }
    k
}

/// Largest sub-collection whose values lie in one dyadic interval
/// `[2^k, 2^{k+1})`, after dropping zero values.
pub fn essentially_constant_restrict(cubes: &CubeCollection, values: &[f64]) -> Result<Restriction> {
    if values.len() != cubes.len() {
        return Err(invalid("values", format!("{} values for {} cubes", values.len(), cubes.len())));
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(invalid("values", format!("value {v} is not a finite nonnegative number")));
    }
    let nonzero: Vec<usize> = (0..values.len()).filter(|&i| values[i] > 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::Empty("nonzero values to restrict"));
    }
    let (level, bucket, audit) = largest_bucket("essentially constant", &nonzero, |&i| floor_log2(values[i]));
    Ok(Restriction { cubes: cubes.select(bucket), level, nonzero: nonzero.len(), audit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScaleConfig;

    fn line(cfg: &ScaleConfig, count: u32) -> CubeCollection {
        CubeCollection::new(*cfg, (0..count).map(|x| DyadicCube::from_cell(cfg, &[x, 0]).unwrap())).unwrap()
    }

    #[test]
    fn incidence_levels_are_dyadic() {
        assert_eq!(incidence_level(0), 0);
        for count in 1..1000u32 {
            let m = level_floor(incidence_level(count));
            assert!(m <= count && count < 2 * m);
        }
        assert_eq!(level_count(0), 1);
        assert_eq!(level_count(1), 2);
        assert_eq!(level_count(7), 4);
        assert_eq!(level_count(8), 5);
    }

    #[test]
    fn restriction_examples() {
        let cfg = ScaleConfig::new(2, 64, 0.1).unwrap();
        let q = line(&cfg, 4);
        let r = essentially_constant_restrict(&q, &[1.0, 2.1, 4.5, 1.5]).unwrap();
        assert_eq!(r.cubes.len(), 2);
        assert_eq!(r.level, 0);
        assert_eq!(r.audit.buckets, 3);
        let split = essentially_constant_restrict(&q, &[3.0, 3.5, 4.0, 5.0]).unwrap();
        assert_eq!(split.cubes.len(), 2);
        assert_eq!(split.level, 1);
        let zeros = essentially_constant_restrict(&q, &[0.0, 0.0, 7.0, 0.0]).unwrap();
        assert_eq!((zeros.cubes.len(), zeros.nonzero), (1, 1));
        assert!(essentially_constant_restrict(&q, &[0.0; 4]).is_err());
        assert!(essentially_constant_restrict(&q, &[1.0, -1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn floor_log2_at_powers_of_two() {
        for k in -60..60 {
            let v = 2f64.powi(k);
            assert_eq!(floor_log2(v), k);
            assert_eq!(floor_log2(v * 1.999), k);
            assert_eq!(floor_log2(v * 0.999), k - 1);
        }
    }

    #[test]
    fn largest_bucket_prefers_first_key_on_ties() {
        let (key, items, audit) = largest_bucket("test", &[5u32, 1, 6, 2], |&v| v % 2);
        assert_eq!(key, 0);
        assert_eq!(items, vec![6, 2]);
        assert!(audit.holds() && audit.buckets == 2);
    }

    #[test]
    fn transversality_of_separated_intervals() {
        let left = [FreqBox::interval(-1.0, -0.25).unwrap()];
        let right = [FreqBox::interval(0.25, 1.0).unwrap()];
        let v = support_transversality(&[&left, &right], 2).unwrap();
        assert!((v - 0.8).abs() < 1e-12);
        let overlap = [FreqBox::interval(-0.5, 0.5).unwrap()];
        assert!(support_transversality(&[&overlap, &overlap], 2).unwrap() < 1e-12);
    }
}
