//! Wave packet decomposition of sampled profiles.
//!
//! The frequency domain is split into caps of side `R^{-1/2}`.  On each cap
//! the profile is expanded in the orthonormal modes
//! `e_{theta,v} = R^{(n-1)/4} e(v . xi) 1_theta` with `v` in `R^{1/2} Z^{n-1}`.
//! On the sampling grid a cap holds `K` samples per axis and the modes with
//! `v` ranging over one period `K R^{1/2}` are exactly orthonormal, so the
//! coefficients are obtained with one DFT of size `K` per axis and cap.
//! Each mode is represented by the translate whose tube passes closest to the
//! center of `[0, R]^n`, and only modes whose tube meets the spatial window
//! are kept; the remaining modes form the residual.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extension::{abs_pow, cis_turns, evaluate_direct, evaluate_fast, FreqBox, Profile, ProfileGrid, ProfileTag, SampledField};
use crate::geometry::{sqrt_scale, CubeCollection, ScaleConfig, Tube, MAX_DIM};

/// Default dilation factor of the spatial window `[-R, 2R]^n`.
pub const DEFAULT_WINDOW_FACTOR: f64 = 3.0;

/// Coefficients at most this multiple of `||f||_2` count as exact zeros.
pub const ZERO_COEFFICIENT: f64 = 1e-13;

/// Cap of side `R^{-1/2}` in the partition of `[-1, 1]^{n-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cap {
    pub index: [u32; MAX_DIM - 1],
    pub lo: [f64; MAX_DIM - 1],
    pub center: [f64; MAX_DIM - 1],
    pub side: f64,
}

/// The `(2 R^{1/2})^{n-1}` caps, first axis fastest.
pub fn cap_partition(n: usize, r: u32) -> Result<Vec<Cap>> {
    if !(2..=MAX_DIM).contains(&n) {
        return Err(invalid("n", format!("{n} is not 2 or 3")));
    }
    crate::geometry::validate_scale(r)?;
    let per = 2 * sqrt_scale(r);
    let side = 1.0 / sqrt_scale(r) as f64;
    let count = (per as usize).pow(n as u32 - 1);
    Ok((0..count)
        .map(|flat| {
            let mut cap = Cap { index: [0; 2], lo: [0.0; 2], center: [0.0; 2], side };
            let mut rest = flat as u32;
            for axis in 0..n - 1 {
                let i = rest % per;
                rest /= per;
                cap.index[axis] = i;
                cap.lo[axis] = -1.0 + i as f64 * side;
                cap.center[axis] = cap.lo[axis] + side / 2.0;
            }
            cap
        })
        .collect())
}

/// Center of the cap with the given per-axis index.
pub fn cap_center(r: u32, index: u32) -> f64 {
    let side = 1.0 / sqrt_scale(r) as f64;
    -1.0 + (index as f64 + 0.5) * side
}

/// One term `F_T = E(c e_{theta,v})` of the decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub tube: Tube,
    pub coeff: Complex64,
    /// `|c| R^{-(n-1)/4}`, the size of `|F_T|` on the tube.
    pub weight: f64,
}

impl WavePacket {
    /// The cap-localized profile piece `c e_{theta,v}` on `grid`.
    pub fn piece(&self, grid: ProfileGrid) -> Result<Profile> {
        let n = grid.n;
        let k = grid.samples_per_cap as usize;
        let amp = self.coeff * (grid.r as f64).powf((n as f64 - 1.0) / 4.0);
        let v = self.tube.translate();
        let mut samples = vec![Complex64::new(0.0, 0.0); grid.len()];
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        let side = 1.0 / sqrt_scale(grid.r) as f64;
        for axis in 0..n - 1 {
            lo[axis] = -1.0 + self.tube.cap[axis] as f64 * side;
            hi[axis] = lo[axis] + side;
        }
        let m = grid.per_axis();
        let base: Vec<usize> = (0..n - 1).map(|a| self.tube.cap[a] as usize * k).collect();
        let phase_axis = |axis: usize, j: usize| cis_turns(v[axis] * grid.coordinate(base[axis] + j));
        if n == 2 {
            for j in 0..k {
                samples[base[0] + j] = amp * phase_axis(0, j);
            }
        } else {
            for j2 in 0..k {
                let p2 = phase_axis(1, j2);
                for j1 in 0..k {
                    samples[(base[1] + j2) * m + base[0] + j1] = amp * phase_axis(0, j1) * p2;
                }
            }
        }
        let support = vec![FreqBox::new(&lo[..n - 1], &hi[..n - 1])?];
        Ok(Profile { grid, support, samples, tag: ProfileTag::Packets { count: 1 } })
    }

    /// Whether the tube of the packet meets `[0, R]^n`.
    pub fn meets_domain(&self) -> bool {
        self.tube.meets_domain()
    }
}

/// Result of [`decompose`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PacketSet {
    pub grid: ProfileGrid,
    pub packets: Vec<WavePacket>,
    pub parent_norm: f64,
    /// `L^2` norm of the dropped modes.
    pub residual: f64,
    pub window_factor: f64,
}

impl PacketSet {
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn coefficient_energy(&self) -> f64 {
        self.packets.iter().map(|p| p.coeff.norm_sqr()).sum()
    }

    /// `|residual^2 + sum |c|^2 - ||f||^2| / ||f||^2`.
    pub fn parseval_defect(&self) -> f64 {
        let total = self.parent_norm * self.parent_norm;
        if total == 0.0 {
            return 0.0;
        }
        ((self.residual * self.residual + self.coefficient_energy()) - total).abs() / total
    }

    pub fn tubes(&self) -> Vec<Tube> {
        self.packets.iter().map(|p| p.tube).collect()
    }

    /// Profile `sum_T c_T e_T` over the packets at the given positions.
    pub fn synthesize_subset(&self, positions: &[usize]) -> Result<Profile> {
        synthesize(self.grid, positions.iter().map(|&i| &self.packets[i]))
    }

    /// Profile `sum_T c_T e_T` over every packet.
    pub fn synthesize(&self) -> Result<Profile> {
        synthesize(self.grid, self.packets.iter())
    }
}

/// Spatial window `[lo, hi]^n`: the dilation of `[-R, 2R]^n` about its center.
pub fn window_bounds(r: u32, window_factor: f64) -> (f64, f64) {
    let r = r as f64;
    let center = r / 2.0;
    let half = 1.5 * r * window_factor;
    (center - half, center + half)
}

/// Integer translate index `m` (translate `m R^{1/2}`) of mode `d` closest to
/// the representative center `center` (in units of `R^{1/2}`).
fn representative(d: i64, k: i64, center: f64) -> i64 {
    let t = ((center + k as f64 / 2.0 - d as f64) / k as f64).floor() as i64;
    d + k * t
}

/// Center, in units of `R^{1/2}`, of the translates whose tubes pass through
/// the middle of `[0, R]^n`: the axis at `x_n = R/2` sits at `x' = R/2`.
fn representative_center(r: u32, xi: f64) -> f64 {
    -(0.5 + xi) * sqrt_scale(r) as f64
}

/// Decomposes `f` into wave packets, keeping the modes whose tubes meet the
/// window `window_factor . [-R, 2R]^n` and which are not exact zeros.
pub fn decompose(profile: &Profile, window_factor: f64) -> Result<PacketSet> {
    if !(window_factor >= 1.0) {
        return Err(invalid("window_factor", format!("{window_factor} is below 1")));
    }
    let grid = profile.grid;
    let n = grid.n;
    let r = grid.r;
    let cfg = ScaleConfig::new(n, r, 0.25)?;
    let k = grid.samples_per_cap as usize;
    let m = grid.per_axis();
    let sqrt_r = sqrt_scale(r) as f64;
    let norm_factor = (r as f64).powf((n as f64 - 1.0) / 4.0) * grid.cell_volume();
    let parent_norm = profile.l2_norm();
    let zero = ZERO_COEFFICIENT * parent_norm;
    let (w_lo, w_hi) = window_bounds(r, window_factor);
    let fft = FftPlanner::new().plan_fft_forward(k);
    let mut packets = Vec::new();
    let mut residual_sq = 0.0;
    let mut block = vec![Complex64::new(0.0, 0.0); k.pow(n as u32 - 1)];
    for cap in cap_partition(n, r)? {
        let base: Vec<usize> = (0..n - 1).map(|a| cap.index[a] as usize * k).collect();
        let mut nonzero = false;
        for (local, slot) in block.iter_mut().enumerate() {
            let flat = if n == 2 { base[0] + local } else { (base[1] + local / k) * m + base[0] + local % k };
            *slot = profile.samples[flat];
            nonzero |= slot.re != 0.0 || slot.im != 0.0;
        }
        if !nonzero {
            continue;
        }
        fft.process(&mut block);
        if n == 3 {
            let mut column = vec![Complex64::new(0.0, 0.0); k];
            for j1 in 0..k {
                for j2 in 0..k {
                    column[j2] = block[j2 * k + j1];
                }
                fft.process(&mut column);
                for j2 in 0..k {
                    block[j2 * k + j1] = column[j2];
                }
            }
        }
        let first: Vec<f64> = (0..n - 1).map(|a| grid.coordinate(base[a])).collect();
        let centers: Vec<f64> = (0..n - 1).map(|a| representative_center(r, cap.center[a])).collect();
        for (mode, value) in block.iter().enumerate() {
            let d = [(mode % k) as i64, (mode / k) as i64];
            let mut shift = [0i64; 2];
            let mut phase_arg = 0.0;
            for axis in 0..n - 1 {
                shift[axis] = representative(d[axis], k as i64, centers[axis]);
                phase_arg += shift[axis] as f64 * sqrt_r * first[axis];
            }
            let coeff = value * cis_turns(-phase_arg) * norm_factor;
            let tube = Tube::new(&cfg, &cap.index[..n - 1], &cap.center[..n - 1], &shift[..n - 1])?;
            if coeff.norm() <= zero || tube.axis_range_in_box(w_lo, w_hi, w_lo, w_hi).is_none() {
                residual_sq += coeff.norm_sqr();
                continue;
            }
            packets.push(WavePacket { tube, coeff, weight: coeff.norm() / (r as f64).powf((n as f64 - 1.0) / 4.0) });
        }
    }
    Ok(PacketSet { grid, packets, parent_norm, residual: residual_sq.sqrt(), window_factor })
}

/// Profile `sum c_T e_T` for an arbitrary list of packets on `grid`.
pub fn synthesize<'a>(grid: ProfileGrid, packets: impl Iterator<Item = &'a WavePacket>) -> Result<Profile> {
    let n = grid.n;
    let k = grid.samples_per_cap as usize;
    let m = grid.per_axis();
    let r = grid.r;
    let sqrt_r = sqrt_scale(r) as f64;
    let amp = (r as f64).powf((n as f64 - 1.0) / 4.0);
    let mut by_cap: std::collections::BTreeMap<[u32; 2], Vec<Complex64>> = Default::default();
    for p in packets {
        if p.tube.scale != r || p.tube.dim() != n {
            return Err(invalid("packets", "packet scale does not match the grid"));
        }
        let block = by_cap.entry(p.tube.cap).or_insert_with(|| vec![Complex64::new(0.0, 0.0); k.pow(n as u32 - 1)]);
        let mut phase_arg = 0.0;
        let mut mode = 0usize;
        for axis in (0..n - 1).rev() {
            let shift = p.tube.shift[axis];
            phase_arg += shift as f64 * sqrt_r * grid.coordinate(p.tube.cap[axis] as usize * k);
            mode = mode * k + shift.rem_euclid(k as i64) as usize;
        }
        block[mode] += p.coeff * amp * cis_turns(phase_arg);
    }
    let fft = FftPlanner::new().plan_fft_inverse(k);
    let mut samples = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut support = Vec::new();
    let side = 1.0 / sqrt_r;
    for (cap, mut block) in by_cap {
        fft.process(&mut block);
        if n == 3 {
            let mut column = vec![Complex64::new(0.0, 0.0); k];
            for j1 in 0..k {
                for j2 in 0..k {
                    column[j2] = block[j2 * k + j1];
                }
                fft.process(&mut column);
                for j2 in 0..k {
                    block[j2 * k + j1] = column[j2];
                }
            }
        }
        let base: Vec<usize> = (0..n - 1).map(|a| cap[a] as usize * k).collect();
        for (local, v) in block.iter().enumerate() {
            let flat = if n == 2 { base[0] + local } else { (base[1] + local / k) * m + base[0] + local % k };
            samples[flat] = *v;
        }
        let lo: Vec<f64> = (0..n - 1).map(|a| -1.0 + cap[a] as f64 * side).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + side).collect();
        support.push(FreqBox::new(&lo, &hi)?);
    }
    if support.is_empty() {
        support.push(FreqBox::full(n));
    }
    Ok(Profile { grid, support, samples, tag: ProfileTag::Packets { count: 0 } })
}

/// Evaluates `sum_T F_T` at the given points.
pub fn reconstruct(packets: &PacketSet, points: &[[f64; MAX_DIM]]) -> Result<Vec<Complex64>> {
    evaluate_direct(&packets.synthesize()?, points)
}

/// Samples of `F_T` on the lattice of spacing `h` inside `region`.
pub fn packet_field(packet: &WavePacket, grid: ProfileGrid, region: &CubeCollection, h: f64) -> Result<SampledField> {
    evaluate_fast(&packet.piece(grid)?, region, h)
}

/// Packet specification used to build profiles directly in the packet basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub cap: [u32; MAX_DIM - 1],
    pub shift: [i64; MAX_DIM - 1],
    pub coeff: Complex64,
}

/// Profile `sum c e_{theta,v}` for explicit cap indices and translates.
pub fn packet_profile(grid: ProfileGrid, specs: &[PacketSpec]) -> Result<Profile> {
    let cfg = ScaleConfig::new(grid.n, grid.r, 0.25)?;
    let m = grid.n - 1;
    let packets: Vec<WavePacket> = specs
        .iter()
        .map(|s| {
            let center: Vec<f64> = (0..m).map(|a| cap_center(grid.r, s.cap[a])).collect();
            let tube = Tube::new(&cfg, &s.cap[..m], &center, &s.shift[..m])?;
            Ok(WavePacket { tube, coeff: s.coeff, weight: 0.0 })
        })
        .collect::<Result<_>>()?;
    let mut profile = synthesize(grid, packets.iter())?;
    profile.tag = ProfileTag::Packets { count: specs.len() };
    Ok(profile)
}

/// Value at `u` of the normalized cap template
/// `G(u, t) = R^{1/4} delta sum_j e(chi_j u + chi_j^2 t)` over the samples
/// `chi_j` of a cap centered at zero.  For a packet of cap center `xi` and
/// translate `v`, `|F_T(x)| = |c| |G(x_1 + v + 2 xi x_2, x_2)|` when `n = 2`,
/// and the product of two such factors when `n = 3`.
pub fn cap_template(grid: &ProfileGrid, u: f64, t: f64) -> Complex64 {
    let k = grid.samples_per_cap as usize;
    let delta = grid.spacing();
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..k {
        let chi = (j as f64 + 0.5 - k as f64 / 2.0) * delta;
        acc += cis_turns(chi * u + chi * chi * t);
    }
    acc * delta * (grid.r as f64).powf(0.25)
}

/// Norms `||F_T||_{L^p}` over the intersection of `[0, R]^n` with the
/// `fat_multiple`-fold dilation of each tube, computed from prefix integrals
/// of `|G|^p` along the sheared coordinate.
pub struct PacketNorms {
    grid: ProfileGrid,
    p: f64,
    step: f64,
    fat_radius: f64,
    u_min: f64,
    cols: usize,
    heights: Vec<f64>,
    prefix: Vec<f64>,
}

impl PacketNorms {
    /// Tables for exponent `p` at spatial step `h`, with fat radius
    /// `fat_multiple . R^{1/2}`.
    pub fn new(grid: ProfileGrid, h: f64, p: f64, fat_multiple: f64) -> Result<Self> {
        if p < 1.0 {
            return Err(invalid("p", format!("exponent {p} is below 1")));
        }
        let q = crate::extension::sampling_step(h)? as usize;
        let n = grid.n;
        let r = grid.r as f64;
        let fat_radius = fat_multiple * r.sqrt();
        let reach = fat_radius * (1.0 + 4.0 * (n as f64 - 1.0)).sqrt();
        let period = 1.0 / grid.spacing();
        let k = grid.samples_per_cap as usize;
        let nfft = (period * q as f64).round() as usize;
        let cols = ((2.0 * reach) * q as f64).ceil() as usize + 1;
        if cols >= nfft {
            return Err(invalid("fat_multiple", "fat neighborhood exceeds the spatial period of the grid"));
        }
        let u_min = -(cols as f64 - 1.0) / 2.0 * h;
        let rows = (grid.r as usize * q).min(257);
        let heights: Vec<f64> = (0..rows)
            .map(|i| {
                if rows == 1 {
                    r / 2.0
                } else {
                    h / 2.0 + (r - h) * i as f64 / (rows - 1) as f64
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_inverse(nfft);
        let delta = grid.spacing();
        let norm = delta * r.powf(0.25);
        let chi: Vec<f64> = (0..k).map(|j| (j as f64 + 0.5 - k as f64 / 2.0) * delta).collect();
        let mut prefix = vec![0.0; rows * cols];
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        for (row, &t) in heights.iter().enumerate() {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for j in 0..k {
                buf[j] = cis_turns(chi[j] * u_min + chi[j] * chi[j] * t);
            }
            fft.process(&mut buf);
            let out = &mut prefix[row * cols..(row + 1) * cols];
            let mut prev = 0.0;
            let mut acc = 0.0;
            for (c, slot) in out.iter_mut().enumerate() {
                let g = abs_pow(buf[c] * cis_turns(chi[0] * c as f64 * h) * norm, p);
                if c > 0 {
                    acc += h * (prev + g) / 2.0;
                }
                *slot = acc;
                prev = g;
            }
        }
        Ok(Self { grid, p, step: h, fat_radius, u_min, cols, heights, prefix })
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    /// `int_{a}^{b} |G(u, t)|^p du`, interpolated in `u` and `t`.
    fn segment_integral(&self, a: f64, b: f64, t: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let rows = self.heights.len();
        let (r0, r1, w) = if rows == 1 {
            (0, 0, 0.0)
        } else {
            let span = self.heights[rows - 1] - self.heights[0];
            let x = ((t - self.heights[0]) / span * (rows - 1) as f64).clamp(0.0, (rows - 1) as f64);
            let r0 = (x.floor() as usize).min(rows - 2);
            (r0, r0 + 1, x - r0 as f64)
        };
        let at = |row: usize, u: f64| {
            let x = ((u - self.u_min) / self.step).clamp(0.0, (self.cols - 1) as f64);
            let c0 = (x.floor() as usize).min(self.cols - 2);
            let f = x - c0 as f64;
            let base = row * self.cols;
            self.prefix[base + c0] * (1.0 - f) + self.prefix[base + c0 + 1] * f
        };
        let lower = (1.0 - w) * at(r0, a) + w * at(r1, a);
        let upper = (1.0 - w) * at(r0, b) + w * at(r1, b);
        (upper - lower).max(0.0)
    }

    /// `||F_T||_{L^p}` over the fat neighborhood of the tube within the
    /// slab `0 <= x_n <= R`.
    pub fn packet_norm(&self, packet: &WavePacket) -> f64 {
        self.fat_norm(packet, false)
    }

    /// `||F_T||_{L^p}` over the fat neighborhood intersected with `[0, R]^n`.
    pub fn packet_norm_in_domain(&self, packet: &WavePacket) -> f64 {
        self.fat_norm(packet, true)
    }

    fn fat_norm(&self, packet: &WavePacket, clip: bool) -> f64 {
        let n = self.grid.n;
        let r = self.grid.r as f64;
        let rows = (r / self.step).round() as usize;
        let v = packet.tube.translate();
        let xi = packet.tube.cap_center;
        let xi_sq: f64 = xi[..n - 1].iter().map(|x| x * x).sum();
        let half = self.fat_radius * (1.0 + 4.0 * xi_sq).sqrt();
        let mut total = 0.0;
        for i in 0..rows {
            let t = (i as f64 + 0.5) * self.step;
            let mut row = 1.0;
            for axis in 0..n - 1 {
                let (a, b) = if clip {
                    let s = v[axis] + 2.0 * xi[axis] * t;
                    (s.max(-half), (s + r).min(half))
                } else {
                    (-half, half)
                };
                row *= self.segment_integral(a, b, t);
                if row == 0.0 {
                    break;
                }
            }
            total += row * self.step;
        }
        packet.coeff.norm() * total.powf(1.0 / self.p)
    }
}

/// Dyadic class of packets with weights in `[lower, 2 lower)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightClass {
    pub level: u32,
    pub lower: f64,
    pub members: Vec<usize>,
}

/// Partition of the packets into dyadic weight classes above a floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightClasses {
    pub classes: Vec<WeightClass>,
    pub floor: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub dropped: Vec<usize>,
    /// `L^2` norm of the profile pieces of the dropped packets.
    pub dropped_mass: f64,
}

impl WeightClasses {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Scale factor that brings the top class into `[1, 2)`.
    pub fn top_normalization(&self) -> f64 {
        1.0 / self.classes.last().map_or(1.0, |c| c.lower)
    }
}

/// Default floor exponent `20 n`: packets below `R^{-20n} max w` are dropped.
pub fn default_floor_exponent(n: usize) -> f64 {
    20.0 * n as f64
}

/// Groups the packets into dyadic classes `[2^k w_min, 2^{k+1} w_min)` after
/// dropping those with weight below `R^{-floor_exp} max w`.
pub fn weight_classes(packets: &PacketSet, floor_exp: f64) -> Result<WeightClasses> {
    let r = packets.grid.r as f64;
    let max_weight = packets.packets.iter().map(|p| p.weight).fold(0.0, f64::max);
    if max_weight <= 0.0 {
        return Err(Error::Empty("packets above the weight floor"));
    }
    let floor = r.powf(-floor_exp) * max_weight;
    let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..packets.len()).partition(|&i| packets.packets[i].weight >= floor);
    let min_weight = kept.iter().map(|&i| packets.packets[i].weight).fold(f64::INFINITY, f64::min);
    let mut by_level: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for &i in &kept {
        by_level.entry(dyadic_level(packets.packets[i].weight, min_weight)).or_default().push(i);
    }
    let classes = by_level
        .into_iter()
        .map(|(level, members)| WeightClass { level, lower: min_weight * 2f64.powi(level as i32), members })
        .collect();
    let dropped_mass = dropped.iter().map(|&i| packets.packets[i].coeff.norm_sqr()).sum::<f64>().sqrt();
    Ok(WeightClasses { classes, floor, min_weight, max_weight, dropped, dropped_mass })
}

/// The integer `k >= 0` with `2^k base <= value < 2^{k+1} base`.
pub fn dyadic_level(value: f64, base: f64) -> u32 {
    let mut k = (value / base).log2().floor().max(0.0) as i32;
    while k > 0 && value < base * 2f64.powi(k) {
        k -= 1;
    }
    while value >= base * 2f64.powi(k + 1) {
        k += 1;
    }
    k as u32
}

/// `L^2` norm of a profile piece with weight `w`.
pub fn piece_norm(weight: f64, n: usize, r: u32) -> f64 {
    weight * (r as f64).powf((n as f64 - 1.0) / 4.0)
}
