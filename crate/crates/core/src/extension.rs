//! Frequency profiles on `[-1, 1]^{n-1}` and numerical evaluation of the
//! extension operator `Ef(x) = int f(xi) e(xi . x' + |xi|^2 x_n) dxi` with
//! `e(t) = exp(2 pi i t)`.
//!
//! Profiles are sampled at the centers of a uniform grid of spacing `delta`,
//! so the quadrature is the midpoint rule.  Both evaluation paths compute the
//! same finite sum: [`evaluate_direct`] point by point, and the slice engine
//! with one FFT per horizontal slice `{x_n = const}`.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{sqrt_scale, validate_scale, CubeCollection, DyadicCube, MAX_DIM};

/// `e(t) = exp(2 pi i t)`, with the integer part of `t` removed first.
pub fn cis_turns(t: f64) -> Complex64 {
    let (s, c) = (TAU * (t - t.round())).sin_cos();
    Complex64::new(c, s)
}

/// Largest number of profile samples accepted by the evaluation code.
pub const MAX_PROFILE_SAMPLES: usize = 1 << 23;

/// Samples per cap and axis of the standard grid, as a multiple of `R^{1/2}`.
pub const STANDARD_OVERSAMPLING: u32 = 16;

/// Uniform midpoint grid on `[-1, 1]^{n-1}` subordinate to the cap partition
/// at scale `R`: each cap of side `R^{-1/2}` holds `samples_per_cap` samples
/// per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileGrid {
    pub n: usize,
    pub r: u32,
    pub samples_per_cap: u32,
}

impl ProfileGrid {
    /// Grid with spacing `1/(16 R)`, fine enough for direct evaluation on
    /// `[0, R]^n`.
    pub fn standard(n: usize, r: u32) -> Result<Self> {
        Self::new(n, r, STANDARD_OVERSAMPLING * sqrt_scale(r))
    }

    pub fn new(n: usize, r: u32, samples_per_cap: u32) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&n) {
            return Err(invalid("n", format!("{n} is not 2 or 3")));
        }
        validate_scale(r)?;
        if samples_per_cap == 0 {
            return Err(invalid("samples_per_cap", "must be positive"));
        }
        let grid = Self { n, r, samples_per_cap };
        if grid.len() > MAX_PROFILE_SAMPLES {
            return Err(invalid(
                "R",
                format!("a profile at n = {n}, R = {r} needs {} samples, above {MAX_PROFILE_SAMPLES}", grid.len()),
            ));
        }
        Ok(grid)
    }

    pub fn caps_per_axis(&self) -> usize {
        2 * sqrt_scale(self.r) as usize
    }

    pub fn per_axis(&self) -> usize {
        self.caps_per_axis() * self.samples_per_cap as usize
    }

    pub fn len(&self) -> usize {
        self.per_axis().pow(self.n as u32 - 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 / self.per_axis() as f64
    }

    /// Coordinate of the `i`-th sample along an axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        -1.0 + (i as f64 + 0.5) * self.spacing()
    }

    /// Volume element `delta^{n-1}` of the quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.n as i32 - 1)
    }

    /// Multi-index of a flat sample index, first axis fastest.
    pub fn unflatten(&self, flat: usize) -> [usize; MAX_DIM - 1] {
        let m = self.per_axis();
        if self.n == 2 {
            [flat, 0]
        } else {
            [flat % m, flat / m]
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        if self.n == 2 {
            idx[0]
        } else {
            idx[1] * self.per_axis() + idx[0]
        }
    }

    pub fn sample_point(&self, flat: usize) -> [f64; MAX_DIM - 1] {
        let idx = self.unflatten(flat);
        let mut xi = [0.0; MAX_DIM - 1];
        for axis in 0..self.n - 1 {
            xi[axis] = self.coordinate(idx[axis]);
        }
        xi
    }
}

/// Axis-parallel box `[lo, hi]` inside `[-1, 1]^{n-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqBox {
    pub lo: [f64; MAX_DIM - 1],
    pub hi: [f64; MAX_DIM - 1],
}

impl FreqBox {
    pub fn new(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() >= MAX_DIM {
            return Err(invalid("support", "box corners must have matching lengths 1 or 2"));
        }
        let mut b = Self { lo: [0.0; 2], hi: [0.0; 2] };
        for axis in 0..lo.len() {
            if !(-1.0 <= lo[axis] && lo[axis] < hi[axis] && hi[axis] <= 1.0) {
                return Err(Error::OutOfDomain(format!("box [{lo:?}, {hi:?}] is not inside [-1, 1]")));
            }
            b.lo[axis] = lo[axis];
            b.hi[axis] = hi[axis];
        }
        Ok(b)
    }

    /// The full frequency domain `[-1, 1]^{n-1}`.
    pub fn full(n: usize) -> Self {
        let mut b = Self { lo: [0.0; 2], hi: [0.0; 2] };
        for axis in 0..n - 1 {
            b.lo[axis] = -1.0;
            b.hi[axis] = 1.0;
        }
        b
    }

    /// Interval `[lo, hi]` for `n = 2`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(&[lo], &[hi])
    }

    pub fn contains(&self, xi: &[f64]) -> bool {
        xi.iter().enumerate().all(|(axis, &x)| self.lo[axis] <= x && x < self.hi[axis])
    }

    /// The `2^{n-1}` corners of the box.
    pub fn corners(&self, n: usize) -> Vec<[f64; MAX_DIM - 1]> {
        let m = n - 1;
        (0..1usize << m)
            .map(|mask| {
                let mut c = [0.0; MAX_DIM - 1];
                for (axis, value) in c.iter_mut().enumerate().take(m) {
                    *value = if mask >> axis & 1 == 1 { self.hi[axis] } else { self.lo[axis] };
                }
                c
            })
            .collect()
    }

    /// Product bump `prod exp(1 - 1/(1 - t^2))` rescaled to the box.
    pub fn bump(&self, xi: &[f64]) -> f64 {
        let mut value = 1.0;
        for (axis, &x) in xi.iter().enumerate() {
            let t = (2.0 * x - self.lo[axis] - self.hi[axis]) / (self.hi[axis] - self.lo[axis]);
            if t.abs() >= 1.0 {
                return 0.0;
            }
            value *= (1.0 - 1.0 / (1.0 - t * t)).exp();
        }
        value
    }
}

/// Description of how a profile was generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileTag {
    Zero,
    Constant { re: f64, im: f64 },
    Bump { focus: Option<[f64; MAX_DIM]> },
    RandomPhase { seed: u64, foci: usize },
    Noise { seed: u64 },
    Packets { count: usize },
    Custom,
}

/// Sampled frequency profile supported on a union of boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub grid: ProfileGrid,
    pub support: Vec<FreqBox>,
    pub samples: Vec<Complex64>,
    pub tag: ProfileTag,
}

impl Profile {
    /// Profile from explicit samples; samples outside the support must vanish.
    pub fn from_samples(grid: ProfileGrid, support: Vec<FreqBox>, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(invalid("samples", format!("{} samples for a grid of {}", samples.len(), grid.len())));
        }
        let profile = Self { grid, support, samples, tag: ProfileTag::Custom };
        profile.validate_support()?;
        Ok(profile)
    }

    fn validate_support(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::Empty("profile support"));
        }
        for (flat, v) in self.samples.iter().enumerate() {
            if *v != Complex64::new(0.0, 0.0) && !self.in_support(flat) {
                return Err(invalid("samples", format!("nonzero sample {flat} outside the declared support")));
            }
        }
        Ok(())
    }

    pub fn in_support(&self, flat: usize) -> bool {
        let xi = self.grid.sample_point(flat);
        self.support.iter().any(|b| b.contains(&xi[..self.grid.n - 1]))
    }

    /// Profile with values `value(xi)` on the support and zero elsewhere.
    pub fn tabulate(
        grid: ProfileGrid,
        support: Vec<FreqBox>,
        tag: ProfileTag,
        mut value: impl FnMut(&[f64]) -> Complex64,
    ) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::Empty("profile support"));
        }
        let m = grid.n - 1;
        let samples = (0..grid.len())
            .map(|flat| {
                let xi = grid.sample_point(flat);
                if support.iter().any(|b| b.contains(&xi[..m])) {
                    value(&xi[..m])
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Ok(Self { grid, support, samples, tag })
    }

    pub fn zero(grid: ProfileGrid, support: Vec<FreqBox>) -> Result<Self> {
        Self::tabulate(grid, support, ProfileTag::Zero, |_| Complex64::new(0.0, 0.0))
    }

    pub fn constant(grid: ProfileGrid, support: Vec<FreqBox>, value: Complex64) -> Result<Self> {
        Self::tabulate(grid, support, ProfileTag::Constant { re: value.re, im: value.im }, |_| value)
    }

    /// Smooth bump on each support box, optionally modulated so that `Ef`
    /// concentrates at `focus`.
    pub fn bump(grid: ProfileGrid, support: Vec<FreqBox>, focus: Option<[f64; MAX_DIM]>) -> Result<Self> {
        let boxes = support.clone();
        let n = grid.n;
        Self::tabulate(grid, support, ProfileTag::Bump { focus }, |xi| {
            let amp: f64 = boxes.iter().map(|b| b.bump(xi)).sum();
            let phase = focus.map_or(Complex64::new(1.0, 0.0), |c| focusing_phase(xi, &c, n));
            phase * amp
        })
    }

    /// Bump times a normalized sum of modulations focusing at `foci` points
    /// drawn uniformly from `[0, R]^n` with uniformly random phases.
    pub fn random_phase(grid: ProfileGrid, support: Vec<FreqBox>, seed: u64, foci: usize) -> Result<Self> {
        if foci == 0 {
            return Err(invalid("foci", "must be positive"));
        }
        let n = grid.n;
        let r = grid.r as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<([f64; MAX_DIM], Complex64)> = (0..foci)
            .map(|_| {
                let mut c = [0.0; MAX_DIM];
                for v in c.iter_mut().take(n) {
                    *v = rng.gen::<f64>() * r;
                }
                (c, cis_turns(rng.gen::<f64>()))
            })
            .collect();
        let norm = (foci as f64).sqrt();
        let boxes = support.clone();
        Self::tabulate(grid, support, ProfileTag::RandomPhase { seed, foci }, |xi| {
            let amp: f64 = boxes.iter().map(|b| b.bump(xi)).sum();
            let sum: Complex64 = points.iter().map(|(c, a)| a * focusing_phase(xi, c, n)).sum();
            sum * (amp / norm)
        })
    }

    /// Independent samples with real and imaginary parts uniform in `[-1, 1]`.
    pub fn noise(grid: ProfileGrid, support: Vec<FreqBox>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::tabulate(grid, support, ProfileTag::Noise { seed }, |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// `L^2` norm of the profile, `(delta^{n-1} sum |f|^2)^{1/2}`.
    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * self.samples.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.grid.cell_volume() * self.samples.iter().map(|v| v.norm()).sum::<f64>()
    }

    /// Profile multiplied by a scalar.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.samples.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// Profile rescaled to unit `L^2` norm.
    pub fn normalized(&self) -> Result<Self> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(Error::Empty("nonzero profile to normalize"));
        }
        Ok(self.scaled(1.0 / norm))
    }

    /// Difference of two profiles on the same grid.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid {
            return Err(invalid("grid", "profiles live on different grids"));
        }
        let mut out = self.clone();
        for (a, b) in out.samples.iter_mut().zip(&other.samples) {
            *a -= b;
        }
        out.support.extend(other.support.iter().copied());
        out.tag = ProfileTag::Custom;
        Ok(out)
    }

    /// Smallest and one-past-largest sample index along each axis at which
    /// the profile is nonzero.
    pub fn nonzero_range(&self) -> [(usize, usize); MAX_DIM - 1] {
        let m = self.grid.per_axis();
        let mut range = [(m, 0); MAX_DIM - 1];
        for (flat, v) in self.samples.iter().enumerate() {
            if v.re != 0.0 || v.im != 0.0 {
                let idx = self.grid.unflatten(flat);
                for axis in 0..self.grid.n - 1 {
                    range[axis].0 = range[axis].0.min(idx[axis]);
                    range[axis].1 = range[axis].1.max(idx[axis] + 1);
                }
            }
        }
        range
    }

    /// Writes the binary format: header (magic, version, `n`, `R`, samples
    /// per cap, spacing, support boxes, sample count) followed by the samples
    /// as little-endian `complex64` pairs.
    pub fn write_binary(&self, mut out: impl Write) -> Result<()> {
        out.write_all(BINARY_MAGIC)?;
        out.write_u32::<LittleEndian>(BINARY_VERSION)?;
        out.write_u32::<LittleEndian>(self.grid.n as u32)?;
        out.write_u32::<LittleEndian>(self.grid.r)?;
        out.write_u32::<LittleEndian>(self.grid.samples_per_cap)?;
        out.write_f64::<LittleEndian>(self.grid.spacing())?;
        out.write_u32::<LittleEndian>(self.support.len() as u32)?;
        for b in &self.support {
            for axis in 0..self.grid.n - 1 {
                out.write_f64::<LittleEndian>(b.lo[axis])?;
                out.write_f64::<LittleEndian>(b.hi[axis])?;
            }
        }
        out.write_u64::<LittleEndian>(self.samples.len() as u64)?;
        for v in &self.samples {
            out.write_f32::<LittleEndian>(v.re as f32)?;
            out.write_f32::<LittleEndian>(v.im as f32)?;
        }
        Ok(())
    }

    /// Reads the binary format written by [`Profile::write_binary`].
    pub fn read_binary(mut input: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("not a profile file".into()));
        }
        let version = input.read_u32::<LittleEndian>()?;
        if version != BINARY_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = input.read_u32::<LittleEndian>()? as usize;
        let r = input.read_u32::<LittleEndian>()?;
        let k = input.read_u32::<LittleEndian>()?;
        let grid = ProfileGrid::new(n, r, k)?;
        let spacing = input.read_f64::<LittleEndian>()?;
        if (spacing - grid.spacing()).abs() > 1e-15 {
            return Err(Error::Format(format!("spacing {spacing} disagrees with the grid")));
        }
        let boxes = input.read_u32::<LittleEndian>()? as usize;
        let mut support = Vec::with_capacity(boxes);
        for _ in 0..boxes {
            let mut lo = vec![0.0; n - 1];
            let mut hi = vec![0.0; n - 1];
            for axis in 0..n - 1 {
                lo[axis] = input.read_f64::<LittleEndian>()?;
                hi[axis] = input.read_f64::<LittleEndian>()?;
            }
            support.push(FreqBox::new(&lo, &hi)?);
        }
        let count = input.read_u64::<LittleEndian>()? as usize;
        if count != grid.len() {
            return Err(Error::Format(format!("{count} samples for a grid of {}", grid.len())));
        }
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let re = input.read_f32::<LittleEndian>()? as f64;
            let im = input.read_f32::<LittleEndian>()? as f64;
            samples.push(Complex64::new(re, im));
        }
        Self::from_samples(grid, support, samples)
    }
}

const BINARY_MAGIC: &[u8; 4] = b"EXTP";
const BINARY_VERSION: u32 = 1;

/// Modulation `e(-(xi . c' + |xi|^2 c_n))`, which focuses `Ef` at `c`.
pub fn focusing_phase(xi: &[f64], c: &[f64; MAX_DIM], n: usize) -> Complex64 {
    let mut t = 0.0;
    let mut sq = 0.0;
    for (axis, &x) in xi.iter().enumerate() {
        t += x * c[axis];
        sq += x * x;
    }
    cis_turns(-(t + sq * c[n - 1]))
}

/// Evaluates `Ef` at arbitrary points by direct quadrature.  The grid must
/// be at least as fine as `1/(16 R)`.
pub fn evaluate_direct(profile: &Profile, points: &[[f64; MAX_DIM]]) -> Result<Vec<Complex64>> {
    let grid = &profile.grid;
    let required = 1.0 / (STANDARD_OVERSAMPLING as f64 * grid.r as f64);
    if grid.spacing() > required * (1.0 + 1e-12) {
        return Err(Error::CoarseGrid { spacing: grid.spacing(), required });
    }
    let m = grid.per_axis();
    let coords: Vec<f64> = (0..m).map(|i| grid.coordinate(i)).collect();
    let range = profile.nonzero_range();
    let vol = grid.cell_volume();
    Ok(points
        .par_iter()
        .map(|x| {
            if range[0].0 >= range[0].1 {
                return Complex64::new(0.0, 0.0);
            }
            match grid.n {
                2 => {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in range[0].0..range[0].1 {
                        let xi = coords[j];
                        acc += profile.samples[j] * cis_turns(xi * x[0] + xi * xi * x[1]);
                    }
                    acc * vol
                }
                _ => {
                    let a: Vec<Complex64> = (0..m).map(|j| cis_turns(coords[j] * x[0] + coords[j] * coords[j] * x[2])).collect();
                    let mut acc = Complex64::new(0.0, 0.0);
                    for k in range[1].0..range[1].1 {
                        let eta = coords[k];
                        let row = &profile.samples[k * m..(k + 1) * m];
                        let mut inner = Complex64::new(0.0, 0.0);
                        for j in range[0].0..range[0].1 {
                            inner += row[j] * a[j];
                        }
                        acc += inner * cis_turns(eta * x[1] + eta * eta * x[2]);
                    }
                    acc * vol
                }
            }
        })
        .collect())
}

/// Spatial sampling step `h = 1/q` of the evaluation lattice.
pub fn sampling_step(h: f64) -> Result<u32> {
    let q = (1.0 / h).round();
    if !(h > 0.0 && h <= 0.25) || (q * h - 1.0).abs() > 1e-12 {
        return Err(Error::Misaligned(format!("spacing {h} is not 1/q for an integer q >= 4")));
    }
    Ok(q as u32)
}

/// FFT evaluator of `Ef` on horizontal slices of the lattice of cell centers
/// `((k + 1/2) h)` inside `[0, R]^n`.
///
/// A slice with index `s` sits at `x_n = (s + 1/2) h` and is returned as the
/// `L^{n-1}` values over `[0, R)^{n-1}` with `L = R / h`, first axis fastest.
pub struct SliceEngine<'a> {
    profile: &'a Profile,
    q: u32,
    side: usize,
    fft: Arc<dyn Fft<f64>>,
    input_phase: Vec<Complex64>,
    output_phase: Vec<Complex64>,
    range: [(usize, usize); MAX_DIM - 1],
}

/// Number of chirp recurrence steps between exact re-evaluations.
const CHIRP_RESYNC: usize = 256;

impl<'a> SliceEngine<'a> {
    pub fn new(profile: &'a Profile, h: f64) -> Result<Self> {
        let q = sampling_step(h)?;
        let grid = &profile.grid;
        let m = grid.per_axis();
        let nfft = m / 2 * q as usize;
        let side = grid.r as usize * q as usize;
        let fft = FftPlanner::new().plan_fft_inverse(nfft);
        let input_phase = (0..m).map(|j| cis_turns(j as f64 / (2.0 * nfft as f64))).collect();
        let delta = grid.spacing();
        let xi0 = grid.coordinate(0);
        let step = 1.0 / q as f64;
        let output_phase = (0..side).map(|k| cis_turns(xi0 * (k as f64 + 0.5) * step) * delta).collect();
        Ok(Self { profile, q, side, fft, input_phase, output_phase, range: profile.nonzero_range() })
    }

    pub fn step(&self) -> f64 {
        1.0 / self.q as f64
    }

    /// Samples per axis over `[0, R)`.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn slice_len(&self) -> usize {
        self.side.pow(self.profile.grid.n as u32 - 1)
    }

    pub fn height(&self, slice: u32) -> f64 {
        (slice as f64 + 0.5) * self.step()
    }

    /// Writes `e(xi_j^2 t)` for `j` in `range` into `out[j]`.
    fn chirp(&self, t: f64, range: (usize, usize), out: &mut [Complex64]) {
        let grid = &self.profile.grid;
        let delta = grid.spacing();
        let ratio_step = cis_turns(2.0 * delta * delta * t);
        let mut j = range.0;
        while j < range.1 {
            let xi = grid.coordinate(j);
            let mut value = cis_turns(xi * xi * t);
            let mut ratio = cis_turns((2.0 * xi * delta + delta * delta) * t);
            let end = (j + CHIRP_RESYNC).min(range.1);
            for slot in out[j..end].iter_mut() {
                *slot = value;
                value *= ratio;
                ratio *= ratio_step;
            }
            j = end;
        }
    }

    /// One-dimensional transform: `out[k] = sum_j input[j] e(j k / N)` for
    /// `k < side`, with `input` given on the profile index range.
    fn line_transform(&self, input: &[Complex64], range: (usize, usize), buf: &mut Vec<Complex64>, scratch: &mut Vec<Complex64>, out: &mut [Complex64]) {
        let nfft = self.fft.len();
        buf.clear();
        buf.resize(nfft, Complex64::new(0.0, 0.0));
        for j in range.0..range.1 {
            buf[j] = input[j] * self.input_phase[j];
        }
        scratch.resize(self.fft.get_inplace_scratch_len(), Complex64::new(0.0, 0.0));
        self.fft.process_with_scratch(buf, scratch);
        out.copy_from_slice(&buf[..self.side]);
    }

    /// Evaluates one slice into `out` (length [`SliceEngine::slice_len`]).
    pub fn evaluate_slice(&self, slice: u32, work: &mut SliceWork, out: &mut [Complex64]) {
        let grid = &self.profile.grid;
        let t = self.height(slice);
        let m = grid.per_axis();
        out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        if self.range[0].0 >= self.range[0].1 {
            return;
        }
        work.chirp.resize(m, Complex64::new(0.0, 0.0));
        work.line.resize(m, Complex64::new(0.0, 0.0));
        let mut chirp = std::mem::take(&mut work.chirp);
        let mut line = std::mem::take(&mut work.line);
        if grid.n == 2 {
            let r0 = self.range[0];
            self.chirp(t, r0, &mut chirp);
            for j in r0.0..r0.1 {
                line[j] = self.profile.samples[j] * chirp[j];
            }
            self.line_transform(&line, r0, &mut work.buf, &mut work.scratch, out);
            for (v, ph) in out.iter_mut().zip(&self.output_phase) {
                *v *= ph;
            }
        } else {
            let (r0, r1) = (self.range[0], self.range[1]);
            let side = self.side;
            self.chirp(t, (r0.0.min(r1.0), r0.1.max(r1.1)), &mut chirp);
            work.stage.clear();
            work.stage.resize(m * side, Complex64::new(0.0, 0.0));
            let mut row_out = vec![Complex64::new(0.0, 0.0); side];
            for k in r1.0..r1.1 {
                let row = &self.profile.samples[k * m..(k + 1) * m];
                for j in r0.0..r0.1 {
                    line[j] = row[j] * chirp[j];
                }
                self.line_transform(&line, r0, &mut work.buf, &mut work.scratch, &mut row_out);
                work.stage[k * side..(k + 1) * side].copy_from_slice(&row_out);
            }
            for x1 in 0..side {
                for k in r1.0..r1.1 {
                    line[k] = work.stage[k * side + x1] * chirp[k];
                }
                self.line_transform(&line, r1, &mut work.buf, &mut work.scratch, &mut row_out);
                let ph1 = self.output_phase[x1];
                for (x2, v) in row_out.iter().enumerate() {
                    out[x2 * side + x1] = v * ph1 * self.output_phase[x2];
                }
            }
        }
        work.chirp = chirp;
        work.line = line;
    }

    /// Applies `reduce` to every requested slice, in parallel, returning the
    /// results in the order of `slices`.
    pub fn map_slices<T: Send>(&self, slices: &[u32], reduce: impl Fn(u32, &[Complex64]) -> T + Sync) -> Vec<T> {
        let len = self.slice_len();
        slices
            .par_iter()
            .map_init(
                || (SliceWork::default(), vec![Complex64::new(0.0, 0.0); len]),
                |(work, out), &s| {
                    self.evaluate_slice(s, work, out);
                    reduce(s, out)
                },
            )
            .collect()
    }
}

/// Scratch buffers reused across slices.
#[derive(Default)]
pub struct SliceWork {
    chirp: Vec<Complex64>,
    line: Vec<Complex64>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    stage: Vec<Complex64>,
}

/// `|v|^p`, with a fast path for even integer exponents.
pub fn abs_pow(v: Complex64, p: f64) -> f64 {
    let sq = v.norm_sqr();
    if p == 2.0 {
        sq
    } else if p == 4.0 {
        sq * sq
    } else if p == 6.0 {
        sq * sq * sq
    } else {
        sq.powf(p / 2.0)
    }
}

/// Lattice of samples belonging to one cube: slice indices and the offsets
/// of its horizontal block inside a slice.
struct CubeFootprint {
    first_slice: u32,
    offsets: Vec<usize>,
}

fn footprint(cube: &DyadicCube, q: u32, side: usize) -> CubeFootprint {
    let per = cube.side as usize * q as usize;
    let n = cube.dim();
    let start: Vec<usize> = (0..n).map(|a| cube.corner[a] as usize * q as usize).collect();
    let offsets = if n == 2 {
        (start[0]..start[0] + per).collect()
    } else {
        let mut o = Vec::with_capacity(per * per);
        for y in start[1]..start[1] + per {
            for x in start[0]..start[0] + per {
                o.push(y * side + x);
            }
        }
        o
    };
    CubeFootprint { first_slice: start[n - 1] as u32, offsets }
}

/// Slices crossing the cubes, grouped for streaming: for every slice, the
/// positions of the cubes it crosses.
fn slice_plan(cubes: &CubeCollection, q: u32) -> (Vec<u32>, Vec<Vec<usize>>) {
    let per = cubes.config().sqrt_r() * q;
    let mut by_layer: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (pos, cube) in cubes.iter().enumerate() {
        by_layer.entry(cube.layer()).or_default().push(pos);
    }
    let mut slices = Vec::new();
    let mut members = Vec::new();
    for (layer, positions) in by_layer {
        for s in layer * per..(layer + 1) * per {
            slices.push(s);
            members.push(positions.clone());
        }
    }
    (slices, members)
}

/// For each exponent, the per-cube sums `h^n sum_{x in q} |Ef(x)|^p` over
/// the lattice samples of every cube.
pub fn cube_power_sums(profile: &Profile, cubes: &CubeCollection, h: f64, exponents: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_region(profile, cubes)?;
    if let Some(p) = exponents.iter().find(|&&p| p < 1.0) {
        return Err(invalid("p", format!("exponent {p} is below 1")));
    }
    let engine = SliceEngine::new(profile, h)?;
    let q = engine.q;
    let side = engine.side();
    let prints: Vec<CubeFootprint> = cubes.iter().map(|c| footprint(c, q, side)).collect();
    let (slices, members) = slice_plan(cubes, q);
    let index_of: std::collections::HashMap<u32, usize> = slices.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let partials = engine.map_slices(&slices, |s, values| {
        let group = &members[index_of[&s]];
        let mut out = Vec::with_capacity(group.len() * exponents.len());
        for &pos in group {
            for &p in exponents {
                out.push(prints[pos].offsets.iter().map(|&o| abs_pow(values[o], p)).sum::<f64>());
            }
        }
        out
    });
    let vol = engine.step().powi(profile.n() as i32);
    let mut sums = vec![vec![0.0; cubes.len()]; exponents.len()];
    for (i, part) in partials.iter().enumerate() {
        for (g, &pos) in members[i].iter().enumerate() {
            for e in 0..exponents.len() {
                sums[e][pos] += part[g * exponents.len() + e] * vol;
            }
        }
    }
    Ok(sums)
}

/// Per-cube `L^p` norms of `Ef`.
pub fn cube_norms(profile: &Profile, cubes: &CubeCollection, h: f64, p: f64) -> Result<Vec<f64>> {
    let sums = cube_power_sums(profile, cubes, h, &[p])?;
    Ok(sums[0].iter().map(|s| s.powf(1.0 / p)).collect())
}

fn check_region(profile: &Profile, cubes: &CubeCollection) -> Result<()> {
    let cfg = cubes.config();
    if cfg.n != profile.n() || cfg.r != profile.grid.r {
        return Err(invalid("region", format!("cubes at n = {}, R = {} for a profile at n = {}, R = {}", cfg.n, cfg.r, profile.n(), profile.grid.r)));
    }
    Ok(())
}

/// Values of `Ef` on the lattice samples of a union of cubes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampledField {
    pub region: CubeCollection,
    pub step: f64,
    /// Samples of each cube, aligned with the region order, first axis fastest.
    pub values: Vec<Vec<Complex64>>,
}

impl SampledField {
    pub fn samples_per_axis(&self) -> usize {
        (self.region.config().sqrt_r() as f64 / self.step).round() as usize
    }

    /// Coordinates of sample `k` of the cube at `pos`.
    pub fn point(&self, pos: usize, k: usize) -> [f64; MAX_DIM] {
        let cube = &self.region.cubes()[pos];
        let per = self.samples_per_axis();
        let mut p = [0.0; MAX_DIM];
        let mut rest = k;
        for axis in 0..cube.dim() {
            p[axis] = cube.corner[axis] as f64 + ((rest % per) as f64 + 0.5) * self.step;
            rest /= per;
        }
        p
    }

    /// Value at the point of the sample lattice containing `x`, if in range.
    pub fn value_at(&self, x: &[f64; MAX_DIM]) -> Option<Complex64> {
        let cfg = self.region.config();
        let side = cfg.sqrt_r() as f64;
        let mut cell = [0u32; MAX_DIM];
        for axis in 0..cfg.n {
            if !(0.0..cfg.scale()).contains(&x[axis]) {
                return None;
            }
            cell[axis] = (x[axis] / side).floor() as u32;
        }
        let cube = DyadicCube::from_cell(cfg, &cell[..cfg.n]).ok()?;
        let pos = self.region.position(&cube)?;
        let per = self.samples_per_axis();
        let mut k = 0;
        for axis in (0..cfg.n).rev() {
            let local = ((x[axis] - cube.corner[axis] as f64) / self.step).floor() as usize;
            k = k * per + local.min(per - 1);
        }
        Some(self.values[pos][k])
    }
}

/// Evaluates `Ef` on the lattice of spacing `h` inside a union of cubes.
pub fn evaluate_fast(profile: &Profile, region: &CubeCollection, h: f64) -> Result<SampledField> {
    check_region(profile, region)?;
    let engine = SliceEngine::new(profile, h)?;
    let q = engine.q;
    let side = engine.side();
    let prints: Vec<CubeFootprint> = region.iter().map(|c| footprint(c, q, side)).collect();
    let (slices, members) = slice_plan(region, q);
    let index_of: std::collections::HashMap<u32, usize> = slices.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let parts = engine.map_slices(&slices, |s, values| {
        members[index_of[&s]]
            .iter()
            .map(|&pos| prints[pos].offsets.iter().map(|&o| values[o]).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    });
    let per_slice = prints.first().map_or(0, |p| p.offsets.len());
    let per = region.config().sqrt_r() as usize * q as usize;
    let mut values = vec![Vec::with_capacity(per_slice * per); region.len()];
    for (i, part) in parts.into_iter().enumerate() {
        let s = slices[i];
        for (g, block) in part.into_iter().enumerate() {
            let pos = members[i][g];
            debug_assert_eq!(values[pos].len(), (s - prints[pos].first_slice) as usize * per_slice);
            values[pos].extend(block);
        }
    }
    Ok(SampledField { region: region.clone(), step: engine.step(), values })
}

/// `(h^n sum |v|^p)^{1/p}` over the samples of the field lying in `region`
/// (the whole field when `None`).
pub fn lp_norm(field: &SampledField, p: f64, region: Option<&CubeCollection>) -> Result<f64> {
    if p < 1.0 {
        return Err(invalid("p", format!("exponent {p} is below 1")));
    }
    let vol = field.step.powi(field.region.config().n as i32);
    let positions: Vec<usize> = match region {
        None => (0..field.region.len()).collect(),
        Some(sub) => sub
            .iter()
            .map(|q| field.region.position(q).ok_or_else(|| Error::OutOfDomain(format!("cube {q:?} is not in the sampled region"))))
            .collect::<Result<_>>()?,
    };
    let sum: f64 = positions.iter().map(|&pos| field.values[pos].iter().map(|&v| abs_pow(v, p)).sum::<f64>()).sum();
    Ok((vol * sum).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScaleConfig;
    use approx::assert_relative_eq;

    #[test]
    fn grid_geometry() {
        let g = ProfileGrid::standard(2, 256).unwrap();
        assert_eq!(g.caps_per_axis(), 32);
        assert_eq!(g.samples_per_cap, 256);
        assert_relative_eq!(g.spacing(), 1.0 / 4096.0, max_relative = 1e-15);
        assert_relative_eq!(g.coordinate(0), -1.0 + 0.5 / 4096.0);
        assert!(ProfileGrid::standard(3, 256).is_err());
    }

    #[test]
    fn support_is_enforced() {
        let g = ProfileGrid::new(2, 64, 4).unwrap();
        let support = vec![FreqBox::interval(0.0, 1.0).unwrap()];
        let mut samples = vec![Complex64::new(0.0, 0.0); g.len()];
        samples[0] = Complex64::new(1.0, 0.0);
        assert!(Profile::from_samples(g, support, samples).is_err());
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let g = ProfileGrid::new(2, 64, 8).unwrap();
        let f = Profile::constant(g, vec![FreqBox::full(2)], Complex64::new(1.0, 0.0)).unwrap();
        assert!(matches!(evaluate_direct(&f, &[[0.0; 3]]), Err(Error::CoarseGrid { .. })));
    }

    #[test]
    fn constant_profile_at_origin() {
        let g = ProfileGrid::standard(2, 64).unwrap();
        let f = Profile::constant(g, vec![FreqBox::full(2)], Complex64::new(1.0, 0.0)).unwrap();
        let v = evaluate_direct(&f, &[[0.0; 3]]).unwrap()[0];
        assert_relative_eq!(v.re, 2.0, max_relative = 1e-13);
        assert!(v.im.abs() < 1e-13);
    }

    #[test]
    fn lp_norm_rejects_small_exponent() {
        let cfg = ScaleConfig::new(2, 64, 0.1).unwrap();
        let g = ProfileGrid::standard(2, 64).unwrap();
        let f = Profile::zero(g, vec![FreqBox::full(2)]).unwrap();
        let cubes = CubeCollection::new(cfg, [DyadicCube::from_cell(&cfg, &[0, 0]).unwrap()]).unwrap();
        let field = evaluate_fast(&f, &cubes, 0.25).unwrap();
        assert!(lp_norm(&field, 0.5, None).is_err());
        assert_eq!(lp_norm(&field, 6.0, None).unwrap(), 0.0);
    }

    #[test]
    fn constant_field_norm_on_one_cube() {
        let cfg = ScaleConfig::new(2, 256, 0.1).unwrap();
        let q = DyadicCube::from_cell(&cfg, &[2, 3]).unwrap();
        let region = CubeCollection::new(cfg, [q]).unwrap();
        let per = 16 * 4;
        let field = SampledField { region, step: 0.25, values: vec![vec![Complex64::new(0.0, -3.0); per * per]] };
        // h^2 * (per^2) = R, so the norm is R^{1/p} |c|
        assert_relative_eq!(lp_norm(&field, 6.0, None).unwrap(), 256f64.powf(1.0 / 6.0) * 3.0, max_relative = 1e-14);
    }

    #[test]
    fn bad_sampling_step() {
        assert!(sampling_step(0.3).is_err());
        assert!(sampling_step(0.5).is_err());
        assert_eq!(sampling_step(0.125).unwrap(), 8);
    }
}
