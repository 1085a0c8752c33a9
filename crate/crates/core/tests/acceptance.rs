//! Acceptance suite: one pass/fail line per criterion on stderr.
//!
//! `EXTLAB_CRITERIA=3,5` restricts the run to the listed criteria.

use std::io::Write;
use std::time::Instant;

use extlab::ensemble::{
    focused_sum, random_cubes, random_tube_family, separated_intervals, slab_cubes, CarlesonConfig, SquareLayout,
};
use extlab::extension::{evaluate_direct, evaluate_fast, FreqBox, Profile, ProfileGrid};
use extlab::geometry::{incidence_counts, incidence_counts_brute, CubeCollection, ScaleConfig, Tube};
use extlab::selection::{select_multilinear, FunctionData};
use extlab::verify::{
    critical_exponent, fit_exponent, packet_power_sum, two_scale_slope, uniform_incidence_cubes, verify_carleson,
    verify_kakeya, verify_linear_refined, verify_multilinear_refined, verify_refined_decoupling,
    verify_refined_decoupling_with,
};
use extlab::wavepacket::{cap_center, decompose, packet_profile, PacketSpec, DEFAULT_WINDOW_FACTOR};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 0.25;
const EPS: f64 = 0.1;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_parseval() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for r in [64u32, 256, 1024] {
        let grid = ProfileGrid::standard(2, r).unwrap();
        for i in 0..20u64 {
            let lo = rng.gen_range(-1.0..0.5);
            let hi = rng.gen_range(lo + 0.1..=1.0f64);
            let support = vec![FreqBox::interval(lo, hi).unwrap()];
            let f = if i % 2 == 0 {
                Profile::noise(grid, support, i).unwrap()
            } else {
                Profile::random_phase(grid, support, i, 1 + (i as usize % 7)).unwrap()
            };
            let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).map_err(|e| e.to_string())?;
            worst = worst.max(ps.parseval_defect());
        }
        let bump = Profile::bump(grid, vec![FreqBox::full(2)], None).unwrap();
        let ps = decompose(&bump, DEFAULT_WINDOW_FACTOR).map_err(|e| e.to_string())?;
        worst_residual = worst_residual.max(ps.residual / ps.parent_norm);
    }
    ensure(worst <= 1e-9 && worst_residual <= 1e-3, format!("max defect {worst:.2e}, max bump residual {worst_residual:.2e}"))
}

fn c2_evaluator() -> Outcome {
    let r = 256;
    let cfg = ScaleConfig::new(2, r, EPS).unwrap();
    let grid = ProfileGrid::standard(2, r).unwrap();
    let f = Profile::random_phase(grid, vec![FreqBox::full(2)], 21, 6).unwrap();
    let region = CubeCollection::full(cfg);
    let field = evaluate_fast(&f, &region, STEP).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut probes = Vec::new();
    let mut fast = Vec::new();
    for _ in 0..100 {
        let pos = rng.gen_range(0..region.len());
        let k = rng.gen_range(0..field.values[pos].len());
        probes.push(field.point(pos, k));
        fast.push(field.values[pos][k]);
    }
    let direct = evaluate_direct(&f, &probes).map_err(|e| e.to_string())?;
    let scale = direct.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let worst = fast.iter().zip(&direct).map(|(a, b)| (a - b).norm() / b.norm().max(1e-3 * scale)).fold(0.0, f64::max);
    let one = Profile::constant(grid, vec![FreqBox::full(2)], Complex64::new(1.0, 0.0)).unwrap();
    let origin = evaluate_direct(&one, &[[0.0; 3]]).map_err(|e| e.to_string())?[0];
    let origin_error = (origin - Complex64::new(2.0, 0.0)).norm();
    ensure(worst <= 1e-6 && origin_error <= 1e-12, format!("max relative error {worst:.2e}, |Ef(0,0) - 2| = {origin_error:.1e}"))
}

fn random_tube(cfg: &ScaleConfig, rng: &mut impl Rng) -> Tube {
    let s = cfg.sqrt_r();
    let cap = rng.gen_range(0..2 * s);
    let xi = cap_center(cfg.r, cap);
    let x0 = rng.gen_range(-0.2..1.2) * cfg.scale();
    let t0 = rng.gen::<f64>() * cfg.scale();
    let shift = ((-x0 - 2.0 * xi * t0) / s as f64).round() as i64;
    Tube::new(cfg, &[cap], &[xi], &[shift]).unwrap()
}

fn c3_incidence() -> Outcome {
    let cfg = ScaleConfig::new(2, 1024, EPS).unwrap();
    let mut total = 0u64;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let tubes: Vec<Tube> = (0..500).map(|_| random_tube(&cfg, &mut rng)).collect();
        let cubes = random_cubes(&cfg, 200, seed).unwrap();
        let fast = incidence_counts(&tubes, &cubes, EPS);
        if fast != incidence_counts_brute(&tubes, &cubes, EPS) {
            return Err(format!("instance {seed} differs from brute force"));
        }
        total += fast.iter().map(|&c| c as u64).sum::<u64>();
    }
    Ok(format!("50 instances identical, {total} incidences"))
}

fn c4_pigeonhole() -> Outcome {
    let r = 256;
    let cfg = ScaleConfig::new(2, r, EPS).unwrap();
    let grid = ProfileGrid::standard(2, r).unwrap();
    let full = CubeCollection::full(cfg);
    let p = critical_exponent(2);
    let data: Vec<FunctionData> = separated_intervals()
        .iter()
        .enumerate()
        .map(|(i, b)| FunctionData::new(Profile::random_phase(grid, vec![*b], 40 + i as u64, 4).unwrap(), full.clone(), p, STEP))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mut worst_margin = f64::INFINITY;
    let classes: Vec<usize> = data.iter().map(|d| d.classes.len()).collect();
    for seed in 0..100u64 {
        let cubes = random_cubes(&cfg, 64, 400 + seed).unwrap();
        let sel = select_multilinear(&data, &cubes, EPS).map_err(|e| e.to_string())?;
        let a = &sel.audit;
        let loss = (a.max_classes as u128).pow(2) * (a.max_levels as u128).pow(2);
        if !(a.guarantee_holds && sel.core.len() as u128 * loss >= a.kept as u128) || !a.stages.iter().all(|s| s.holds()) {
            return Err(format!("seed {seed}: |core| = {}, kept = {}, loss = {loss}", sel.core.len(), a.kept));
        }
        for i in 0..2 {
            let brute = incidence_counts_brute(&sel.class_tubes(&data, i), &sel.core, EPS);
            let m = sel.multiplicities[i];
            if brute.iter().any(|&c| c < m || c > 2 * m) || brute != sel.counts.iter().map(|c| c[i]).collect::<Vec<_>>() {
                return Err(format!("seed {seed}: family {i} counts {brute:?} outside [{m}, {}]", 2 * m));
            }
        }
        worst_margin = worst_margin.min(sel.core.len() as f64 * loss as f64 / a.kept as f64);
    }
    Ok(format!("100 seeds, classes {classes:?}, smallest |core| J^2 L^2 / kept = {worst_margin:.1}"))
}

fn c5_multilinear() -> Outcome {
    let r = 1024;
    let cfg = ScaleConfig::new(2, r, EPS).unwrap();
    let grid = ProfileGrid::standard(2, r).unwrap();
    let p = critical_exponent(2);
    let mut points = Vec::new();
    let mut failures = 0;
    let mut means = Vec::new();
    for &count in &[16usize, 64, 256, 1024] {
        let mut log_sum = 0.0;
        for seed in 0..20u64 {
            let cubes = random_cubes(&cfg, count, 500 + seed).unwrap();
            let centers: Vec<[f64; 3]> = cubes.iter().map(|q| q.center()).collect();
            let data: Vec<FunctionData> = separated_intervals()
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let f = focused_sum(grid, vec![*b], &centers, 2 * seed + i as u64)?;
                    FunctionData::new(f, cubes.clone(), p, STEP)
                })
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let (report, _) = verify_multilinear_refined(&data, &cubes).map_err(|e| e.to_string())?;
            failures += !report.passed() as usize;
            log_sum += report.lhs.ln();
            points.push((count as f64, report.lhs));
        }
        means.push(format!("N = {count}: {:.4}", (log_sum / 20.0).exp()));
    }
    let fit = fit_exponent(&points).map_err(|e| e.to_string())?;
    let bound = -1.0 / 6.0 + 0.05;
    ensure(
        fit.slope <= bound && failures == 0,
        format!("slope {:.4} +- {:.4} (bound {bound:.4}), audit failures {failures}, mean lhs {}", fit.slope, fit.stderr, means.join(", ")),
    )
}

fn c6_linear() -> Outcome {
    let r = 1024;
    let cfg = ScaleConfig::new(2, r, EPS).unwrap();
    let grid = ProfileGrid::standard(2, r).unwrap();
    let p = critical_exponent(2);
    let mut points = Vec::new();
    let mut audit_failures = Vec::new();
    for &sigma in &[4usize, 16, 64] {
        for seed in 0..10u64 {
            let cubes = slab_cubes(&cfg, 1, 2, sigma, 600 + seed).unwrap();
            let centers: Vec<[f64; 3]> = cubes.iter().map(|q| q.center()).collect();
            let f = focused_sum(grid, vec![FreqBox::full(2)], &centers, seed).map_err(|e| e.to_string())?;
            let data = FunctionData::new(f, cubes.clone(), p, STEP).map_err(|e| e.to_string())?;
            let (report, _) = verify_linear_refined(&data, &cubes, 2).map_err(|e| e.to_string())?;
            if !report.passed() {
                audit_failures.push(format!("sigma {sigma} seed {seed}: {:?}", report.failures()));
            }
            points.push((report.sigma.unwrap() as f64, report.lhs));
        }
    }
    let fit = fit_exponent(&points).map_err(|e| e.to_string())?;
    let bound = -1.0 / 3.0 + 0.05;
    ensure(
        fit.slope <= bound && audit_failures.is_empty(),
        format!("slope {:.4} +- {:.4} (bound {bound:.4}), audit failures {audit_failures:?}", fit.slope, fit.stderr),
    )
}

fn c7_kakeya() -> Outcome {
    let cfg = ScaleConfig::new(2, 1024, EPS).unwrap();
    let full = CubeCollection::full(cfg);
    let [left, right] = separated_intervals();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..200u64 {
        let sizes = [rng.gen_range(10..200usize), rng.gen_range(10..200usize)];
        let families = vec![
            random_tube_family(&cfg, &left, sizes[0], 700 + 2 * seed).unwrap(),
            random_tube_family(&cfg, &right, sizes[1], 701 + 2 * seed).unwrap(),
        ];
        let (cubes, levels) = uniform_incidence_cubes(&families, &full, 0.0).map_err(|e| e.to_string())?;
        let report = verify_kakeya(&families, &cubes, &levels, 0.0).map_err(|e| format!("seed {seed}: {e}"))?;
        worst = worst.max(report.ratio);
    }
    ensure(worst <= 50.0, format!("C_K = {worst:.3} over 200 configurations"))
}

fn c8_carleson() -> Outcome {
    let mut points = Vec::new();
    let mut details = Vec::new();
    for r in [256u32, 1024, 4096] {
        let grid = ProfileGrid::standard(2, r).unwrap();
        let focus = [r as f64 / 2.0 + 0.5, r as f64 / 2.0 + 0.5, 0.0];
        let [left, right] = separated_intervals();
        let f1 = Profile::bump(grid, vec![left], Some(focus)).unwrap();
        let f2 = Profile::bump(grid, vec![right], Some(focus)).unwrap();
        let squares = CarlesonConfig::new(r, SquareLayout::HorizontalLine, 0).map_err(|e| e.to_string())?;
        let report = verify_carleson(&f1, &f2, &squares, STEP).map_err(|e| e.to_string())?;
        if !report.passed() {
            return Err(format!("R = {r}: {:?}", report.failures()));
        }
        let normalized = report.lhs / (f1.l2_norm() * f2.l2_norm()).sqrt();
        details.push(format!("{normalized:.4}"));
        points.push((r as f64, normalized));
    }
    let fit = fit_exponent(&points).map_err(|e| e.to_string())?;
    let bound = 0.25 + 0.05;
    ensure(fit.slope <= bound, format!("slope {:.4} (bound {bound}), normalized lhs {}", fit.slope, details.join(", ")))
}

fn c9_decoupling() -> Outcome {
    let mut notes = Vec::new();
    // orthogonality limit at p = 2
    let r = 256;
    let cfg = ScaleConfig::new(2, r, EPS).unwrap();
    let grid = ProfileGrid::standard(2, r).unwrap();
    let full = CubeCollection::full(cfg);
    let mut worst_two: f64 = 0.0;
    for seed in 0..5u64 {
        let f = Profile::random_phase(grid, vec![FreqBox::full(2)], 900 + seed, 6).unwrap();
        let data = FunctionData::field_only(f, full.clone(), 2.0, STEP).map_err(|e| e.to_string())?;
        let sum = packet_power_sum(&data, EPS).map_err(|e| e.to_string())?;
        for collection in [full.clone(), random_cubes(&cfg, 64, seed).unwrap()] {
            let report = verify_refined_decoupling_with(&data, &collection, sum).map_err(|e| e.to_string())?;
            worst_two = worst_two.max(report.ratio);
        }
    }
    notes.push(format!("p = 2 max ratio {worst_two:.4}"));
    if worst_two > 1.01 {
        return Err(notes.join("; "));
    }
    // a single packet and one cube it pierces
    let mut worst_single: f64 = 0.0;
    for r in [256u32, 1024] {
        let cfg = ScaleConfig::new(2, r, EPS).unwrap();
        let grid = ProfileGrid::standard(2, r).unwrap();
        let s = cfg.sqrt_r();
        for cap in [3u32, s, 2 * s - 5] {
            let xi = cap_center(r, cap);
            let shift = (-(0.5 + xi) * s as f64).round() as i64;
            let spec = PacketSpec { cap: [cap, 0], shift: [shift, 0], coeff: Complex64::new(1.0, 0.0) };
            let f = packet_profile(grid, &[spec]).map_err(|e| e.to_string())?;
            let tube = decompose(&f, DEFAULT_WINDOW_FACTOR).map_err(|e| e.to_string())?.packets[0].tube;
            let mid = tube.axis_point(r as f64 / 2.0);
            let cell = [(mid[0] / s as f64) as u32, (mid[1] / s as f64) as u32];
            let cube = CubeCollection::new(cfg, [extlab::geometry::DyadicCube::from_cell(&cfg, &cell).unwrap()]).unwrap();
            let data = FunctionData::field_only(f, cube.clone(), critical_exponent(2), STEP).map_err(|e| e.to_string())?;
            let report = verify_refined_decoupling(&data, &cube).map_err(|e| e.to_string())?;
            if report.multiplicities != vec![1] {
                return Err(format!("single packet at R = {r}, cap {cap}: M = {:?}", report.multiplicities));
            }
            worst_single = worst_single.max(report.ratio);
        }
    }
    notes.push(format!("single packet max ratio {worst_single:.4}"));
    if worst_single > 1.01 {
        return Err(notes.join("; "));
    }
    // growth across scales
    let mut points = Vec::new();
    for r in [256u32, 1024] {
        let cfg = ScaleConfig::new(2, r, EPS).unwrap();
        let grid = ProfileGrid::standard(2, r).unwrap();
        let f = Profile::random_phase(grid, vec![FreqBox::full(2)], 950, 6).unwrap();
        let data = FunctionData::field_only(f, CubeCollection::full(cfg), critical_exponent(2), STEP).map_err(|e| e.to_string())?;
        let sum = packet_power_sum(&data, EPS).map_err(|e| e.to_string())?;
        let mut ratios = Vec::new();
        for seed in 0..20u64 {
            let cubes = random_cubes(&cfg, 64, 960 + seed).unwrap();
            let report = verify_refined_decoupling_with(&data, &cubes, sum).map_err(|e| e.to_string())?;
            ratios.push(report.ratio);
            points.push((r as f64, report.ratio));
        }
        let max = ratios.iter().cloned().fold(0.0, f64::max);
        notes.push(format!("R = {r} max ratio {max:.4}"));
    }
    let fit = two_scale_slope(&points).map_err(|e| e.to_string())?;
    notes.push(format!("slope {:.4} (bound 0.1)", fit.slope));
    ensure(fit.slope <= 0.1, notes.join("; "))
}

/// CSV data rows written by one CLI invocation.
fn cli_rows(args: &[&str], threads: &str) -> Result<Vec<String>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_extlab"))
        .args(args)
        .args(["--threads", threads, "--name", "replay", "--out"])
        .arg(dir.path())
        .stderr(std::process::Stdio::null())
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("{args:?} exited with {status}"));
    }
    let text = std::fs::read_to_string(dir.path().join("replay.csv")).map_err(|e| e.to_string())?;
    Ok(text.lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect())
}

fn c10_determinism() -> Outcome {
    let configs: [&[&str]; 5] = [
        &["verify", "classical", "--R", "64,256", "--profile", "random-phase", "--seed", "3", "--seeds", "2"],
        &["decompose", "--R", "256", "--profile", "noise", "--seed", "5"],
        &["select", "--R", "256", "--N", "16,32", "--seed", "11", "--seeds", "2"],
        &["verify", "kakeya", "--R", "256", "--seed", "2", "--seeds", "3"],
        &["scan", "multilinear", "--R", "256", "--N", "4,16,64", "--seed", "9"],
    ];
    let mut rows = 0;
    for args in configs {
        let first = cli_rows(args, "1")?;
        let second = cli_rows(args, "2")?;
        if first != second {
            return Err(format!("{args:?}: replayed rows differ"));
        }
        if first.len() < 2 {
            return Err(format!("{args:?}: no data rows"));
        }
        rows += first.len() - 1;
    }
    Ok(format!("{} configurations, {rows} data rows byte-identical across replays", configs.len()))
}

fn main() {
    let selected: Option<Vec<usize>> =
        std::env::var("EXTLAB_CRITERIA").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "wave packet Parseval", c1_parseval),
        (2, "evaluator correctness", c2_evaluator),
        (3, "incidence engine", c3_incidence),
        (4, "pigeonhole exactness", c4_pigeonhole),
        (5, "multilinear N-scaling", c5_multilinear),
        (6, "linear sigma-scaling", c6_linear),
        (7, "multilinear Kakeya constant", c7_kakeya),
        (8, "Carleson R-scaling", c8_carleson),
        (9, "refined decoupling sanity", c9_decoupling),
        (10, "CLI determinism", c10_determinism),
    ];
    let mut failed = 0;
    let mut err = std::io::stderr();
    for (id, name, run) in criteria {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        writeln!(err, "C{id} {status} {name}: {detail} [{secs:.1} s]").unwrap();
    }
    if failed > 0 {
        writeln!(err, "{failed} criteria failed").unwrap();
        std::process::exit(1);
    }
}
