use extlab::extension::*;
use extlab::geometry::{CubeCollection, ScaleConfig, Tube};
use extlab::wavepacket::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn full_bump(r: u32) -> Profile {
    Profile::bump(ProfileGrid::standard(2, r).unwrap(), vec![FreqBox::full(2)], None).unwrap()
}

/// Packet of cap `cap` whose tube passes through the middle of `[0, R]^2`.
fn central_packet(r: u32, cap: u32) -> PacketSpec {
    let sqrt_r = (r as f64).sqrt();
    let xi = cap_center(r, cap);
    PacketSpec { cap: [cap, 0], shift: [(-(0.5 + xi) * sqrt_r).round() as i64, 0], coeff: Complex64::new(1.0, 0.0) }
}

#[test]
fn parseval_identity_for_random_profiles() {
    for (i, &r) in [64u32, 256, 1024].iter().enumerate() {
        let grid = ProfileGrid::standard(2, r).unwrap();
        for seed in 0..3u64 {
            let noise = Profile::noise(grid, vec![FreqBox::interval(-0.8, 0.6).unwrap()], seed + 10 * i as u64).unwrap();
            let phase = Profile::random_phase(grid, vec![FreqBox::full(2)], seed, 5).unwrap();
            for f in [noise, phase] {
                let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
                assert!(ps.parseval_defect() <= 1e-9, "R = {r}: defect {}", ps.parseval_defect());
            }
        }
    }
}

#[test]
fn smooth_bump_has_small_residual() {
    for r in [64u32, 256, 1024] {
        let f = full_bump(r);
        let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
        assert!(ps.residual <= 1e-3 * ps.parent_norm, "R = {r}: residual {}", ps.residual / ps.parent_norm);
    }
}

/// Counts, by sampling each axis densely, the translates of one period whose
/// axis meets the window.
fn enumerate_window_modes(r: u32, window_factor: f64, samples_per_cap: u32) -> usize {
    let sqrt_r = (r as f64).sqrt();
    let (lo, hi) = window_bounds(r, window_factor);
    let k = samples_per_cap as i64;
    let mut count = 0;
    for cap in 0..2 * sqrt_r as u32 {
        let xi = cap_center(r, cap);
        let center = -(0.5 + xi) * sqrt_r;
        let first = (center - k as f64 / 2.0).floor() as i64 - 1;
        for m in first..first + k + 3 {
            if !((m as f64) > center - k as f64 / 2.0 && (m as f64) <= center + k as f64 / 2.0) {
                continue;
            }
            let v = m as f64 * sqrt_r;
            let steps = 20_000;
            let meets = (0..=steps).any(|i| {
                let t = lo + (hi - lo) * i as f64 / steps as f64;
                let x = -v - 2.0 * xi * t;
                x >= lo && x <= hi
            });
            count += meets as usize;
        }
    }
    count
}

#[test]
fn kept_modes_match_window_enumeration() {
    for r in [64u32, 256] {
        let grid = ProfileGrid::standard(2, r).unwrap();
        let f = Profile::noise(grid, vec![FreqBox::full(2)], 3).unwrap();
        let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
        let expected = enumerate_window_modes(r, DEFAULT_WINDOW_FACTOR, grid.samples_per_cap);
        let diff = (ps.len() as i64 - expected as i64).abs();
        // dense sampling can only miss tubes grazing a window corner
        assert!(diff <= 2, "R = {r}: {} kept vs {expected} enumerated", ps.len());
    }
}

#[test]
fn single_basis_element_gives_one_packet() {
    let r = 256;
    let grid = ProfileGrid::standard(2, r).unwrap();
    let spec = central_packet(r, 9);
    let f = packet_profile(grid, &[spec]).unwrap();
    assert!((f.l2_norm() - 1.0).abs() < 1e-12);
    let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
    assert_eq!(ps.len(), 1);
    let p = ps.packets[0];
    assert_eq!(p.tube.cap[0], 9);
    assert_eq!(p.tube.shift[0], spec.shift[0]);
    assert!((p.coeff - spec.coeff).norm() < 1e-12);
    assert!((p.weight - 0.25).abs() < 1e-12);
}

#[test]
fn reconstruction_matches_direct_evaluation() {
    let r = 256;
    let f = full_bump(r);
    let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let points: Vec<[f64; 3]> = (0..50).map(|_| [rng.gen::<f64>() * r as f64, rng.gen::<f64>() * r as f64, 0.0]).collect();
    let direct = evaluate_direct(&f, &points).unwrap();
    let rebuilt = reconstruct(&ps, &points).unwrap();
    for (a, b) in direct.iter().zip(&rebuilt) {
        assert!((a - b).norm() <= 1e-2 * ps.parent_norm);
    }

    let grid = ProfileGrid::standard(2, r).unwrap();
    let g = packet_profile(grid, &[central_packet(r, 22)]).unwrap();
    let single = decompose(&g, DEFAULT_WINDOW_FACTOR).unwrap();
    let direct = evaluate_direct(&g, &points).unwrap();
    let rebuilt = reconstruct(&single, &points).unwrap();
    for (a, b) in direct.iter().zip(&rebuilt) {
        assert!((a - b).norm() <= 1e-6 * single.packets[0].weight);
    }
}

#[test]
fn packet_field_is_localized_and_sized_by_its_weight() {
    let r = 256;
    let eps = 0.1;
    let cfg = ScaleConfig::new(2, r, eps).unwrap();
    let grid = ProfileGrid::standard(2, r).unwrap();
    let ps = decompose(&packet_profile(grid, &[central_packet(r, 5)]).unwrap(), DEFAULT_WINDOW_FACTOR).unwrap();
    let packet = ps.packets[0];
    let field = packet_field(&packet, grid, &CubeCollection::full(cfg), 0.25).unwrap();
    let (a, b) = packet.tube.segment();
    let fat = 10.0 * (r as f64).powf(0.5 + eps);
    let mut inside = 0.0;
    let mut total = 0.0;
    for pos in 0..field.region.len() {
        for (k, v) in field.values[pos].iter().enumerate() {
            let x = field.point(pos, k);
            total += v.norm_sqr();
            if extlab::geometry::point_segment_distance(&x, &a, &b, 2) <= fat {
                inside += v.norm_sqr();
            }
        }
    }
    assert!(inside >= 0.99 * total);

    let axis: Vec<[f64; 3]> = (1..10).map(|i| packet.tube.axis_point(i as f64 * r as f64 / 10.0)).collect();
    for v in evaluate_direct(&packet.piece(grid).unwrap(), &axis).unwrap() {
        let ratio = v.norm() / packet.weight;
        assert!((0.25..=4.0).contains(&ratio), "axis ratio {ratio}");
    }
}

#[test]
fn packet_norms_scale_like_weight_times_tube_volume() {
    for r in [64u32, 256] {
        let cfg = ScaleConfig::new(2, r, 0.1).unwrap();
        let grid = ProfileGrid::standard(2, r).unwrap();
        let cap = (r as f64).sqrt() as u32 / 2;
        let ps = decompose(&packet_profile(grid, &[central_packet(r, cap)]).unwrap(), DEFAULT_WINDOW_FACTOR).unwrap();
        let packet = ps.packets[0];
        let sums = cube_power_sums(&packet.piece(grid).unwrap(), &CubeCollection::full(cfg), 0.25, &[2.0, 6.0]).unwrap();
        for (e, p) in [2.0f64, 6.0].iter().enumerate() {
            let norm = sums[e].iter().sum::<f64>().powf(1.0 / p);
            let ratio = norm / (packet.weight * (r as f64).powf(3.0 / (2.0 * p)));
            assert!((0.125..=8.0).contains(&ratio), "R = {r}, p = {p}: ratio {ratio}");
            // a fat neighborhood wider than the domain reproduces the domain norm
            let table = PacketNorms::new(grid, 0.25, *p, 0.6 * (r as f64).sqrt()).unwrap();
            let tabulated = table.packet_norm_in_domain(&packet);
            assert!((tabulated - norm).abs() <= 2e-3 * norm, "R = {r}, p = {p}: {tabulated} vs {norm}");
        }
    }
}

#[test]
fn fat_neighborhood_norm_matches_field_for_clipped_packets() {
    let r = 256;
    let h = 0.25;
    let cfg = ScaleConfig::new(2, r, 0.1).unwrap();
    let grid = ProfileGrid::standard(2, r).unwrap();
    let table = PacketNorms::new(grid, h, 6.0, 2.0).unwrap();
    // a steep packet leaving the domain sideways, and one grazing the corner
    for (cap, shift) in [(30u32, 6i64), (2, -4)] {
        let spec = PacketSpec { cap: [cap, 0], shift: [shift, 0], coeff: Complex64::new(0.0, 2.0) };
        let f = packet_profile(grid, &[spec]).unwrap();
        let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
        let packet = ps.packets[0];
        let field = evaluate_fast(&f, &CubeCollection::full(cfg), h).unwrap();
        let xi = packet.tube.cap_center[0];
        let half = 2.0 * 16.0 * (1.0 + 4.0 * xi * xi).sqrt();
        let mut sum = 0.0;
        for pos in 0..field.region.len() {
            for (k, v) in field.values[pos].iter().enumerate() {
                let x = field.point(pos, k);
                let axis_x = packet.tube.axis_point(x[1])[0];
                if (x[0] - axis_x).abs() <= half {
                    sum += v.norm_sqr().powi(3);
                }
            }
        }
        let direct = (sum * h * h).powf(1.0 / 6.0);
        let tabulated = table.packet_norm_in_domain(&packet);
        assert!((tabulated - direct).abs() <= 5e-3 * direct, "cap {cap}: {tabulated} vs {direct}");
    }
}

#[test]
fn fat_neighborhood_norm_extends_past_the_domain() {
    let r = 64;
    let h = 0.25;
    let grid = ProfileGrid::standard(2, r).unwrap();
    let table = PacketNorms::new(grid, h, 6.0, 2.0).unwrap();
    let spec = PacketSpec { cap: [14, 0], shift: [3, 0], coeff: Complex64::new(1.5, 0.0) };
    let f = packet_profile(grid, &[spec]).unwrap();
    let packet = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap().packets[0];
    let xi = packet.tube.cap_center[0];
    let half = 2.0 * 8.0 * (1.0 + 4.0 * xi * xi).sqrt();
    let mut points = Vec::new();
    for i in 0..(r as f64 / h) as usize {
        let t = (i as f64 + 0.5) * h;
        let axis_x = packet.tube.axis_point(t)[0];
        let first = ((axis_x - half) / h).ceil() as i64;
        let last = ((axis_x + half) / h).floor() as i64;
        points.extend((first..=last).map(|k| [k as f64 * h, t, 0.0]));
    }
    assert!(points.iter().any(|p| p[0] < 0.0));
    let sum: f64 = evaluate_direct(&f, &points).unwrap().iter().map(|v| v.norm_sqr().powi(3)).sum();
    let direct = (sum * h * h).powf(1.0 / 6.0);
    let tabulated = table.packet_norm(&packet);
    assert!((tabulated - direct).abs() <= 5e-3 * direct, "{tabulated} vs {direct}");
    assert!(table.packet_norm_in_domain(&packet) < 0.9 * tabulated);
}

fn synthetic_set(weights: &[f64]) -> PacketSet {
    let r = 256u32;
    let grid = ProfileGrid::new(2, r, 4).unwrap();
    let cfg = ScaleConfig::new(2, r, 0.1).unwrap();
    let packets = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| WavePacket {
            tube: Tube::new(&cfg, &[i as u32], &[cap_center(r, i as u32)], &[0]).unwrap(),
            coeff: Complex64::new(w * 4.0, 0.0),
            weight: w,
        })
        .collect();
    PacketSet { grid, packets, parent_norm: 1.0, residual: 0.0, window_factor: 3.0 }
}

#[test]
fn weight_classes_of_explicit_weights() {
    let classes = weight_classes(&synthetic_set(&[1.0, 2.5, 8.0]), default_floor_exponent(2)).unwrap();
    assert_eq!(classes.len(), 3);
    assert_eq!(classes.classes.iter().map(|c| c.level).collect::<Vec<_>>(), vec![0, 1, 3]);
    let with_floor = weight_classes(&synthetic_set(&[1.0, 1e-200, 8.0]), 20.0).unwrap();
    assert_eq!(with_floor.dropped, vec![1]);
    assert!(with_floor.dropped_mass <= 256f64.powi(-20));
    assert!(weight_classes(&synthetic_set(&[0.0, 0.0]), 40.0).is_err());
}

#[test]
fn weight_classes_of_a_random_profile() {
    let r = 256u32;
    let grid = ProfileGrid::standard(2, r).unwrap();
    let f = Profile::random_phase(grid, vec![FreqBox::full(2)], 8, 6).unwrap();
    let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
    let floor_exp = default_floor_exponent(2);
    let classes = weight_classes(&ps, floor_exp).unwrap();
    assert!(classes.len() as f64 <= floor_exp * (r as f64).log2() + 1.0);
    assert!(classes.len() <= 30, "{} classes", classes.len());
    assert!(classes.dropped_mass <= (r as f64).powf(-20.0) * ps.parent_norm);
    let members: usize = classes.classes.iter().map(|c| c.members.len()).sum();
    assert_eq!(members + classes.dropped.len(), ps.len());
}

#[test]
fn zero_profile_has_no_packets() {
    let grid = ProfileGrid::standard(2, 64).unwrap();
    let ps = decompose(&Profile::zero(grid, vec![FreqBox::full(2)]).unwrap(), DEFAULT_WINDOW_FACTOR).unwrap();
    assert!(ps.is_empty());
    assert!(weight_classes(&ps, 40.0).is_err());
}

#[test]
fn three_dimensional_decomposition() {
    let grid = ProfileGrid::standard(3, 64).unwrap();
    let f = Profile::random_phase(grid, vec![FreqBox::new(&[-0.5, -1.0], &[0.5, 0.0]).unwrap()], 1, 3).unwrap();
    let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
    assert!(ps.parseval_defect() <= 1e-9);
    let spec = PacketSpec { cap: [3, 12], shift: [-2, -5], coeff: Complex64::new(0.6, 0.8) };
    let single = decompose(&packet_profile(grid, &[spec]).unwrap(), DEFAULT_WINDOW_FACTOR).unwrap();
    assert_eq!(single.len(), 1);
    assert_eq!(single.packets[0].tube.shift[..2], spec.shift[..2]);
    assert!((single.packets[0].coeff - spec.coeff).norm() < 1e-12);
    assert!((single.packets[0].weight - 1.0 / 8.0).abs() < 1e-12);
}

#[test]
fn packet_set_json_round_trip() {
    let grid = ProfileGrid::standard(2, 64).unwrap();
    let ps = decompose(&Profile::random_phase(grid, vec![FreqBox::full(2)], 4, 2).unwrap(), DEFAULT_WINDOW_FACTOR).unwrap();
    let json = serde_json::to_string(&ps).unwrap();
    let back: PacketSet = serde_json::from_str(&json).unwrap();
    assert_eq!(back.packets, ps.packets);
    assert_eq!(back.residual, ps.residual);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parseval_and_class_partition(seed in 0u64..10_000, lo in -1.0f64..0.0, width in 0.1f64..1.0) {
        let grid = ProfileGrid::standard(2, 64).unwrap();
        let hi = (lo + width).min(1.0);
        let f = Profile::noise(grid, vec![FreqBox::interval(lo, hi).unwrap()], seed).unwrap();
        let ps = decompose(&f, DEFAULT_WINDOW_FACTOR).unwrap();
        prop_assert!(ps.parseval_defect() <= 1e-9);
        prop_assert!(ps.coefficient_energy() <= ps.parent_norm.powi(2) * (1.0 + 1e-12));
        let classes = weight_classes(&ps, 40.0).unwrap();
        for class in &classes.classes {
            for &i in &class.members {
                let w = ps.packets[i].weight;
                prop_assert!(w >= class.lower * (1.0 - 1e-12) && w < 2.0 * class.lower);
            }
        }
    }
}
