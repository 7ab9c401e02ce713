//! Cross-checks of the library against independent reference computations.

use std::f64::consts::PI;

use mamimo_csi::channel::{add_noise, los_channel, multipath_channel, ChannelConfig, NoiseSpec, Scatterer};
use mamimo_csi::grid::SampleGrid;
use mamimo_csi::localization::{extract_features, FeatureMode};
use mamimo_csi::model::{CsiSample, Position3, RadioConfig};
use mamimo_csi::powermap::{power_map, synthetic_power_map, SyntheticScene};
use mamimo_csi::precoding::{
    group_spectral_efficiency, mrt_weights, received_power, zf_weights, LinkBudget, PrecodingScheme,
};
use mamimo_csi::scheduling::{def_order, def_schedule, sus_select, PoolUser, UserPool};
use mamimo_csi::topology::{build_topology, ArrayElement, ArrayGeometry, TopologyKind, TopologyParams};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const C: f64 = 299_792_458.0;

fn random_csi(rng: &mut ChaCha8Rng, m: usize, f: usize) -> CsiSample {
    let h = (0..m * f)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    CsiSample::new(m, f, h).unwrap()
}

fn one_element() -> ArrayGeometry {
    ArrayGeometry {
        kind: TopologyKind::Ura,
        elements: vec![ArrayElement { position: Position3::ORIGIN, facing: Position3::new(0.0, 1.0, 0.0) }],
    }
}

/// Two pilots, the second of which sits on the carrier.
fn narrowband() -> RadioConfig {
    RadioConfig { total_subcarriers: 2, pilot_count: 2, interleave_factor: 1, ..RadioConfig::default() }
}

#[test]
fn two_ray_matches_hand_sum() {
    let radio = narrowband();
    let user = Position3::new(300.0, 2000.0, 150.0);
    let scat = Scatterer::new(Position3::new(-800.0, 900.0, 400.0), Complex64::from_polar(0.6, 1.1)).unwrap();
    let h = multipath_channel(&one_element(), user, &radio, &ChannelConfig::default(), &[scat], 0).unwrap();

    let dist = |a: (f64, f64, f64), b: (f64, f64, f64)| {
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2) + (a.2 - b.2).powi(2)).sqrt() / 1000.0
    };
    let d_los = dist((0.0, 0.0, 0.0), (300.0, 2000.0, 150.0));
    let d_ref = dist((0.0, 0.0, 0.0), (-800.0, 900.0, 400.0)) + dist((-800.0, 900.0, 400.0), (300.0, 2000.0, 150.0));
    for (k, f) in [2.61e9 - 15e3, 2.61e9].into_iter().enumerate() {
        let lambda = C / f;
        let term = |d: f64| {
            let amp = lambda / (4.0 * PI * d);
            let ph = -2.0 * PI * f * d / C;
            Complex64::new(amp * ph.cos(), amp * ph.sin())
        };
        let want = term(d_los) + Complex64::from_polar(0.6, 1.1) * term(d_ref);
        assert!((h.get(0, k) - want).norm() / want.norm() < 1e-12, "subcarrier {k}");
    }
}

#[test]
fn scatterer_superposition_is_linear() {
    let geom = build_topology(TopologyKind::Ura, &TopologyParams::default()).unwrap();
    let radio = RadioConfig::default();
    let cfg = ChannelConfig::default();
    let user = Position3::new(120.0, 2400.0, 1000.0);
    let a = [
        Scatterer::new(Position3::new(-2000.0, 1500.0, 500.0), Complex64::new(0.3, -0.2)).unwrap(),
        Scatterer::new(Position3::new(2500.0, 3000.0, 2400.0), Complex64::new(-0.5, 0.1)).unwrap(),
    ];
    let b = [Scatterer::new(Position3::new(0.0, 4000.0, 0.0), Complex64::new(0.0, 0.9)).unwrap()];
    let los = los_channel(&geom, user, &radio, &cfg, 0).unwrap();
    let only = |s: &[Scatterer]| multipath_channel(&geom, user, &radio, &cfg, s, 0).unwrap();
    let both = only(&[a[0], a[1], b[0]]);
    let (ha, hb) = (only(&a), only(&b));
    for i in 0..los.entries().len() {
        let want = ha.entries()[i] + hb.entries()[i] - los.entries()[i];
        assert!((both.entries()[i] - want).norm() <= 1e-12 * los.entries()[i].norm().max(want.norm()));
    }
    let zero = Scatterer::new(Position3::new(0.0, 4000.0, 0.0), Complex64::new(0.0, 0.0)).unwrap();
    assert_eq!(only(&[zero]), los);
    assert_eq!(only(&[]), los);
}

#[test]
fn single_element_magnitude_identity() {
    let radio = RadioConfig::default();
    let user = Position3::new(700.0, 1800.0, -250.0);
    let h = los_channel(&one_element(), user, &radio, &ChannelConfig::default(), 3).unwrap();
    let d = user.norm() / 1000.0;
    for k in 0..h.subcarriers() {
        let f = radio.carrier_hz + ((12 * k + 3) as f64 - 600.0) * radio.subcarrier_spacing_hz;
        let v = h.get(0, k).norm() * d * 4.0 * PI / (C / f);
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn noise_power_matches_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clean = random_csi(&mut rng, 64, 1600);
    let noisy = add_noise(&clean, &NoiseSpec { snr_db: 0.0, seed: 5 }).unwrap();
    let entries = clean.entries().len() as f64;
    assert!(entries >= 1e5);
    let signal = clean.frobenius_norm_sqr() / entries;
    let noise: f64 = clean.entries().iter().zip(noisy.entries()).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>() / entries;
    assert!((noise / signal - 1.0).abs() < 0.05, "ratio {}", noise / signal);
}

#[test]
fn zf_two_users_against_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = random_csi(&mut rng, 4, 1);
        let b = random_csi(&mut rng, 4, 1);
        let w = zf_weights(&[&a, &b]).unwrap();
        let h = [a.column(0), b.column(0)];

        // G = H H^H, 2x2; W = H^H G^-1
        let g = |i: usize, j: usize| -> Complex64 { (0..4).map(|m| h[i][m] * h[j][m].conj()).sum() };
        let (g00, g01, g10, g11) = (g(0, 0), g(0, 1), g(1, 0), g(1, 1));
        let det = g00 * g11 - g01 * g10;
        let inv = [[g11 / det, -g01 / det], [-g10 / det, g00 / det]];
        for user in 0..2 {
            let mut col: Vec<Complex64> =
                (0..4).map(|m| h[0][m].conj() * inv[0][user] + h[1][m].conj() * inv[1][user]).collect();
            let n = col.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
            col.iter_mut().for_each(|c| *c /= n);
            let got = w.vector(user, 0);
            let overlap: Complex64 = col.iter().zip(got).map(|(x, y)| x.conj() * y).sum();
            assert!((overlap.norm() - 1.0).abs() < 1e-12);
            let other = 1 - user;
            let leak: Complex64 = (0..4).map(|m| h[other][m] * got[m]).sum();
            let hn = h[other].iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
            assert!(leak.norm() <= 1e-12 * hn);
        }
    }
}

#[test]
fn mrt_beats_any_other_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = random_csi(&mut rng, 64, 1);
    let w = mrt_weights(&h).unwrap();
    for _ in 0..100 {
        let g = random_csi(&mut rng, 64, 1);
        let amp: Complex64 = (0..64).map(|m| g.get(m, 0) * w.vector(0, 0)[m]).sum();
        assert!(amp.norm_sqr() <= g.frobenius_norm_sqr() * (1.0 + 1e-12));
    }
}

#[test]
fn zf_sum_se_grows_with_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let users: Vec<CsiSample> = (0..4).map(|_| random_csi(&mut rng, 16, 8)).collect();
    let refs: Vec<&CsiSample> = users.iter().collect();
    let mut last = f64::NEG_INFINITY;
    for p_db in (-20..=40).step_by(5) {
        let budget = LinkBudget::from_dbm(f64::from(p_db), 0.0);
        let se = group_spectral_efficiency(&refs, PrecodingScheme::Zf, &budget).unwrap().sum;
        assert!(se >= last);
        last = se;
    }
}

#[test]
fn zf_interference_negligible() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let users: Vec<CsiSample> = (0..4).map(|_| random_csi(&mut rng, 32, 5)).collect();
    let refs: Vec<&CsiSample> = users.iter().collect();
    let w = zf_weights(&refs).unwrap();
    for k in 0..5 {
        for (i, u) in users.iter().enumerate() {
            let h = u.column(k);
            let amp = |j: usize| -> Complex64 { h.iter().zip(w.vector(j, k)).map(|(a, b)| a * b).sum() };
            let signal = amp(i).norm_sqr();
            let interference: f64 = (0..4).filter(|&j| j != i).map(|j| amp(j).norm_sqr()).sum();
            assert!(interference < 1e-10 * signal);
        }
    }
}

#[test]
fn phase_features_ignore_common_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let csi = random_csi(&mut rng, 8, 6);
    let rotated = csi.scaled(Complex64::from_polar(1.0, 2.3));
    let a = extract_features(&csi, FeatureMode::PhaseRelative).unwrap();
    let b = extract_features(&rotated, FeatureMode::PhaseRelative).unwrap();
    let wrap = |x: f64| (x + PI).rem_euclid(2.0 * PI) - PI;
    for m in 0..8 {
        for k in 0..6 {
            let direct = wrap(csi.get(m, k).arg() - csi.get(0, k).arg());
            assert!((wrap(a[m * 6 + k] - direct)).abs() < 1e-12);
            assert!((wrap(a[m * 6 + k] - b[m * 6 + k])).abs() < 1e-12);
        }
    }
}

#[test]
fn parallel_map_equals_sequential() {
    let geom = build_topology(TopologyKind::Ura, &TopologyParams::default()).unwrap();
    let radio = RadioConfig { total_subcarriers: 48, pilot_count: 4, ..RadioConfig::default() };
    let cfg = ChannelConfig::default();
    let scene = SyntheticScene { geometry: &geom, radio: &radio, channel: &cfg, scatterers: &[], user_id: 0 };
    let grid = SampleGrid::centred(Position3::new(0.0, 2000.0, 1000.0), 9, 25.0).unwrap();
    let target = Position3::new(0.0, 2000.0, 1000.0);
    let budget = LinkBudget::default();
    let par = synthetic_power_map(&grid, &scene, target, PrecodingScheme::Mrt, &budget).unwrap();
    let seq_samples: Vec<_> = grid
        .indices(mamimo_csi::Traversal::Raster)
        .into_iter()
        .map(|(ix, iy)| scene.csi_at(grid.node(ix, iy)))
        .collect();
    let target_csi = scene.csi_at(target).unwrap();
    let seq = power_map(&grid, seq_samples, &target_csi, PrecodingScheme::Mrt, &budget).unwrap();
    assert_eq!(par.values, seq.values);

    // Common phase and positive scale leave the normalised map unchanged.
    let rotated = target_csi.scaled(Complex64::from_polar(1.0, 0.7));
    let samples: Vec<_> = grid
        .indices(mamimo_csi::Traversal::Raster)
        .into_iter()
        .map(|(ix, iy)| scene.csi_at(grid.node(ix, iy)).map(|c| c.scaled(Complex64::new(3.0, 0.0))))
        .collect();
    let scaled = power_map(&grid, samples, &rotated, PrecodingScheme::Mrt, &budget).unwrap();
    for (a, b) in scaled.normalized().iter().zip(par.normalized()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn mrt_received_power_at_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_csi(&mut rng, 64, 10);
    let w = mrt_weights(&h).unwrap();
    let budget = LinkBudget::new(2.5, 1e-3).unwrap();
    let rp = received_power(&h, &w, 0, &budget).unwrap();
    for (k, p) in rp.per_subcarrier.iter().enumerate() {
        let want = 2.5 * h.column(k).iter().map(Complex64::norm_sqr).sum::<f64>();
        assert!((p - want).abs() <= 1e-12 * want);
    }
}

/// Replays the chain rule: every appended user must be the closest unplaced
/// user to its predecessor, and the lowest index among equally close ones.
fn def_replay_holds(positions: &[Position3]) -> bool {
    let users = positions
        .iter()
        .enumerate()
        .map(|(i, p)| PoolUser { user_ref: i, csi: CsiSample::new(1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap(), position: *p })
        .collect();
    let pool = UserPool::new(users).unwrap();
    let order = def_order(&pool).unwrap();
    if order[0] != 0 {
        return false;
    }
    for t in 1..order.len() {
        let prev = positions[order[t - 1]];
        let unplaced: Vec<usize> = (0..positions.len()).filter(|u| !order[..t].contains(u)).collect();
        let best = unplaced.iter().map(|&u| positions[u].distance_mm(&prev)).fold(f64::INFINITY, f64::min);
        let first_best = *unplaced.iter().find(|&&u| positions[u].distance_mm(&prev) == best).unwrap();
        if order[t] != first_best {
            return false;
        }
    }
    true
}

proptest! {
    #[test]
    fn def_order_follows_greedy_rule(
        coords in prop::collection::vec((-2000.0f64..2000.0, 1000.0f64..4000.0), 1..14),
        n in 1usize..6,
    ) {
        let positions: Vec<Position3> = coords.iter().map(|&(x, y)| Position3::new(x, y, 1000.0)).collect();
        prop_assert!(def_replay_holds(&positions));
        let users = positions
            .iter()
            .enumerate()
            .map(|(i, p)| PoolUser { user_ref: i, csi: CsiSample::new(1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap(), position: *p })
            .collect();
        let pool = UserPool::new(users).unwrap();
        let s = def_schedule(&pool, n).unwrap();
        prop_assert!(s.is_partition_of(positions.len()));
        prop_assert!(s.groups.iter().all(|g| !g.is_empty() && g.len() <= n));
    }

    #[test]
    fn sus_accepted_users_pass_projection_test(seed in 0u64..500, k in 1usize..9, alpha in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users: Vec<PoolUser> = (0..k)
            .map(|i| PoolUser { user_ref: i, csi: random_csi(&mut rng, 8, 1), position: Position3::ORIGIN })
            .collect();
        let pool = UserPool::new(users).unwrap();
        let picked = sus_select(&pool, alpha, k).unwrap();
        // Gram-Schmidt basis of the picks so far, rebuilt here.
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        for &u in &picked {
            let h = pool.users[u].csi.entries().to_vec();
            let hn = h.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
            for b in &basis {
                let proj: Complex64 = b.iter().zip(&h).map(|(x, y)| x.conj() * y).sum();
                prop_assert!(proj.norm() / hn < alpha);
            }
            let mut g = h.clone();
            for b in &basis {
                let c: Complex64 = b.iter().zip(&h).map(|(x, y)| x.conj() * y).sum();
                g.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
            let gn = g.iter().map(Complex64::norm_sqr).sum::<f64>().sqrt();
            basis.push(g.into_iter().map(|x| x / gn).collect());
        }
    }
}
