use proptest::prelude::*;
use rand::SeedableRng;

use mimo_nope::amp::{gamma_min, mmse_amp, psi_mse, sure_estimate};
use mimo_nope::analysis::{
    achievable_rate, generic_fixed_point, mismatched_se_fixed_point, moar, se_fixed_point,
    se_trajectory, snr_loss, MoarQuery, FIXED_POINT_MAX_ITER, FIXED_POINT_TOL,
};
use mimo_nope::linear_eq::{EqualizerKind, GramSystem};
use mimo_nope::model::{self, complex_gaussian, Constellation, Stream};
use mimo_nope::{db_to_linear, CVector};

fn fixed_point(beta: f64, n0: f64) -> f64 {
    se_fixed_point(beta, 1.0, n0, FIXED_POINT_TOL, FIXED_POINT_MAX_ITER).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn moar_and_snr_loss_invert(rate in 0.1f64..5.0, loss_db in 0.05f64..6.0) {
        let delta = db_to_linear(loss_db);
        for kind in [EqualizerKind::Mrc, EqualizerKind::Zf, EqualizerKind::Lmmse] {
            let beta = moar(MoarQuery { equalizer: kind, delta_snr: delta, rate }).unwrap();
            let back = snr_loss(kind, beta, rate, 1.0).unwrap();
            prop_assert!((back / delta - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lmmse_admits_the_most_users(rate in 0.1f64..5.0, loss_db in 0.05f64..6.0) {
        let q = |equalizer| moar(MoarQuery { equalizer, delta_snr: db_to_linear(loss_db), rate }).unwrap();
        let lmmse = q(EqualizerKind::Lmmse);
        prop_assert!(lmmse >= q(EqualizerKind::Zf));
        prop_assert!(lmmse >= q(EqualizerKind::Mrc));
    }

    #[test]
    fn fixed_point_is_the_quadratic_root(beta in 0.01f64..3.0, n0 in 1e-3f64..10.0) {
        let b = 1.0 - n0 - beta;
        let root = (-b + (b * b + 4.0 * n0).sqrt()) / 2.0;
        let fp = fixed_point(beta, n0);
        prop_assert!((fp - root).abs() <= 1e-9 * root.max(1.0));
    }

    #[test]
    fn fixed_point_grows_with_load_and_noise(beta in 0.01f64..2.0, n0 in 1e-3f64..5.0) {
        let fp = fixed_point(beta, n0);
        prop_assert!(fixed_point(beta * 1.1, n0) > fp);
        prop_assert!(fixed_point(beta, n0 * 1.1) > fp);
        prop_assert!(fp >= n0);
    }

    #[test]
    fn trajectory_decreases_to_fixed_point(beta in 0.01f64..2.0, n0 in 1e-2f64..5.0) {
        let traj = se_trajectory(beta, 1.0, n0, 30);
        for w in traj.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        prop_assert!(*traj.last().unwrap() >= fixed_point(beta, n0) * (1.0 - 1e-12));
    }

    #[test]
    fn rate_ordering(beta in 0.01f64..0.99, snr_db in -10f64..25.0) {
        let n0 = 1.0 / db_to_linear(snr_db);
        let rate = |kind| achievable_rate(1.0, generic_fixed_point(kind, beta, 1.0, n0).unwrap()).unwrap();
        let lmmse = rate(EqualizerKind::Lmmse);
        prop_assert!(lmmse >= rate(EqualizerKind::Zf) - 1e-12);
        prop_assert!(lmmse >= rate(EqualizerKind::Mrc) - 1e-12);
        prop_assert!(achievable_rate(1.0, n0).unwrap() >= lmmse);
        for assumed in [0.25, 0.5, 2.0, 4.0] {
            prop_assert!(lmmse >= rate(EqualizerKind::LmmseMismatched(assumed)) - 1e-9);
        }
    }

    #[test]
    fn matched_power_collapses(beta in 0.01f64..3.0, n0 in 1e-3f64..10.0, es in 0.1f64..10.0) {
        let m = mismatched_se_fixed_point(beta, es, es, n0, FIXED_POINT_TOL, 100_000).unwrap();
        let s = se_fixed_point(beta, es, n0, FIXED_POINT_TOL, 100_000).unwrap();
        prop_assert!((m.sigma_sq - s).abs() <= 1e-12 * s.max(1.0));
        prop_assert!((m.theta_sq - s).abs() <= 1e-12 * s.max(1.0));
    }

    #[test]
    fn psi_is_bounded(sigma in 1e-4f64..10.0, tau in 0f64..100.0, es in 0.01f64..10.0) {
        let p = psi_mse(sigma, tau, es);
        prop_assert!(p >= 0.0);
        prop_assert!(p <= es + sigma);
        prop_assert!(psi_mse(sigma, sigma, es) <= p * (1.0 + 1e-12));
    }

    #[test]
    fn sure_is_minimized_at_gamma_min(seed in 0u64..1000, es in 0.1f64..5.0, sigma in 0.01f64..2.0) {
        let mut rng = Stream::seed_from_u64(seed);
        let z = CVector::from_iterator(
            200,
            (0..200).map(|_| complex_gaussian(&mut rng, es) + complex_gaussian(&mut rng, sigma)),
        );
        let (g, _) = gamma_min(&z, sigma).unwrap();
        prop_assert!(g >= 0.0);
        let best = sure_estimate(sigma, g, &z);
        for other in [0.0, g * 0.5, g * 0.9, g * 1.1, g * 2.0 + 0.1] {
            prop_assert!(best <= sure_estimate(sigma, other, &z) + 1e-12);
        }
    }

    #[test]
    fn effective_gains_are_fractions(seed in 0u64..500, b in 4usize..24, u in 1usize..12, reg in 1e-3f64..10.0) {
        prop_assume!(u <= b);
        let mut rng = Stream::seed_from_u64(seed);
        let ch = model::gen_uniform_channel(b, u, &mut rng).unwrap();
        let gains = GramSystem::new(&ch.h).factor(reg).unwrap().effective_gains();
        for g in gains {
            prop_assert!(g > 0.0 && g < 1.0);
        }
    }
}

/// Per-iteration effective noise of MMSE-AMP against the SE recursion.
#[test]
fn amp_tracks_state_evolution() {
    let (b, u, n0) = (1000, 500, 0.1);
    let t = 8;
    let trials = 10;
    let mut measured = vec![0.0; t];
    for trial in 0..trials {
        let mut rng = Stream::seed_from_u64(100 + trial);
        let ch = model::gen_uniform_channel(b, u, &mut rng).unwrap();
        let x = model::draw_symbols(Constellation::Gaussian, u, 1.0, &mut rng).unwrap();
        let y = model::transmit(&ch.h, &x, n0, &mut rng).unwrap().y;
        let trace = mmse_amp(&ch.h, &y, 1.0, t).unwrap();
        for (i, rec) in trace.records.iter().enumerate() {
            measured[i] += (&rec.z - &x).norm_squared() / (u as f64 * trials as f64);
        }
    }
    let predicted = se_trajectory(0.5, 1.0, n0, t);
    for (m, p) in measured.iter().zip(&predicted) {
        assert!((m / p - 1.0).abs() < 0.05, "measured {measured:?} predicted {predicted:?}");
    }
}
