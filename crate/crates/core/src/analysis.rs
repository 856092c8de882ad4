//! Large-system analysis of linear equalizers.
//!
//! In the large-antenna limit with i.i.d. `CN(0, 1/B)` channels, AMP-based
//! equalization decouples the system into per-user scalar channels
//! `z = x + CN(0, σ²)`. The state evolution (SE) recursion tracks `σ²` across
//! iterations and its fixed point coincides with the SIR of the exact linear
//! equalizer. Everything in this module is closed form or a scalar fixed-point
//! iteration; nothing here is random.

use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::erf::erfc;

use crate::linear_eq::EqualizerKind;
use crate::{Error, Result};

/// Relative step size at which fixed-point iterations stop.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Iteration cap for fixed-point iterations.
pub const FIXED_POINT_MAX_ITER: usize = 10_000;

/// Effective noise variances tracked by the (mismatched) state evolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeState {
    /// Effective noise variance `σ²` of the decoupled channel.
    pub sigma_sq: f64,
    /// Variance `θ²` seen by the mismatched denoiser; equals `σ²` when matched.
    pub theta_sq: f64,
}

impl SeState {
    pub fn matched(sigma_sq: f64) -> Self {
        SeState {
            sigma_sq,
            theta_sq: sigma_sq,
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be nonnegative, got {v}")))
    }
}

/// L-MMSE MSE of the decoupled channel, `Es·σ²/(Es + σ²)`.
fn lmmse_psi(sigma_sq: f64, es: f64) -> f64 {
    es * sigma_sq / (es + sigma_sq)
}

/// One SE step: `σ²⁺ = N0 + β·Es·σ²/(Es + σ²)`.
pub fn se_step(sigma_sq: f64, beta: f64, es: f64, n0: f64) -> f64 {
    n0 + beta * lmmse_psi(sigma_sq, es)
}

/// SE initial state `N0 + β·Es`, the effective noise of a zero initial iterate.
pub fn se_initial(beta: f64, es: f64, n0: f64) -> f64 {
    n0 + beta * es
}

/// `σ²_1, …, σ²_t` starting from [`se_initial`].
pub fn se_trajectory(beta: f64, es: f64, n0: f64, t: usize) -> Vec<f64> {
    std::iter::successors(Some(se_initial(beta, es, n0)), |&s| Some(se_step(s, beta, es, n0)))
        .take(t)
        .collect()
}

fn check_se_args(beta: f64, es: f64, n0: f64, tol: f64) -> Result<()> {
    check_nonnegative("antenna ratio", beta)?;
    check_positive("signal power", es)?;
    check_nonnegative("noise power", n0)?;
    check_positive("tolerance", tol)
}

/// Fixed point of [`se_step`], iterated from [`se_initial`] until the relative
/// step drops to `tol`.
///
/// For `N0 = 0` and `β ≤ 1` the fixed point is exactly zero and is returned
/// directly, since the iteration only approaches it geometrically (or, at
/// `β = 1`, harmonically).
pub fn se_fixed_point(beta: f64, es: f64, n0: f64, tol: f64, max_iter: usize) -> Result<f64> {
    check_se_args(beta, es, n0, tol)?;
    if n0 == 0.0 && beta <= 1.0 {
        return Ok(0.0);
    }
    let mut s = se_initial(beta, es, n0);
    for _ in 0..max_iter {
        let next = se_step(s, beta, es, n0);
        if (next - s).abs() <= tol * s {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::NonConvergence(max_iter))
}

/// One step of the coupled SE for an L-MMSE denoiser that assumes signal
/// power `es_assumed`:
///
/// ```text
/// σ²⁺ = N0 + β·(θ⁴·Es + Es′²·σ²)/(Es′ + θ²)²
/// θ²⁺ = N0 + β·Es′·θ²/(Es′ + θ²)
/// ```
pub fn mismatched_se_step(state: SeState, beta: f64, es: f64, es_assumed: f64, n0: f64) -> SeState {
    let SeState { sigma_sq, theta_sq } = state;
    let d = es_assumed + theta_sq;
    SeState {
        sigma_sq: n0
            + beta * (theta_sq * theta_sq * es + es_assumed * es_assumed * sigma_sq) / (d * d),
        theta_sq: n0 + beta * es_assumed * theta_sq / d,
    }
}

/// Fixed point of [`mismatched_se_step`], both components started at
/// `N0 + β·Es`.
pub fn mismatched_se_fixed_point(
    beta: f64,
    es: f64,
    es_assumed: f64,
    n0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SeState> {
    check_se_args(beta, es, n0, tol)?;
    check_positive("assumed signal power", es_assumed)?;
    if n0 == 0.0 && beta < 1.0 {
        return Ok(SeState::matched(0.0));
    }
    let mut s = SeState::matched(se_initial(beta, es, n0));
    for _ in 0..max_iter {
        let next = mismatched_se_step(s, beta, es, es_assumed, n0);
        if (next.sigma_sq - s.sigma_sq).abs() <= tol * s.sigma_sq
            && (next.theta_sq - s.theta_sq).abs() <= tol * s.theta_sq
        {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::NonConvergence(max_iter))
}

/// Effective noise variance solving `σ² = N̂0 + β·Ψ(σ²)` with
/// `Ψ = Es` (MRC), `σ²` (ZF) or `Es·σ²/(Es + σ²)` (L-MMSE).
///
/// The mismatched L-MMSE returns `σ²` of the coupled fixed point.
pub fn generic_fixed_point(kind: EqualizerKind, beta: f64, es: f64, n0: f64) -> Result<f64> {
    check_se_args(beta, es, n0, FIXED_POINT_TOL)?;
    match kind.validate()? {
        EqualizerKind::Mrc => Ok(n0 + beta * es),
        EqualizerKind::Zf => {
            if beta >= 1.0 {
                Err(Error::NoFixedPoint(format!(
                    "ZF needs β < 1, got β = {beta}"
                )))
            } else {
                Ok(n0 / (1.0 - beta))
            }
        }
        EqualizerKind::Lmmse => {
            se_fixed_point(beta, es, n0, FIXED_POINT_TOL, FIXED_POINT_MAX_ITER)
        }
        EqualizerKind::LmmseMismatched(es_assumed) => Ok(mismatched_se_fixed_point(
            beta,
            es,
            es_assumed,
            n0,
            FIXED_POINT_TOL,
            FIXED_POINT_MAX_ITER,
        )?
        .sigma_sq),
    }
}

/// Per-user achievable rate `log2(1 + Es/σ²)` in bits per channel use.
pub fn achievable_rate(es: f64, sigma_sq: f64) -> Result<f64> {
    check_positive("signal power", es)?;
    check_nonnegative("effective noise variance", sigma_sq)?;
    if sigma_sq == 0.0 {
        return Err(Error::InfiniteRate);
    }
    Ok((1.0 + es / sigma_sq).log2())
}

/// AWGN capacity `log2(1 + Es/N0)`.
pub fn awgn_rate(es: f64, n0: f64) -> Result<f64> {
    achievable_rate(es, n0)
}

/// Query for the maximum optimal antenna ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoarQuery {
    pub equalizer: EqualizerKind,
    /// Allowed SNR loss, linear scale, at least 1.
    pub delta_snr: f64,
    /// Target rate in bits per user per channel use.
    pub rate: f64,
}

fn check_rate(rate: f64) -> Result<()> {
    check_positive("rate", rate)
}

/// Largest antenna ratio at which `q.equalizer` stays within `q.delta_snr` of
/// the AWGN limit at rate `q.rate`.
///
/// With `g = 1 − 1/ΔSNR`: MRC `g/(2^R − 1)`, ZF `g`, L-MMSE `g·2^R/(2^R − 1)`.
pub fn moar(q: MoarQuery) -> Result<f64> {
    if !(q.delta_snr >= 1.0 && q.delta_snr.is_finite()) {
        return Err(Error::invalid(format!(
            "SNR loss must be at least 1 (0 dB), got {}",
            q.delta_snr
        )));
    }
    check_rate(q.rate)?;
    let g = 1.0 - 1.0 / q.delta_snr;
    let p = q.rate.exp2();
    match q.equalizer {
        EqualizerKind::Mrc => Ok(g / (p - 1.0)),
        EqualizerKind::Zf => Ok(g),
        EqualizerKind::Lmmse => Ok(g * p / (p - 1.0)),
        EqualizerKind::LmmseMismatched(_) => Err(Error::invalid(
            "MOAR is defined for MRC, ZF and L-MMSE only",
        )),
    }
}

/// SNR loss of a linear equalizer at antenna ratio `beta` and rate `rate`:
/// `(1 − β·Ψ(σ²)/σ²)⁻¹` with `σ² = Es/(2^R − 1)`.
///
/// Returns [`Error::Infeasible`] when the equalizer cannot reach the rate at
/// any SNR.
pub fn snr_loss(kind: EqualizerKind, beta: f64, rate: f64, es: f64) -> Result<f64> {
    check_nonnegative("antenna ratio", beta)?;
    check_rate(rate)?;
    check_positive("signal power", es)?;
    let sigma_sq = es / (rate.exp2() - 1.0);
    let psi = match kind {
        EqualizerKind::Mrc => es,
        EqualizerKind::Zf => sigma_sq,
        EqualizerKind::Lmmse => lmmse_psi(sigma_sq, es),
        EqualizerKind::LmmseMismatched(_) => {
            return Err(Error::invalid(
                "SNR loss is defined for MRC, ZF and L-MMSE only",
            ))
        }
    };
    let denom = 1.0 - beta * psi / sigma_sq;
    if denom <= 0.0 {
        return Err(Error::Infeasible(format!(
            "{kind} cannot reach {rate} bits at β = {beta}"
        )));
    }
    Ok(1.0 / denom)
}

/// Standard normal tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// QPSK symbol error rate on an AWGN channel: `1 − (1 − Q(√(Es/N0)))²`.
pub fn awgn_ser_qpsk(es: f64, n0: f64) -> f64 {
    let p = q_function((es / n0).sqrt());
    // 1 − (1 − p)², written so that small p does not cancel
    p * (2.0 - p)
}

/// BPSK symbol error rate on an AWGN channel: `Q(√(2Es/N0))`.
pub fn awgn_ser_bpsk(es: f64, n0: f64) -> f64 {
    q_function((2.0 * es / n0).sqrt())
}

/// Quantiles of the sample signal power `(1/k)·Σ|x_i|²/Es` for `k`
/// i.i.d. `CN(0, Es)` training symbols, which is `Gamma(k, rate k)`.
///
/// Returns `(lower, upper)` = the `1 − p` and `p` quantiles, i.e. the
/// under- and over-estimation factors not exceeded in a fraction `p` of
/// estimates.
pub fn training_power_quantiles(training_symbols: usize, p: f64) -> Result<(f64, f64)> {
    if training_symbols == 0 {
        return Err(Error::invalid("need at least one training symbol"));
    }
    if !(p > 0.5 && p < 1.0) {
        return Err(Error::invalid(format!("percentile must be in (0.5, 1), got {p}")));
    }
    let k = training_symbols as f64;
    let dist = Gamma::new(k, k).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((dist.inverse_cdf(1.0 - p), dist.inverse_cdf(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Positive root of `σ⁴ + (Es − βEs − N0)σ² − N0·Es = 0`.
    fn quadratic_root(beta: f64, es: f64, n0: f64) -> f64 {
        let b = es - beta * es - n0;
        (-b + (b * b + 4.0 * n0 * es).sqrt()) / 2.0
    }

    #[test]
    fn se_step_values() {
        assert_eq!(se_step(0.0, 0.5, 1.0, 0.1), 0.1);
        assert_relative_eq!(se_step(1.0, 0.5, 1.0, 0.1), 0.35, max_relative = 1e-15);
        assert_eq!(se_step(3.0, 0.0, 1.0, 0.2), 0.2);
    }

    #[test]
    fn se_fixed_point_values() {
        assert_relative_eq!(
            se_fixed_point(0.0, 1.0, 0.1, 1e-12, 10_000).unwrap(),
            0.1,
            max_relative = 1e-15
        );
        let s = se_fixed_point(0.5, 1.0, 0.1, 1e-12, 10_000).unwrap();
        assert!((s - quadratic_root(0.5, 1.0, 0.1)).abs() < 1e-12);
        assert!((s - 0.174166).abs() < 1e-6);
        assert_eq!(se_fixed_point(0.5, 1.0, 0.0, 1e-12, 10_000).unwrap(), 0.0);
        // above the critical load the noiseless fixed point is (β − 1)Es
        let s = se_fixed_point(1.5, 2.0, 0.0, 1e-12, 10_000).unwrap();
        assert_relative_eq!(s, 1.0, max_relative = 1e-9);
        assert!(matches!(
            se_fixed_point(0.5, 1.0, 0.1, 1e-12, 2),
            Err(Error::NonConvergence(2))
        ));
        assert!(se_fixed_point(0.5, 0.0, 0.1, 1e-12, 10).is_err());
    }

    #[test]
    fn se_trajectory_is_monotone() {
        for &(beta, es, n0) in &[(0.5, 1.0, 0.1), (0.9, 2.0, 0.01), (1.5, 1.0, 0.3)] {
            let traj = se_trajectory(beta, es, n0, 200);
            assert_eq!(traj[0], n0 + beta * es);
            for w in traj.windows(2) {
                assert!(w[1] <= w[0]);
                assert!(w[1] >= n0);
            }
        }
    }

    #[test]
    fn mismatched_step_values() {
        let s = mismatched_se_step(SeState::matched(1.0), 0.5, 1.0, 2.0, 0.1);
        assert_relative_eq!(s.theta_sq, 0.1 + 0.5 * 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(s.sigma_sq, 0.1 + 0.5 * 5.0 / 9.0, max_relative = 1e-15);
        let z = mismatched_se_step(SeState { sigma_sq: 2.0, theta_sq: 0.3 }, 0.0, 1.0, 4.0, 0.2);
        assert_eq!(z, SeState::matched(0.2));
    }

    #[test]
    fn mismatched_collapses_to_matched() {
        let mut s = SeState::matched(0.8);
        let mut m = 0.8;
        for _ in 0..50 {
            s = mismatched_se_step(s, 0.3, 1.0, 1.0, 0.05);
            m = se_step(m, 0.3, 1.0, 0.05);
            assert!((s.sigma_sq - m).abs() <= 1e-15 * m);
            assert!((s.sigma_sq - s.theta_sq).abs() <= 1e-15 * m);
        }
        let fp = mismatched_se_fixed_point(0.5, 1.0, 1.0, 0.1, 1e-12, 10_000).unwrap();
        let matched = se_fixed_point(0.5, 1.0, 0.1, 1e-12, 10_000).unwrap();
        assert!((fp.sigma_sq - matched).abs() < 1e-12);
    }

    #[test]
    fn mismatched_limits() {
        let (beta, es, n0) = (0.3, 1.0, 0.1);
        let over = mismatched_se_fixed_point(beta, es, 1e8, n0, 1e-12, 10_000).unwrap();
        assert_relative_eq!(over.sigma_sq, n0 / (1.0 - beta), max_relative = 0.01);
        let under = mismatched_se_fixed_point(beta, es, 1e-8, n0, 1e-12, 10_000).unwrap();
        assert_relative_eq!(under.sigma_sq, n0 + beta * es, max_relative = 0.01);
    }

    #[test]
    fn generic_fixed_points() {
        assert_relative_eq!(
            generic_fixed_point(EqualizerKind::Mrc, 0.5, 1.0, 0.1).unwrap(),
            0.6,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            generic_fixed_point(EqualizerKind::Zf, 0.5, 1.0, 0.1).unwrap(),
            0.2,
            max_relative = 1e-15
        );
        let l = generic_fixed_point(EqualizerKind::Lmmse, 0.5, 1.0, 0.1).unwrap();
        assert!((l - quadratic_root(0.5, 1.0, 0.1)).abs() < 1e-12);
        assert!(matches!(
            generic_fixed_point(EqualizerKind::Zf, 1.0, 1.0, 0.1),
            Err(Error::NoFixedPoint(_))
        ));
    }

    #[test]
    fn rates() {
        assert_eq!(achievable_rate(2.0, 2.0).unwrap(), 1.0);
        assert_eq!(achievable_rate(3.0, 1.0).unwrap(), 2.0);
        let s = quadratic_root(0.5, 1.0, 0.1);
        assert_relative_eq!(achievable_rate(1.0, s).unwrap(), 2.7531, max_relative = 1e-4);
        assert!(matches!(achievable_rate(1.0, 0.0), Err(Error::InfiniteRate)));
        assert_eq!(awgn_rate(1.0, 1.0).unwrap(), 1.0);
        assert_eq!(awgn_rate(15.0, 1.0).unwrap(), 4.0);
        assert_relative_eq!(awgn_rate(10.0, 1.0).unwrap(), 11f64.log2(), max_relative = 1e-15);
        assert_relative_eq!(awgn_rate(10.0, 1.0).unwrap(), 3.4594, max_relative = 1e-4);
    }

    fn q(equalizer: EqualizerKind, delta_snr: f64, rate: f64) -> MoarQuery {
        MoarQuery {
            equalizer,
            delta_snr,
            rate,
        }
    }

    #[test]
    fn moar_values() {
        let one_db = 10f64.powf(0.1);
        for k in [EqualizerKind::Mrc, EqualizerKind::Zf, EqualizerKind::Lmmse] {
            assert_eq!(moar(q(k, 1.0, 1.5)).unwrap(), 0.0);
        }
        assert!((moar(q(EqualizerKind::Lmmse, one_db, 1.5)).unwrap() - 0.31819).abs() < 1e-4);
        assert!((moar(q(EqualizerKind::Zf, one_db, 0.7)).unwrap() - 0.20567).abs() < 1e-5);
        assert!((moar(q(EqualizerKind::Mrc, one_db, 1.5)).unwrap() - 0.11249).abs() < 1e-5);
        assert!(moar(q(EqualizerKind::Lmmse, 0.9, 1.5)).is_err());
        assert!(moar(q(EqualizerKind::Lmmse, 1.2, 0.0)).is_err());
    }

    #[test]
    fn snr_loss_values() {
        for k in [EqualizerKind::Mrc, EqualizerKind::Zf, EqualizerKind::Lmmse] {
            assert_eq!(snr_loss(k, 0.0, 2.0, 1.0).unwrap(), 1.0);
        }
        let beta = moar(q(EqualizerKind::Zf, 10f64.powf(0.1), 1.0)).unwrap();
        for rate in [0.5, 1.5, 4.0] {
            assert_relative_eq!(
                snr_loss(EqualizerKind::Zf, beta, rate, 1.0).unwrap(),
                10f64.powf(0.1),
                max_relative = 1e-12
            );
        }
        assert!(matches!(
            snr_loss(EqualizerKind::Zf, 1.0, 1.0, 1.0),
            Err(Error::Infeasible(_))
        ));
        assert!(matches!(
            snr_loss(EqualizerKind::Zf, 1.3, 1.0, 1.0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn awgn_ser_values() {
        // Q(1) = 0.158655253931457...
        assert_relative_eq!(q_function(1.0), 0.15865525393145707, max_relative = 1e-9);
        assert_relative_eq!(awgn_ser_qpsk(1.0, 1.0), 0.29215, max_relative = 1e-4);
        assert_relative_eq!(awgn_ser_qpsk(1.0, 1e12), 0.75, max_relative = 1e-5);
        assert!(awgn_ser_qpsk(1000.0, 1.0) < 1e-12);
        let mut prev = 1.0;
        for db in 0..30 {
            let s = awgn_ser_qpsk(10f64.powf(db as f64 / 10.0), 1.0);
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn training_quantiles() {
        let (lo, hi) = training_power_quantiles(2, 0.9).unwrap();
        // Gamma(2, rate 2) survival: e^{-2q}(1 + 2q)
        let surv = |q: f64| (-2.0 * q).exp() * (1.0 + 2.0 * q);
        assert_relative_eq!(surv(hi), 0.1, max_relative = 1e-6);
        assert_relative_eq!(surv(lo), 0.9, max_relative = 1e-6);
        assert!(lo < 1.0 && hi > 1.0);
        assert!(training_power_quantiles(0, 0.9).is_err());
        assert!(training_power_quantiles(2, 0.4).is_err());
    }
}
