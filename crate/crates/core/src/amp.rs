//! AMP-family equalizers.
//!
//! All three algorithms share one recursion. Each iteration computes the
//! matched-filter output `z = x + Hᴴr`, picks a linear shrinkage `F(z) = f∘z`,
//! and updates the residual with the Onsager correction:
//!
//! ```text
//! x⁺ = f ∘ z
//! r⁺ = y − H·S·x⁺ + β·r·⟨f⟩
//! ```
//!
//! They differ only in how `f` is tuned:
//!
//! * [`mmse_amp`] knows `Es` and uses `τ = ‖r‖²/B`, `f = Es/(Es + τ)`.
//! * [`nope`] knows nothing about the signal or noise powers. It minimizes
//!   Stein's unbiased risk estimate of the shrinkage MSE, which gives
//!   `γ = ‖z‖²/(β‖r‖²) − 1` and `f = γ/(γ + 1)`.
//! * [`robust_nope`] handles per-user channel gains `d̂_ℓ` by estimating `Es`
//!   from the data and shrinking each user with `Ês/(Ês + τ̂/d̂_ℓ²)`. Its
//!   iterate carries a `d̂_ℓ²` scaling, so `S = D̂⁻²` in the residual update
//!   and the user estimate is `D̂⁻²x`.
//!
//! For the first two algorithms `S = I`.

use std::io::Write;

use crate::harness::output::fmt_float;
use crate::model::{estimate_gains_checked, ChannelRealization};
use crate::{CMatrix, CVector, Error, Result, C64};

/// A run is declared divergent once `σ̃²_t` exceeds this multiple of `σ̃²_1`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Relative iterate change below which an early-stopping run terminates.
pub const CONVERGENCE_TOL: f64 = 1e-8;

/// Lower bound on robust NOPE's signal-power estimate, relative to `τ̂`.
pub const SIGNAL_POWER_FLOOR: f64 = 1e-12;

/// Per-iteration tuning parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tuning {
    /// Effective noise threshold `τ` (MMSE-AMP, robust NOPE).
    Tau(f64),
    /// SURE-optimal `γ = Es/τ` (NOPE).
    Gamma(f64),
}

impl Tuning {
    pub fn value(self) -> f64 {
        match self {
            Tuning::Tau(v) | Tuning::Gamma(v) => v,
        }
    }
}

/// State at the start of iteration `t` and the quantities computed in it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Iterate `x_t`.
    pub x: CVector,
    /// Matched-filter output `z_t = x_t + Hᴴr_t`.
    pub z: CVector,
    /// Residual `r_t`.
    pub r: CVector,
    /// `‖r_t‖²/B`.
    pub sigma_tilde_sq: f64,
    pub tuning: Tuning,
    /// Whether the tuning parameter hit its lower bound.
    pub gamma_clamped: bool,
    /// Average shrinkage derivative `⟨f⟩` used in the Onsager term.
    pub onsager: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    /// The residual vanished.
    ExactFit,
    /// The iterate stopped moving (only with early stopping enabled).
    Converged,
}

/// Full history of one AMP-family run.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpTrace {
    pub records: Vec<IterationRecord>,
    /// Last iterate `x^{T+1}` in the algorithm's own scaling.
    pub final_iterate: CVector,
    /// Per-user scaling mapping iterates to symbol estimates (`d̂⁻²` for
    /// robust NOPE, `None` when the iterate already is the estimate).
    pub output_scale: Option<Vec<f64>>,
    pub stop: StopReason,
}

impl AmpTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    fn to_estimate(&self, iterate: &CVector) -> CVector {
        match &self.output_scale {
            None => iterate.clone(),
            Some(s) => scale(iterate, s),
        }
    }

    /// Symbol estimate after the last executed iteration.
    pub fn final_estimate(&self) -> CVector {
        self.to_estimate(&self.final_iterate)
    }

    /// Symbol estimate produced by iteration `index` (0-based into `records`).
    pub fn estimate_after(&self, index: usize) -> CVector {
        match self.records.get(index + 1) {
            Some(next) => self.to_estimate(&next.x),
            None => self.final_estimate(),
        }
    }

    /// Last matched-filter output, in symbol scaling.
    pub fn last_z(&self) -> Option<CVector> {
        self.records.last().map(|rec| self.to_estimate(&rec.z))
    }

    /// Writes one CSV row per iteration:
    /// `iteration,sigma_tilde_sq,tuning_value,mse_vs_truth`.
    ///
    /// The MSE column is left empty when `truth` is `None`.
    pub fn write_csv<W: Write>(&self, mut w: W, truth: Option<&CVector>) -> std::io::Result<()> {
        writeln!(w, "iteration,sigma_tilde_sq,tuning_value,mse_vs_truth")?;
        for (i, rec) in self.records.iter().enumerate() {
            let mse = truth
                .map(|x| fmt_float((self.estimate_after(i) - x).norm_squared() / x.len() as f64))
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{}",
                i + 1,
                fmt_float(rec.sigma_tilde_sq),
                fmt_float(rec.tuning.value()),
                mse
            )?;
        }
        Ok(())
    }
}

/// Robust NOPE parameter estimates for one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustEstimates {
    /// `Ês_t`, after flooring.
    pub signal_power: f64,
    /// `τ̂_t = ‖r_t‖²/B`.
    pub tau: f64,
}

/// Iteration budget and stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AmpOptions {
    pub max_iterations: usize,
    /// Stop once `‖x_{t+1} − x_t‖ / max(‖x_t‖, ε) < CONVERGENCE_TOL`.
    pub early_stop: bool,
}

impl AmpOptions {
    /// Runs exactly `t` iterations unless the residual vanishes.
    pub fn fixed(t: usize) -> Self {
        AmpOptions {
            max_iterations: t,
            early_stop: false,
        }
    }

    pub fn with_early_stop(mut self) -> Self {
        self.early_stop = true;
        self
    }
}

impl From<usize> for AmpOptions {
    fn from(t: usize) -> Self {
        AmpOptions::fixed(t)
    }
}

/// MSE of the shrinkage `Es/(Es+τ)·z` on `z = x + CN(0, σ̃²)`, `x ~ CN(0, Es)`:
/// `Ψ = (τ²Es + σ̃²Es²)/(Es + τ)²`.
pub fn psi_mse(sigma_tilde_sq: f64, tau: f64, es: f64) -> f64 {
    (tau * tau * es + sigma_tilde_sq * es * es) / ((es + tau) * (es + tau))
}

/// Minimizer of [`psi_mse`] over `τ ≥ 0`.
///
/// `∂Ψ/∂τ = 2Es²(τ − σ̃²)/(Es + τ)³`, so the minimum sits at `τ = σ̃²`
/// regardless of `Es`.
pub fn optimal_tau(sigma_tilde_sq: f64, _es: f64) -> f64 {
    sigma_tilde_sq.max(0.0)
}

/// Stein's unbiased estimate of the MSE of `γ/(γ+1)·z`:
/// `Ψ̂ = σ̃²(γ − 1)/(γ + 1) + ‖z‖²/(U(γ + 1)²)`.
///
/// Can be negative; it is an unbiased estimate, not a norm.
pub fn sure_estimate(sigma_tilde_sq: f64, gamma: f64, z: &CVector) -> f64 {
    let mean_power = z.norm_squared() / z.len() as f64;
    sure_from_power(sigma_tilde_sq, gamma, mean_power)
}

fn sure_from_power(sigma_tilde_sq: f64, gamma: f64, mean_power: f64) -> f64 {
    sigma_tilde_sq * (gamma - 1.0) / (gamma + 1.0) + mean_power / ((gamma + 1.0) * (gamma + 1.0))
}

/// SURE minimizer `γ = ‖z‖²/(Uσ̃²) − 1`, clamped at zero.
///
/// Returns the clamped value and whether the clamp was active.
pub fn gamma_min(z: &CVector, sigma_tilde_sq: f64) -> Result<(f64, bool)> {
    if !(sigma_tilde_sq > 0.0) {
        return Err(Error::Degenerate(format!(
            "SURE tuning needs a positive noise estimate, got {sigma_tilde_sq}"
        )));
    }
    let raw = z.norm_squared() / (z.len() as f64 * sigma_tilde_sq) - 1.0;
    Ok(clamp_gamma(raw))
}

fn clamp_gamma(raw: f64) -> (f64, bool) {
    if raw < 0.0 {
        (0.0, true)
    } else {
        (raw, false)
    }
}

/// Parametric MMSE-AMP with a Gaussian `CN(0, Es)` prior.
pub fn mmse_amp(
    h: &CMatrix,
    y: &CVector,
    es: f64,
    opts: impl Into<AmpOptions>,
) -> Result<AmpTrace> {
    if !(es > 0.0 && es.is_finite()) {
        return Err(Error::invalid(format!("signal power must be positive, got {es}")));
    }
    let b = h.nrows() as f64;
    let (trace, _) = run(h, y, opts.into(), None, |_z, r_norm_sq| {
        let tau = optimal_tau(r_norm_sq / b, es);
        Ok(Step {
            shrink: Shrink::Uniform(es / (es + tau)),
            tuning: Tuning::Tau(tau),
            clamped: false,
            robust: None,
        })
    })?;
    Ok(trace)
}

/// Nonparametric equalizer: AMP with SURE-tuned linear shrinkage.
///
/// Consumes no signal, noise or prior information.
pub fn nope(h: &CMatrix, y: &CVector, opts: impl Into<AmpOptions>) -> Result<AmpTrace> {
    let beta = h.ncols() as f64 / h.nrows() as f64;
    let (trace, _) = run(h, y, opts.into(), None, |z, r_norm_sq| {
        let raw = z.norm_squared() / (beta * r_norm_sq) - 1.0;
        let (gamma, clamped) = clamp_gamma(raw);
        Ok(Step {
            shrink: Shrink::Uniform(gamma / (gamma + 1.0)),
            tuning: Tuning::Gamma(gamma),
            clamped,
            robust: None,
        })
    })?;
    Ok(trace)
}

/// Signal power estimate of robust NOPE,
/// `Ês = (Σ_ℓ |z_ℓ|²/d̂²_ℓ − β‖r‖²) / Σ_ℓ d̂²_ℓ`, before flooring.
///
/// `gain_sq` holds the squared gain estimates `d̂²_ℓ`.
pub fn signal_power_estimate(z: &CVector, gain_sq: &[f64], r_norm_sq: f64, beta: f64) -> f64 {
    let normalized: f64 = z.iter().zip(gain_sq).map(|(v, g)| v.norm_sqr() / g).sum();
    let total: f64 = gain_sq.iter().sum();
    (normalized - beta * r_norm_sq) / total
}

/// NOPE for channels `H = H̃·D` with unknown per-user gains.
///
/// Uses `channel.estimated_gains` when present, otherwise the column norms of
/// `channel.h`. Every gain must be positive.
pub fn robust_nope(
    channel: &ChannelRealization,
    y: &CVector,
    opts: impl Into<AmpOptions>,
) -> Result<(AmpTrace, Vec<RobustEstimates>)> {
    let gains = match &channel.estimated_gains {
        Some(d) => {
            if d.len() != channel.h.ncols() {
                return Err(Error::invalid(format!(
                    "expected {} gain estimates, got {}",
                    channel.h.ncols(),
                    d.len()
                )));
            }
            if let Some(g) = d.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
                return Err(Error::invalid(format!("gain estimates must be positive, got {g}")));
            }
            d.clone()
        }
        None => estimate_gains_checked(&channel.h)?,
    };
    let h = &channel.h;
    let b = h.nrows() as f64;
    let beta = h.ncols() as f64 / b;
    let gain_sq: Vec<f64> = gains.iter().map(|d| d * d).collect();
    let inv_gain_sq: Vec<f64> = gain_sq.iter().map(|g| 1.0 / g).collect();

    run(h, y, opts.into(), Some(inv_gain_sq), |z, r_norm_sq| {
        let tau = r_norm_sq / b;
        let raw = signal_power_estimate(z, &gain_sq, r_norm_sq, beta);
        let floor = SIGNAL_POWER_FLOOR * tau;
        let (es_hat, clamped) = if raw < floor { (floor, true) } else { (raw, false) };
        let factors = gain_sq
            .iter()
            .map(|g| es_hat / (es_hat + tau / g))
            .collect();
        Ok(Step {
            shrink: Shrink::PerUser(factors),
            tuning: Tuning::Tau(tau),
            clamped,
            robust: Some(RobustEstimates {
                signal_power: es_hat,
                tau,
            }),
        })
    })
}

enum Shrink {
    Uniform(f64),
    PerUser(Vec<f64>),
}

struct Step {
    shrink: Shrink,
    tuning: Tuning,
    clamped: bool,
    robust: Option<RobustEstimates>,
}

fn scale(v: &CVector, s: &[f64]) -> CVector {
    CVector::from_iterator(v.len(), v.iter().zip(s).map(|(a, w)| a * *w))
}

fn all_finite(v: &CVector) -> bool {
    v.iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

fn run<F>(
    h: &CMatrix,
    y: &CVector,
    opts: AmpOptions,
    output_scale: Option<Vec<f64>>,
    mut tune: F,
) -> Result<(AmpTrace, Vec<RobustEstimates>)>
where
    F: FnMut(&CVector, f64) -> Result<Step>,
{
    let (b, u) = h.shape();
    if b == 0 || u == 0 {
        return Err(Error::invalid(format!("channel shape {b}x{u} is empty")));
    }
    if y.len() != b {
        return Err(Error::invalid(format!(
            "channel has {b} rows but y has {} entries",
            y.len()
        )));
    }
    if opts.max_iterations == 0 {
        return Err(Error::invalid("iteration count must be at least 1"));
    }
    let beta = u as f64 / b as f64;

    // x¹ = E[X₀] = 0 for every supported (zero-mean) prior, so r¹ = y.
    let mut x = CVector::zeros(u);
    let mut r = y.clone();
    let mut records = Vec::with_capacity(opts.max_iterations);
    let mut robust = Vec::new();
    let mut first_sigma = None;
    let mut stop = StopReason::MaxIterations;

    for t in 1..=opts.max_iterations {
        let r_norm_sq = r.norm_squared();
        if r_norm_sq == 0.0 {
            stop = StopReason::ExactFit;
            break;
        }
        let sigma = r_norm_sq / b as f64;
        if !sigma.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                reason: "residual energy is not finite".into(),
            });
        }
        let sigma_1 = *first_sigma.get_or_insert(sigma);
        if sigma > DIVERGENCE_FACTOR * sigma_1 {
            return Err(Error::Divergence {
                iteration: t,
                reason: format!("residual energy {sigma:e} exceeds {DIVERGENCE_FACTOR:e} × {sigma_1:e}"),
            });
        }

        let z = &x + h.ad_mul(&r);
        let step = tune(&z, r_norm_sq)?;
        let (x_next, onsager) = match &step.shrink {
            Shrink::Uniform(f) => (&z * C64::new(*f, 0.0), *f),
            Shrink::PerUser(f) => (scale(&z, f), f.iter().sum::<f64>() / u as f64),
        };
        let estimate = match &output_scale {
            None => h * &x_next,
            Some(s) => h * scale(&x_next, s),
        };
        let r_next = y - estimate + &r * C64::new(beta * onsager, 0.0);
        if !all_finite(&x_next) || !all_finite(&r_next) || !onsager.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                reason: "non-finite iterate".into(),
            });
        }

        let converged = opts.early_stop && {
            let base = x.norm().max(f64::MIN_POSITIVE);
            (&x_next - &x).norm() / base < CONVERGENCE_TOL
        };
        robust.extend(step.robust);
        records.push(IterationRecord {
            x,
            z,
            r,
            sigma_tilde_sq: sigma,
            tuning: step.tuning,
            gamma_clamped: step.clamped,
            onsager,
        });
        x = x_next;
        r = r_next;
        if converged {
            stop = StopReason::Converged;
            break;
        }
    }

    Ok((
        AmpTrace {
            records,
            final_iterate: x,
            output_scale,
            stop,
        },
        robust,
    ))
}
