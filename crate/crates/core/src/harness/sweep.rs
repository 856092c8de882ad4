//! Monte Carlo sweeps.
//!
//! Trial `t` draws its channel, symbols and noise from the substreams
//! `(seed, t, purpose)` of [`crate::model::substream`]. Every algorithm at a
//! sweep point sees the same `(H, x, n)`, and the channel and symbols are
//! shared by all points with the same dimensions, so curves are compared on
//! common realizations. Noise is redrawn from the start of its substream at
//! every point and scaled to that point's `N0`.
//!
//! Trials run on a rayon pool. Per-trial results are collected in trial
//! order and reduced sequentially, so the output does not depend on the
//! number of workers.

use rand::Rng;
use rayon::prelude::*;

use crate::amp::{self, AmpOptions};
use crate::analysis;
use crate::linear_eq::{EqualizerKind, GramFactor, GramSystem};
use crate::model::{self, ChannelRealization, Constellation, Purpose};
use crate::{db_to_linear, linear_to_db, CMatrix, CVector, Error, Result};

use super::{Algorithm, ExperimentSpec, GainProfile, RowStatus, SweepResult, SweepRow, SweepVariable};

/// Errors below this count mark a SER row as `low_confidence`.
pub const MIN_CONFIDENT_EVENTS: usize = 100;

/// One sweep point after resolving the swept variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub users: usize,
    pub n0: f64,
}

/// Resolves the sweep grid into dimensions and noise powers.
pub fn sweep_points(spec: &ExperimentSpec) -> Result<Vec<SweepPoint>> {
    let es = ExperimentSpec::SIGNAL_POWER;
    let fixed_n0 = es / db_to_linear(spec.snr_db);
    spec.sweep
        .range
        .values()
        .into_iter()
        .map(|value| {
            let (users, n0) = match spec.sweep.variable {
                SweepVariable::SnrDb => (spec.users, es / db_to_linear(value)),
                SweepVariable::Beta => ((value * spec.bs_antennas as f64).round() as usize, fixed_n0),
                SweepVariable::Users => (value.round() as usize, fixed_n0),
            };
            if users == 0 {
                return Err(Error::invalid(format!(
                    "sweep value {value} leaves no users at B = {}",
                    spec.bs_antennas
                )));
            }
            Ok(SweepPoint { value, users, n0 })
        })
        .collect()
}

/// Amplitude gains `d` for one trial, or `None` for the uniform profile.
fn draw_gains<R: Rng + ?Sized>(profile: &GainProfile, users: usize, rng: &mut R) -> Option<Vec<f64>> {
    match profile {
        GainProfile::Uniform => None,
        GainProfile::Explicit(power) => {
            Some((0..users).map(|u| power[u % power.len()].sqrt()).collect())
        }
        GainProfile::LogUniform { lo, hi } => {
            let (a, b) = (lo.ln(), hi.ln());
            Some(
                (0..users)
                    .map(|_| (a + (b - a) * rng.random::<f64>()).exp().sqrt())
                    .collect(),
            )
        }
    }
}

/// Channel and symbols of trial `trial` with `users` users.
///
/// Faded profiles draw the gains from the channel stream before the channel
/// itself.
pub fn draw_realization(
    spec: &ExperimentSpec,
    users: usize,
    trial: u64,
) -> Result<(ChannelRealization, CVector)> {
    let mut rng = model::substream(spec.seed, trial, Purpose::Channel);
    let channel = match draw_gains(&spec.gain_profile, users, &mut rng) {
        None => model::gen_uniform_channel(spec.bs_antennas, users, &mut rng)?,
        Some(d) => model::gen_faded_channel(spec.bs_antennas, users, &d, &mut rng)?,
    };
    let mut rng = model::substream(spec.seed, trial, Purpose::Symbols);
    let x = model::draw_symbols(spec.constellation, users, ExperimentSpec::SIGNAL_POWER, &mut rng)?;
    Ok((channel, x))
}

/// Received vector of trial `trial` at noise power `n0`.
pub fn draw_received(h: &CMatrix, x: &CVector, n0: f64, trial: u64, seed: u64) -> Result<CVector> {
    let mut rng = model::substream(seed, trial, Purpose::Noise);
    Ok(model::transmit(h, x, n0, &mut rng)?.y)
}

fn amp_options(spec: &ExperimentSpec) -> AmpOptions {
    let opts = AmpOptions::fixed(spec.iterations);
    if spec.early_stop {
        opts.with_early_stop()
    } else {
        opts
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Per-trial cache of everything that does not depend on `N0`.
struct Realization {
    users: usize,
    channel: ChannelRealization,
    x: CVector,
    gram: Option<GramSystem>,
    zf: Option<Result<GramFactor>>,
}

impl Realization {
    fn new(spec: &ExperimentSpec, users: usize, trial: u64, needs_gram: bool) -> Result<Self> {
        let (channel, x) = draw_realization(spec, users, trial)?;
        let gram = needs_gram.then(|| GramSystem::new(&channel.h));
        Ok(Realization {
            users,
            channel,
            x,
            gram,
            zf: None,
        })
    }

    fn factor(&mut self, reg: f64) -> Result<GramFactor> {
        let gram = self.gram.as_ref().expect("Gram matrix requested up front");
        if reg == 0.0 {
            // ZF does not depend on the noise level
            return match self.zf.get_or_insert_with(|| gram.factor(0.0)) {
                Ok(f) => Ok(f.clone()),
                Err(Error::RankDeficient(m)) => Err(Error::RankDeficient(m.clone())),
                Err(e) => Err(Error::invalid(e.to_string())),
            };
        }
        gram.factor(reg)
    }
}

/// Detector output `x̂` and the per-user gains that make it unbiased.
struct Detection {
    estimate: CVector,
    /// Unbiased per-user observation `z` (only computed when requested).
    unbiased: Option<CVector>,
}

fn detect(
    alg: Algorithm,
    real: &mut Realization,
    y: &CVector,
    n0: f64,
    opts: AmpOptions,
    want_unbiased: bool,
) -> Result<Option<Detection>> {
    let es = ExperimentSpec::SIGNAL_POWER;
    let h = &real.channel.h;
    let linear = |kind: EqualizerKind, real: &mut Realization| -> Result<Option<Detection>> {
        let mf = real.channel.h.ad_mul(y);
        if kind == EqualizerKind::Mrc {
            let unbiased = want_unbiased.then(|| {
                let mut z = mf.clone();
                for (v, col) in z.iter_mut().zip(real.channel.h.column_iter()) {
                    *v /= col.norm_squared();
                }
                z
            });
            return Ok(Some(Detection {
                estimate: mf,
                unbiased,
            }));
        }
        let reg = crate::linear_eq::regularization(kind, es, n0).expect("Gram-based equalizer");
        let factor = match real.factor(reg) {
            Ok(f) => f,
            Err(Error::RankDeficient(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let estimate = factor.solve(&mf);
        let unbiased = want_unbiased.then(|| {
            let g = factor.effective_gains();
            CVector::from_iterator(estimate.len(), estimate.iter().zip(&g).map(|(v, g)| v / *g))
        });
        Ok(Some(Detection { estimate, unbiased }))
    };
    match alg {
        Algorithm::Mrc | Algorithm::Zf | Algorithm::Lmmse | Algorithm::LmmseMismatched(_) => {
            linear(alg.equalizer().unwrap(), real)
        }
        Algorithm::MmseAmp | Algorithm::Nope | Algorithm::RobustNope => {
            let trace = match alg {
                Algorithm::MmseAmp => amp::mmse_amp(h, y, es, opts)?,
                Algorithm::Nope => amp::nope(h, y, opts)?,
                _ => amp::robust_nope(&real.channel, y, opts)?.0,
            };
            Ok(Some(Detection {
                estimate: trace.final_estimate(),
                unbiased: if want_unbiased { trace.last_z() } else { None },
            }))
        }
    }
}

/// Runs `per_trial` for every trial on a pool of `spec.workers` threads and
/// returns the results in trial order.
fn run_trials<T: Send>(
    spec: &ExperimentSpec,
    per_trial: impl Fn(u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let pool = thread_pool(spec.workers)?;
    pool.install(|| {
        (0..spec.trials as u64)
            .into_par_iter()
            .map(&per_trial)
            .collect::<Result<Vec<T>>>()
    })
}

fn check_algorithms(spec: &ExperimentSpec) -> Result<()> {
    if spec.algorithms.is_empty() {
        return Err(Error::invalid("no algorithms requested"));
    }
    Ok(())
}

/// Symbol errors of one algorithm in one trial; `None` when skipped.
#[derive(Debug, Clone, Copy)]
struct SerCount {
    errors: usize,
    /// Users wrong here but right under L-MMSE, and vice versa.
    discordant: Option<(usize, usize)>,
}

fn error_mask(
    estimate: &CVector,
    truth: &CVector,
    constellation: Constellation,
    es: f64,
) -> Result<Vec<bool>> {
    let decided = model::demap(estimate, constellation, es)?;
    Ok(decided.iter().zip(truth.iter()).map(|(a, b)| a != b).collect())
}

fn ser_trial(
    spec: &ExperimentSpec,
    points: &[SweepPoint],
    trial: u64,
) -> Result<Vec<Vec<Option<SerCount>>>> {
    let es = ExperimentSpec::SIGNAL_POWER;
    let opts = amp_options(spec);
    let needs_gram = spec
        .algorithms
        .iter()
        .any(|a| matches!(a.equalizer(), Some(k) if k != EqualizerKind::Mrc));
    let lmmse_index = spec.algorithms.iter().position(|a| *a == Algorithm::Lmmse);
    let mut cache: Option<Realization> = None;
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if cache.as_ref().map(|c| c.users) != Some(p.users) {
            cache = Some(Realization::new(spec, p.users, trial, needs_gram)?);
        }
        let real = cache.as_mut().unwrap();
        let y = draw_received(&real.channel.h, &real.x, p.n0, trial, spec.seed)?;
        let truth = model::demap(&real.x, spec.constellation, es)?;

        let mut masks = Vec::with_capacity(spec.algorithms.len());
        for &alg in &spec.algorithms {
            let mask = match detect(alg, real, &y, p.n0, opts, false)? {
                Some(d) => Some(error_mask(&d.estimate, &truth, spec.constellation, es)?),
                None => None,
            };
            masks.push(mask);
        }
        let reference = lmmse_index.and_then(|i| masks[i].clone());
        let counts = masks
            .iter()
            .map(|m| {
                m.as_ref().map(|m| SerCount {
                    errors: m.iter().filter(|e| **e).count(),
                    discordant: reference.as_ref().map(|r| {
                        let a_only = m.iter().zip(r).filter(|(a, b)| **a && !**b).count();
                        let r_only = m.iter().zip(r).filter(|(a, b)| !**a && **b).count();
                        (a_only, r_only)
                    }),
                })
            })
            .collect();
        out.push(counts);
    }
    Ok(out)
}

/// Symbol error rate of every algorithm at every sweep point.
///
/// Emits `ser` rows (binomial standard error `√(p̂(1−p̂)/(U·trials))`), an
/// `awgn_bound` row with the single-user AWGN SER, and for every algorithm
/// other than L-MMSE (when L-MMSE is requested) a `ser_diff_vs_lmmse` row with
/// the paired difference and its standard error. Algorithms that cannot run
/// at a point give `skipped` rows.
pub fn run_ser_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    check_algorithms(spec)?;
    if !spec.constellation.is_finite() {
        return Err(Error::Unsupported(
            "symbol error rates need a finite constellation".into(),
        ));
    }
    let es = ExperimentSpec::SIGNAL_POWER;
    let points = sweep_points(spec)?;
    let per_trial = run_trials(spec, |t| ser_trial(spec, &points, t))?;

    let lmmse_index = spec.algorithms.iter().position(|a| *a == Algorithm::Lmmse);
    let mut rows = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        let symbols = (p.users * spec.trials) as f64;
        let row = |algorithm: String, metric: &str| SweepRow {
            sweep_value: p.value,
            algorithm,
            metric: metric.to_string(),
            value: None,
            trials: spec.trials,
            stderr: None,
            status: RowStatus::Skipped,
        };
        for (ai, alg) in spec.algorithms.iter().enumerate() {
            let counts: Option<Vec<SerCount>> = per_trial.iter().map(|t| t[pi][ai]).collect();
            let mut ser = row(alg.tag(), "ser");
            let mut diff = row(alg.tag(), "ser_diff_vs_lmmse");
            if let Some(counts) = &counts {
                let errors: usize = counts.iter().map(|c| c.errors).sum();
                let p_hat = errors as f64 / symbols;
                ser.value = Some(p_hat);
                ser.stderr = Some((p_hat * (1.0 - p_hat) / symbols).sqrt());
                ser.status = if errors < MIN_CONFIDENT_EVENTS {
                    RowStatus::LowConfidence
                } else {
                    RowStatus::Ok
                };
                let discordant: Option<Vec<(usize, usize)>> =
                    counts.iter().map(|c| c.discordant).collect();
                if let Some(disc) = discordant {
                    let (a_only, r_only) = disc
                        .iter()
                        .fold((0, 0), |acc, d| (acc.0 + d.0, acc.1 + d.1));
                    let d = (a_only as f64 - r_only as f64) / symbols;
                    let var = ((a_only + r_only) as f64 / symbols - d * d).max(0.0) / symbols;
                    diff.value = Some(d);
                    diff.stderr = Some(var.sqrt());
                    diff.status = RowStatus::Ok;
                }
            }
            rows.push(ser);
            if lmmse_index.is_some() && Some(ai) != lmmse_index {
                rows.push(diff);
            }
        }
        let bound = match spec.constellation {
            Constellation::Qpsk => analysis::awgn_ser_qpsk(es, p.n0),
            Constellation::Bpsk => analysis::awgn_ser_bpsk(es, p.n0),
            Constellation::Gaussian => unreachable!("checked above"),
        };
        rows.push(SweepRow {
            value: Some(bound),
            stderr: None,
            status: RowStatus::Ok,
            ..row("awgn_bound".into(), "ser")
        });
    }
    let mut result = SweepResult {
        variable: spec.sweep.variable,
        rows,
    };
    result.sort();
    Ok(result)
}

/// Per-trial mean squared errors of one algorithm: `(|z − x|², |x̂ − x|²)`.
type SeSample = Option<(f64, f64)>;

fn se_trial(spec: &ExperimentSpec, points: &[SweepPoint], trial: u64) -> Result<Vec<Vec<SeSample>>> {
    let opts = amp_options(spec);
    let needs_gram = spec
        .algorithms
        .iter()
        .any(|a| matches!(a.equalizer(), Some(k) if k != EqualizerKind::Mrc));
    let mut cache: Option<Realization> = None;
    let mut out = Vec::with_capacity(points.len());
    for p in points {
        if cache.as_ref().map(|c| c.users) != Some(p.users) {
            cache = Some(Realization::new(spec, p.users, trial, needs_gram)?);
        }
        let real = cache.as_mut().unwrap();
        let y = draw_received(&real.channel.h, &real.x, p.n0, trial, spec.seed)?;
        let u = p.users as f64;
        let mut samples = Vec::with_capacity(spec.algorithms.len());
        for &alg in &spec.algorithms {
            let sample = detect(alg, real, &y, p.n0, opts, true)?.map(|d| {
                let z = d.unbiased.expect("requested");
                (
                    (z - &real.x).norm_squared() / u,
                    (d.estimate - &real.x).norm_squared() / u,
                )
            });
            samples.push(sample);
        }
        out.push(samples);
    }
    Ok(out)
}

fn mean_and_stderr(samples: &[f64]) -> (f64, Option<f64>) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, None);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Large-system effective noise variance predicted for `alg` on uniform
/// channels, if there is one.
fn predicted_sigma_sq(alg: Algorithm, beta: f64, es: f64, n0: f64) -> Option<f64> {
    let kind = match alg {
        Algorithm::MmseAmp | Algorithm::Nope => EqualizerKind::Lmmse,
        Algorithm::RobustNope => return None,
        other => other.equalizer()?,
    };
    analysis::generic_fixed_point(kind, beta, es, n0).ok()
}

/// Empirical versus predicted SIR with Gaussian symbols.
///
/// Per point and algorithm: `empirical_sir_db` = `Es / mean|z − x|²` over
/// users and trials, where `z` is the unbiased per-user observation (AMP's
/// last matched-filter output, or the linear output divided by `diag(WH)`);
/// `mse` = mean `|x̂ − x|²` of the final estimate; and, for uniform channels,
/// `analytic_sir_db` from the state-evolution fixed point. Standard errors
/// come from the spread across trials (delta method for the dB values).
pub fn run_se_comparison(spec: &ExperimentSpec) -> Result<SweepResult> {
    check_algorithms(spec)?;
    if spec.constellation != Constellation::Gaussian {
        return Err(Error::Unsupported(
            "the SIR comparison needs Gaussian symbols".into(),
        ));
    }
    let es = ExperimentSpec::SIGNAL_POWER;
    let points = sweep_points(spec)?;
    let per_trial = run_trials(spec, |t| se_trial(spec, &points, t))?;
    let db_per_rel = 10.0 / std::f64::consts::LN_10;

    let mut rows = Vec::new();
    for (pi, p) in points.iter().enumerate() {
        let beta = p.users as f64 / spec.bs_antennas as f64;
        for (ai, alg) in spec.algorithms.iter().enumerate() {
            let base = SweepRow {
                sweep_value: p.value,
                algorithm: alg.tag(),
                metric: String::new(),
                value: None,
                trials: spec.trials,
                stderr: None,
                status: RowStatus::Skipped,
            };
            let samples: Option<Vec<(f64, f64)>> = per_trial.iter().map(|t| t[pi][ai]).collect();
            match samples {
                Some(samples) => {
                    let z_err: Vec<f64> = samples.iter().map(|s| s.0).collect();
                    let x_err: Vec<f64> = samples.iter().map(|s| s.1).collect();
                    let (m, se) = mean_and_stderr(&z_err);
                    rows.push(SweepRow {
                        metric: "empirical_sir_db".into(),
                        value: Some(linear_to_db(es / m)),
                        stderr: se.map(|s| db_per_rel * s / m),
                        status: RowStatus::Ok,
                        ..base.clone()
                    });
                    let (m, se) = mean_and_stderr(&x_err);
                    rows.push(SweepRow {
                        metric: "mse".into(),
                        value: Some(m),
                        stderr: se,
                        status: RowStatus::Ok,
                        ..base.clone()
                    });
                }
                None => {
                    for metric in ["empirical_sir_db", "mse"] {
                        rows.push(SweepRow {
                            metric: metric.into(),
                            ..base.clone()
                        });
                    }
                }
            }
            if spec.gain_profile == GainProfile::Uniform {
                let sigma_sq = predicted_sigma_sq(*alg, beta, es, p.n0).filter(|s| *s > 0.0);
                rows.push(SweepRow {
                    metric: "analytic_sir_db".into(),
                    value: sigma_sq.map(|s| linear_to_db(es / s)),
                    trials: 0,
                    status: if sigma_sq.is_some() {
                        RowStatus::Ok
                    } else {
                        RowStatus::Skipped
                    },
                    ..base
                });
            }
        }
    }
    let mut result = SweepResult {
        variable: spec.sweep.variable,
        rows,
    };
    result.sort();
    Ok(result)
}
