//! Experiment orchestration: configuration, seeded Monte Carlo sweeps,
//! analytic curve generation and CSV output.

pub mod config;
pub mod figures;
pub mod output;
pub mod sweep;

use std::fmt;

use crate::linear_eq::EqualizerKind;
use crate::{Error, Result};

pub use config::{load_spec, ExperimentSpec, GainProfile, Range, SpecBuilder, Sweep, SweepVariable};
pub use figures::{emit_figure_data, emit_se_check, Figure};
pub use sweep::{run_se_comparison, run_ser_sweep};

/// Detector evaluated by the sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Algorithm {
    Mrc,
    Zf,
    Lmmse,
    /// L-MMSE built with the given assumed signal power.
    LmmseMismatched(f64),
    MmseAmp,
    Nope,
    RobustNope,
}

impl Algorithm {
    /// Name used in CSV rows and column headers.
    pub fn tag(self) -> String {
        match self {
            Algorithm::Mrc => "mrc".into(),
            Algorithm::Zf => "zf".into(),
            Algorithm::Lmmse => "lmmse".into(),
            Algorithm::LmmseMismatched(es) => format!("lmmse_mismatched:{es}"),
            Algorithm::MmseAmp => "mmse_amp".into(),
            Algorithm::Nope => "nope".into(),
            Algorithm::RobustNope => "robust_nope".into(),
        }
    }

    /// The linear equalizer behind this algorithm, if it is one.
    pub fn equalizer(self) -> Option<EqualizerKind> {
        match self {
            Algorithm::Mrc => Some(EqualizerKind::Mrc),
            Algorithm::Zf => Some(EqualizerKind::Zf),
            Algorithm::Lmmse => Some(EqualizerKind::Lmmse),
            Algorithm::LmmseMismatched(es) => Some(EqualizerKind::LmmseMismatched(es)),
            _ => None,
        }
    }

    /// Parses a single tag. A bare `lmmse_mismatched` takes `default_power`.
    pub fn parse(s: &str, default_power: Option<f64>) -> Result<Self> {
        let s = s.trim();
        let alg = match s {
            "mrc" => Algorithm::Mrc,
            "zf" => Algorithm::Zf,
            "lmmse" => Algorithm::Lmmse,
            "mmse_amp" => Algorithm::MmseAmp,
            "nope" => Algorithm::Nope,
            "robust_nope" => Algorithm::RobustNope,
            "lmmse_mismatched" => Algorithm::LmmseMismatched(default_power.ok_or_else(|| {
                Error::invalid("lmmse_mismatched needs `:<power>` or mismatched_power")
            })?),
            other => match other.strip_prefix("lmmse_mismatched:") {
                Some(p) => Algorithm::LmmseMismatched(
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid(format!("bad assumed power `{p}`")))?,
                ),
                None => return Err(Error::invalid(format!("unknown algorithm `{other}`"))),
            },
        };
        if let Algorithm::LmmseMismatched(es) = alg {
            if !(es > 0.0 && es.is_finite()) {
                return Err(Error::invalid(format!(
                    "assumed signal power must be positive, got {es}"
                )));
            }
        }
        Ok(alg)
    }

    /// Parses a comma-separated list; duplicates and empty lists are rejected.
    pub fn parse_list(s: &str, default_power: Option<f64>) -> Result<Vec<Self>> {
        let mut out: Vec<Algorithm> = Vec::new();
        for part in s.split(',') {
            let alg = Algorithm::parse(part, default_power)?;
            if out.contains(&alg) {
                return Err(Error::invalid(format!("algorithm `{}` listed twice", alg.tag())));
            }
            out.push(alg);
        }
        Ok(out)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowStatus {
    Ok,
    /// Fewer than 100 events were observed; the error bar is unreliable.
    LowConfidence,
    /// The algorithm cannot run at this point (e.g. ZF with more users than
    /// antennas).
    Skipped,
}

/// One measured quantity.
///
/// Metrics: `ser`, `ser_diff_vs_lmmse` (paired difference), `empirical_sir_db`,
/// `analytic_sir_db`, `mse`, `rate_bits`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub sweep_value: f64,
    pub algorithm: String,
    pub metric: String,
    pub value: Option<f64>,
    pub trials: usize,
    pub stderr: Option<f64>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Sorts rows by sweep value, then algorithm tag, then metric.
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.sweep_value
                .total_cmp(&b.sweep_value)
                .then_with(|| a.algorithm.cmp(&b.algorithm))
                .then_with(|| a.metric.cmp(&b.metric))
        });
    }

    /// First row matching all three keys.
    pub fn find(&self, sweep_value: f64, algorithm: &str, metric: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| {
            r.sweep_value == sweep_value && r.algorithm == algorithm && r.metric == metric
        })
    }

    /// Value of the matching row, when present and not skipped.
    pub fn value(&self, sweep_value: f64, algorithm: &str, metric: &str) -> Option<f64> {
        self.find(sweep_value, algorithm, metric).and_then(|r| r.value)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        output::write_rows(self, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}
