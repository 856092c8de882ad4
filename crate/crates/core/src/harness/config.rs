//! Plain-text experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment; blank lines are
//! ignored. Unknown keys, repeated keys and malformed values are errors that
//! carry the line number. Keys ending in `_db` are in decibels, everything
//! else is linear.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `bs_antennas` | B | required for Monte Carlo runs |
//! | `users` | U | required for Monte Carlo runs |
//! | `snr_db_start`, `snr_db_stop`, `snr_db_step` | SNR sweep (Es = 1, N0 = 10^(−snr/10)) | 0, 14, 1 |
//! | `beta_start`, `beta_stop`, `beta_step` | antenna-ratio sweep, U = round(β·B) | |
//! | `users_start`, `users_stop`, `users_step` | user-count sweep | |
//! | `snr_db` | fixed SNR for β and user sweeps | 10 |
//! | `algorithms` | comma list of `mrc`, `zf`, `lmmse`, `lmmse_mismatched:<Es′>`, `mmse_amp`, `nope`, `robust_nope` | required for Monte Carlo runs |
//! | `mismatched_power` | Es′ used by a bare `lmmse_mismatched` entry | |
//! | `constellation` | `qpsk`, `bpsk` or `gaussian` | `qpsk` |
//! | `iters` | AMP iterations T | 20 |
//! | `early_stop` | stop AMP once the iterate settles | `false` |
//! | `trials` | frames per sweep point | required for Monte Carlo runs |
//! | `seed` | master seed | required for Monte Carlo runs |
//! | `gain_profile` | `uniform`, `explicit:<d²>,<d²>,…` (cycled over users) or `log_uniform:<lo>:<hi>` (range of d²) | `uniform` |
//! | `workers` | worker threads, 0 = one per core | 0 |
//! | `output` | output CSV path | |
//! | `delta_snr_db` | SNR loss for the MOAR curve | 1 |
//! | `rate_start`, `rate_stop`, `rate_step` | rate grid for the MOAR curve | 0.1, 5, 0.1 |
//! | `training_symbols` | samples behind the Es′ estimate of the rate curve | 2 |
//! | `percentile` | confidence level of the Es′ estimate | 0.9 |
//!
//! At most one sweep range may be given.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::model::Constellation;
use crate::{Error, Result};

use super::Algorithm;

/// Keys every Monte Carlo experiment must define.
pub const MONTE_CARLO_KEYS: &[&str] = &["bs_antennas", "users", "algorithms", "trials", "seed"];

const KNOWN_KEYS: &[&str] = &[
    "bs_antennas",
    "users",
    "snr_db_start",
    "snr_db_stop",
    "snr_db_step",
    "beta_start",
    "beta_stop",
    "beta_step",
    "users_start",
    "users_stop",
    "users_step",
    "snr_db",
    "algorithms",
    "mismatched_power",
    "constellation",
    "iters",
    "early_stop",
    "trials",
    "seed",
    "gain_profile",
    "workers",
    "output",
    "delta_snr_db",
    "rate_start",
    "rate_stop",
    "rate_step",
    "training_symbols",
    "percentile",
];

/// Swept quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    SnrDb,
    Beta,
    Users,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::Beta => "beta",
            SweepVariable::Users => "users",
        }
    }
}

/// Inclusive arithmetic grid `start, start + step, …, ≤ stop`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(Error::invalid("range bounds must be finite"));
        }
        if start > stop {
            return Err(Error::invalid(format!("range start {start} exceeds stop {stop}")));
        }
        if step <= 0.0 {
            return Err(Error::invalid(format!("range step must be positive, got {step}")));
        }
        Ok(Range { start, stop, step })
    }

    /// Grid values, rounded to 12 decimals so that `0.1 + 14·0.1` prints as
    /// `1.5`.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| {
                let v = self.start + i as f64 * self.step;
                (v * 1e12).round() / 1e12
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sweep {
    pub variable: SweepVariable,
    pub range: Range,
}

/// Per-user power gains `d²` for faded channels.
#[derive(Debug, Clone, PartialEq)]
pub enum GainProfile {
    Uniform,
    /// Power gains, cycled over the users.
    Explicit(Vec<f64>),
    /// Power gains drawn log-uniformly from `[lo, hi]` per user and trial.
    LogUniform { lo: f64, hi: f64 },
}

impl FromStr for GainProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "uniform" {
            return Ok(GainProfile::Uniform);
        }
        if let Some(list) = s.strip_prefix("explicit:") {
            let gains = list
                .split(',')
                .map(|g| parse_num::<f64>(g.trim()))
                .collect::<Result<Vec<_>>>()?;
            if gains.is_empty() || gains.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                return Err(Error::invalid("explicit gains must be positive"));
            }
            return Ok(GainProfile::Explicit(gains));
        }
        if let Some(range) = s.strip_prefix("log_uniform:") {
            let (lo, hi) = range
                .split_once(':')
                .ok_or_else(|| Error::invalid("expected log_uniform:<lo>:<hi>"))?;
            let (lo, hi) = (parse_num::<f64>(lo.trim())?, parse_num::<f64>(hi.trim())?);
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(Error::invalid(format!("bad log-uniform range [{lo}, {hi}]")));
            }
            return Ok(GainProfile::LogUniform { lo, hi });
        }
        Err(Error::invalid(format!("unknown gain profile `{s}`")))
    }
}

impl fmt::Display for GainProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GainProfile::Uniform => f.write_str("uniform"),
            GainProfile::Explicit(g) => {
                let list: Vec<String> = g.iter().map(|v| v.to_string()).collect();
                write!(f, "explicit:{}", list.join(","))
            }
            GainProfile::LogUniform { lo, hi } => write!(f, "log_uniform:{lo}:{hi}"),
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub bs_antennas: usize,
    pub users: usize,
    pub sweep: Sweep,
    /// Operating SNR for β and user sweeps.
    pub snr_db: f64,
    pub algorithms: Vec<Algorithm>,
    pub constellation: Constellation,
    pub iterations: usize,
    pub early_stop: bool,
    pub trials: usize,
    pub seed: u64,
    pub gain_profile: GainProfile,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub delta_snr_db: f64,
    pub rates: Range,
    pub training_symbols: usize,
    pub percentile: f64,
}

impl ExperimentSpec {
    /// Transmit energy per symbol; SNRs are `Es/N0` with `Es` fixed at 1.
    pub const SIGNAL_POWER: f64 = 1.0;

    /// Antenna ratio `U/B` of the base configuration.
    pub fn beta(&self) -> f64 {
        self.users as f64 / self.bs_antennas as f64
    }

    /// Renders the spec in the configuration format; [`SpecBuilder::parse`]
    /// reads it back unchanged.
    pub fn to_config_text(&self) -> String {
        let (prefix, r) = (self.sweep.variable.name(), self.sweep.range);
        let algorithms: Vec<String> = self.algorithms.iter().map(|a| a.tag()).collect();
        let mut lines = vec![
            format!("bs_antennas = {}", self.bs_antennas),
            format!("users = {}", self.users),
            format!("{prefix}_start = {}", r.start),
            format!("{prefix}_stop = {}", r.stop),
            format!("{prefix}_step = {}", r.step),
            format!("snr_db = {}", self.snr_db),
            format!("algorithms = {}", algorithms.join(",")),
            format!("constellation = {}", self.constellation),
            format!("iters = {}", self.iterations),
            format!("early_stop = {}", self.early_stop),
            format!("trials = {}", self.trials),
            format!("seed = {}", self.seed),
            format!("gain_profile = {}", self.gain_profile),
            format!("workers = {}", self.workers),
        ];
        if let Some(out) = &self.output {
            lines.push(format!("output = {}", out.display()));
        }
        lines.extend([
            format!("delta_snr_db = {}", self.delta_snr_db),
            format!("rate_start = {}", self.rates.start),
            format!("rate_stop = {}", self.rates.stop),
            format!("rate_step = {}", self.rates.step),
            format!("training_symbols = {}", self.training_symbols),
            format!("percentile = {}", self.percentile),
        ]);
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }
}

/// Reads and validates a Monte Carlo experiment file.
pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    SpecBuilder::from_file(path)?.build(MONTE_CARLO_KEYS)
}

/// Raw key/value pairs with their line numbers, before defaults are applied.
///
/// Command-line overrides are applied with [`SpecBuilder::set`] before
/// [`SpecBuilder::build`] checks for required keys.
#[derive(Debug, Clone, Default)]
pub struct SpecBuilder {
    entries: BTreeMap<String, (String, Option<usize>)>,
}

fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.parse::<T>()
        .map_err(|_| Error::invalid(format!("cannot parse `{s}` as a number")))
}

impl SpecBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut b = SpecBuilder::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(Some(line_no), format!("expected `key = value`, got `{line}`"))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !KNOWN_KEYS.contains(&key) {
                return Err(Error::config(Some(line_no), format!("unknown key `{key}`")));
            }
            if value.is_empty() {
                return Err(Error::config(Some(line_no), format!("key `{key}` has no value")));
            }
            if let Some((_, Some(prev))) = b.entries.get(key) {
                return Err(Error::config(
                    Some(line_no),
                    format!("key `{key}` already set on line {prev}"),
                ));
            }
            b.entries
                .insert(key.to_string(), (value.to_string(), Some(line_no)));
        }
        Ok(b)
    }

    /// Sets or overrides a key (used for command-line flags).
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::config(None, format!("unknown key `{key}`")));
        }
        self.entries.insert(key.to_string(), (value.to_string(), None));
        Ok(())
    }

    /// Sets `key` only if neither the file nor an override provided it.
    pub fn set_default(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if self.contains(key) {
            return Ok(());
        }
        self.set(key, value)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| {
                Error::config(*line, format!("malformed value `{v}` for key `{key}`"))
            }),
        }
    }

    fn get_with<T>(&self, key: &str, f: impl FnOnce(&str) -> Result<T>) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => f(v)
                .map(Some)
                .map_err(|e| Error::config(*line, format!("key `{key}`: {e}"))),
        }
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).and_then(|(_, l)| *l)
    }

    fn range(&self, prefix: &str) -> Result<Option<Range>> {
        let keys = [
            format!("{prefix}_start"),
            format!("{prefix}_stop"),
            format!("{prefix}_step"),
        ];
        let present: Vec<bool> = keys.iter().map(|k| self.contains(k)).collect();
        if present.iter().all(|p| !p) {
            return Ok(None);
        }
        if let Some(i) = present.iter().position(|p| !p) {
            return Err(Error::config(
                None,
                format!("missing required key `{}` for the {prefix} sweep", keys[i]),
            ));
        }
        let start: f64 = self.get(&keys[0])?.unwrap();
        let stop: f64 = self.get(&keys[1])?.unwrap();
        let step: f64 = self.get(&keys[2])?.unwrap();
        Range::new(start, stop, step)
            .map(Some)
            .map_err(|e| Error::config(self.line_of(&keys[0]), e.to_string()))
    }

    /// Applies defaults and validates. Every key in `required` must be present.
    pub fn build(&self, required: &[&str]) -> Result<ExperimentSpec> {
        if let Some(missing) = required.iter().find(|k| !self.contains(k)) {
            return Err(Error::config(None, format!("missing required key `{missing}`")));
        }

        let bs_antennas: usize = self.get("bs_antennas")?.unwrap_or(100);
        let users: usize = self.get("users")?.unwrap_or(30);
        if bs_antennas == 0 || users == 0 {
            return Err(Error::config(
                self.line_of(if bs_antennas == 0 { "bs_antennas" } else { "users" }),
                "bs_antennas and users must be at least 1",
            ));
        }

        let mut sweeps = Vec::new();
        for (prefix, variable) in [
            ("snr_db", SweepVariable::SnrDb),
            ("beta", SweepVariable::Beta),
            ("users", SweepVariable::Users),
        ] {
            if let Some(range) = self.range(prefix)? {
                sweeps.push(Sweep { variable, range });
            }
        }
        if sweeps.len() > 1 {
            return Err(Error::config(None, "only one sweep range may be given"));
        }
        let sweep = sweeps.pop().unwrap_or(Sweep {
            variable: SweepVariable::SnrDb,
            range: Range::new(0.0, 14.0, 1.0).unwrap(),
        });
        match sweep.variable {
            SweepVariable::Beta if sweep.range.start <= 0.0 => {
                return Err(Error::config(self.line_of("beta_start"), "β must be positive"))
            }
            SweepVariable::Users
                if sweep.range.start < 1.0
                    || sweep.range.step.fract() != 0.0
                    || sweep.range.start.fract() != 0.0 =>
            {
                return Err(Error::config(
                    self.line_of("users_start"),
                    "user sweep needs integer start ≥ 1 and integer step",
                ))
            }
            _ => {}
        }

        let mismatched: Option<f64> = self.get("mismatched_power")?;
        if let Some(es) = mismatched {
            if !(es > 0.0 && es.is_finite()) {
                return Err(Error::config(
                    self.line_of("mismatched_power"),
                    "mismatched_power must be positive",
                ));
            }
        }
        let algorithms = self
            .get_with("algorithms", |v| Algorithm::parse_list(v, mismatched))?
            .unwrap_or_default();

        let constellation = self
            .get_with("constellation", |v| v.parse::<Constellation>())?
            .unwrap_or(Constellation::Qpsk);
        let iterations: usize = self.get("iters")?.unwrap_or(20);
        if iterations == 0 {
            return Err(Error::config(self.line_of("iters"), "iters must be at least 1"));
        }
        let trials: usize = self.get("trials")?.unwrap_or(1);
        if trials == 0 {
            return Err(Error::config(self.line_of("trials"), "trials must be at least 1"));
        }
        let gain_profile = self
            .get_with("gain_profile", |v| v.parse::<GainProfile>())?
            .unwrap_or(GainProfile::Uniform);

        let rates = Range::new(
            self.get("rate_start")?.unwrap_or(0.1),
            self.get("rate_stop")?.unwrap_or(5.0),
            self.get("rate_step")?.unwrap_or(0.1),
        )
        .map_err(|e| Error::config(self.line_of("rate_start"), e.to_string()))?;
        if rates.start <= 0.0 {
            return Err(Error::config(self.line_of("rate_start"), "rates must be positive"));
        }
        let delta_snr_db: f64 = self.get("delta_snr_db")?.unwrap_or(1.0);
        if !(delta_snr_db >= 0.0) {
            return Err(Error::config(
                self.line_of("delta_snr_db"),
                "delta_snr_db must be nonnegative",
            ));
        }
        let training_symbols: usize = self.get("training_symbols")?.unwrap_or(2);
        let percentile: f64 = self.get("percentile")?.unwrap_or(0.9);
        if training_symbols == 0 || !(percentile > 0.5 && percentile < 1.0) {
            return Err(Error::config(
                None,
                "training_symbols must be ≥ 1 and percentile in (0.5, 1)",
            ));
        }

        Ok(ExperimentSpec {
            bs_antennas,
            users,
            sweep,
            snr_db: self.get("snr_db")?.unwrap_or(10.0),
            algorithms,
            constellation,
            iterations,
            early_stop: self.get("early_stop")?.unwrap_or(false),
            trials,
            seed: self.get("seed")?.unwrap_or(0),
            gain_profile,
            workers: self.get("workers")?.unwrap_or(0),
            output: self.get::<PathBuf>("output")?,
            delta_snr_db,
            rates,
            training_symbols,
            percentile,
        })
    }
}
