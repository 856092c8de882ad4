//! Plot-ready CSV data.
//!
//! * `moar`: `rate_bits,beta_max_mrc,beta_max_zf,beta_max_lmmse` over the
//!   rate grid, for the SNR loss `delta_snr_db`.
//! * `rates`: `snr_db,rate_mrc,rate_zf,rate_lmmse,rate_awgn,
//!   rate_mismatched_over,rate_mismatched_under` at `β = users/bs_antennas`.
//!   The mismatched columns use L-MMSE with `Es′` set to the upper and lower
//!   `percentile` quantiles of a `training_symbols`-sample power estimate.
//! * `ser`: `<sweep variable>,ser_<algorithm>...,ser_awgn_bound` from a Monte
//!   Carlo sweep, plus the long-format rows in `<stem>.rows.csv`.
//!
//! Cells without a value (infeasible equalizer, skipped algorithm) are empty.
//! Every output gets a `<output>.manifest` file with the resolved parameters.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::analysis::{self, MoarQuery};
use crate::linear_eq::EqualizerKind;
use crate::{db_to_linear, Error, Result};

use super::output::{manifest_path, write_file, write_rows, write_table};
use super::{run_se_comparison, run_ser_sweep, ExperimentSpec, SweepResult, SweepVariable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    Moar,
    Rates,
    Ser,
}

impl Figure {
    pub fn name(self) -> &'static str {
        match self {
            Figure::Moar => "moar",
            Figure::Rates => "rates",
            Figure::Ser => "ser",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moar" => Ok(Figure::Moar),
            "rates" => Ok(Figure::Rates),
            "ser" => Ok(Figure::Ser),
            other => Err(Error::invalid(format!("unknown figure `{other}`"))),
        }
    }
}

/// Column headers and rows of a wide table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    /// Index of the named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Maximum antenna ratio per equalizer over the rate grid.
pub fn moar_table(spec: &ExperimentSpec) -> Result<Table> {
    let delta_snr = db_to_linear(spec.delta_snr_db);
    let kinds = [EqualizerKind::Mrc, EqualizerKind::Zf, EqualizerKind::Lmmse];
    let rows = spec
        .rates
        .values()
        .into_iter()
        .map(|rate| {
            let mut row = vec![Some(rate)];
            for equalizer in kinds {
                row.push(Some(analysis::moar(MoarQuery {
                    equalizer,
                    delta_snr,
                    rate,
                })?));
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: header(&["rate_bits", "beta_max_mrc", "beta_max_zf", "beta_max_lmmse"]),
        rows,
    })
}

/// Achievable per-user rates over the SNR grid.
pub fn rates_table(spec: &ExperimentSpec) -> Result<Table> {
    if spec.sweep.variable != SweepVariable::SnrDb {
        return Err(Error::invalid("the rate curves need an snr_db sweep"));
    }
    let es = ExperimentSpec::SIGNAL_POWER;
    let beta = spec.beta();
    let (under, over) = analysis::training_power_quantiles(spec.training_symbols, spec.percentile)?;
    let rate = |kind: EqualizerKind, n0: f64| -> Result<Option<f64>> {
        match analysis::generic_fixed_point(kind, beta, es, n0) {
            Ok(s) => Ok(Some(analysis::achievable_rate(es, s)?)),
            Err(Error::NoFixedPoint(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let rows = spec
        .sweep
        .range
        .values()
        .into_iter()
        .map(|snr_db| {
            let n0 = es / db_to_linear(snr_db);
            Ok(vec![
                Some(snr_db),
                rate(EqualizerKind::Mrc, n0)?,
                rate(EqualizerKind::Zf, n0)?,
                rate(EqualizerKind::Lmmse, n0)?,
                Some(analysis::awgn_rate(es, n0)?),
                rate(EqualizerKind::LmmseMismatched(over * es), n0)?,
                rate(EqualizerKind::LmmseMismatched(under * es), n0)?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Table {
        header: header(&[
            "snr_db",
            "rate_mrc",
            "rate_zf",
            "rate_lmmse",
            "rate_awgn",
            "rate_mismatched_over",
            "rate_mismatched_under",
        ]),
        rows,
    })
}

/// Wide SER table built from sweep rows.
pub fn ser_table(spec: &ExperimentSpec, result: &SweepResult) -> Table {
    let mut header = vec![spec.sweep.variable.name().to_string()];
    let mut tags: Vec<String> = spec.algorithms.iter().map(|a| a.tag()).collect();
    tags.push("awgn_bound".into());
    header.extend(tags.iter().map(|t| format!("ser_{t}")));
    let rows = spec
        .sweep
        .range
        .values()
        .into_iter()
        .map(|v| {
            let mut row = vec![Some(v)];
            row.extend(tags.iter().map(|t| result.value(v, t, "ser")));
            row
        })
        .collect();
    Table { header, rows }
}

fn write_manifest(output: &Path, command: &str, spec: &ExperimentSpec) -> Result<()> {
    let text = format!(
        "# resolved parameters; feed back with --config to reproduce\n# command: {command}\n{}",
        spec.to_config_text()
    );
    write_file(&manifest_path(output), |w| w.write_all(text.as_bytes()))
}

fn write_table_file(path: &Path, table: &Table) -> Result<()> {
    write_file(path, |w| write_table(&table.header, &table.rows, w))
}

/// Path of the long-format rows written next to a wide SER table.
pub fn rows_path(output: &Path) -> PathBuf {
    output.with_extension("rows.csv")
}

/// Computes `figure` and writes it to `output`, with a manifest alongside.
pub fn emit_figure_data(figure: Figure, spec: &ExperimentSpec, output: &Path) -> Result<()> {
    match figure {
        Figure::Moar => write_table_file(output, &moar_table(spec)?)?,
        Figure::Rates => write_table_file(output, &rates_table(spec)?)?,
        Figure::Ser => {
            let result = run_ser_sweep(spec)?;
            write_table_file(output, &ser_table(spec, &result))?;
            write_file(&rows_path(output), |w| write_rows(&result, w))?;
        }
    }
    write_manifest(output, figure.name(), spec)
}

/// Runs the empirical-versus-predicted SIR comparison and writes its rows.
pub fn emit_se_check(spec: &ExperimentSpec, output: &Path) -> Result<()> {
    let result = run_se_comparison(spec)?;
    write_file(output, |w| write_rows(&result, w))?;
    write_manifest(output, "se-check", spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::SpecBuilder;

    fn spec(text: &str) -> ExperimentSpec {
        SpecBuilder::parse(text).unwrap().build(&[]).unwrap()
    }

    #[test]
    fn moar_grid_and_lmmse_value() {
        let t = moar_table(&spec("")).unwrap();
        assert_eq!(t.rows.len(), 50);
        let row = &t.rows[14];
        assert_eq!(row[0], Some(1.5));
        assert!((row[3].unwrap() - 0.31819).abs() < 1e-4);
        // every row: ZF column is rate independent
        assert!(t.rows.iter().all(|r| r[2] == t.rows[0][2]));
    }

    #[test]
    fn rates_dominance() {
        let s = spec(
            "bs_antennas = 100\nusers = 30\nsnr_db_start = -10\nsnr_db_stop = 25\nsnr_db_step = 1\n",
        );
        let t = rates_table(&s).unwrap();
        assert_eq!(t.rows.len(), 36);
        for r in &t.rows {
            let (mrc, zf, lmmse, awgn) = (r[1].unwrap(), r[2].unwrap(), r[3].unwrap(), r[4].unwrap());
            assert!(lmmse >= zf && zf >= 0.0);
            assert!(lmmse >= mrc);
            assert!(awgn >= lmmse);
            assert!(lmmse >= r[5].unwrap() && lmmse >= r[6].unwrap());
        }
    }

    #[test]
    fn zf_column_empty_when_overloaded() {
        let s = spec("bs_antennas = 10\nusers = 12\nsnr_db_start = 0\nsnr_db_stop = 0\nsnr_db_step = 1\n");
        let t = rates_table(&s).unwrap();
        assert_eq!(t.rows[0][2], None);
        assert!(t.rows[0][3].is_some());
    }

    #[test]
    fn ser_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("fig").join("ser.csv");
        let s = spec(
            "bs_antennas = 8\nusers = 4\nsnr_db_start = 0\nsnr_db_stop = 2\nsnr_db_step = 2\n\
             algorithms = zf, lmmse, nope\ntrials = 3\nseed = 1\n",
        );
        emit_figure_data(Figure::Ser, &s, &out).unwrap();
        let wide = std::fs::read_to_string(&out).unwrap();
        assert_eq!(
            wide.lines().next().unwrap(),
            "snr_db,ser_zf,ser_lmmse,ser_nope,ser_awgn_bound"
        );
        assert_eq!(wide.lines().count(), 3);
        assert!(rows_path(&out).exists());
        let manifest = std::fs::read_to_string(manifest_path(&out)).unwrap();
        let again = SpecBuilder::parse(&manifest).unwrap().build(&[]).unwrap();
        assert_eq!(again, s);
    }
}
