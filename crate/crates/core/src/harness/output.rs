//! CSV and manifest writers.
//!
//! Every CSV starts with a header row. Floats are written with 17
//! significant digits so that parsing them back gives the same `f64`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::{RowStatus, SweepResult};

/// Round-trip exact float formatting (`1.0000000000000000e0`).
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Ok => "ok",
            RowStatus::LowConfidence => "low_confidence",
            RowStatus::Skipped => "skipped",
        }
    }
}

/// Long-format rows:
/// `sweep_value,algorithm,metric,value,trials,stderr,status`.
pub fn write_rows<W: Write>(result: &SweepResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "sweep_value,algorithm,metric,value,trials,stderr,status")?;
    for row in &result.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_float(row.sweep_value),
            row.algorithm,
            row.metric,
            fmt_opt(row.value),
            row.trials,
            fmt_opt(row.stderr),
            row.status.as_str()
        )?;
    }
    Ok(())
}

/// Table with one row per sweep value and one column per entry of
/// `columns`; missing values become empty cells.
pub fn write_table<W: Write>(
    header: &[String],
    rows: &[Vec<Option<f64>>],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt_opt(*v)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Path of the manifest written next to `output`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

/// Creates `path` (and its parent directory) and hands a buffered writer to
/// `body`. I/O failures name the path.
pub fn write_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{SweepRow, SweepVariable};

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 0.31819, 1e-300, -2.5e17, f64::MIN_POSITIVE] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn rows_csv_layout() {
        let result = SweepResult {
            variable: SweepVariable::SnrDb,
            rows: vec![
                SweepRow {
                    sweep_value: 10.0,
                    algorithm: "zf".into(),
                    metric: "ser".into(),
                    value: None,
                    trials: 3,
                    stderr: None,
                    status: RowStatus::Skipped,
                },
                SweepRow {
                    sweep_value: 10.0,
                    algorithm: "lmmse".into(),
                    metric: "ser".into(),
                    value: Some(0.5),
                    trials: 3,
                    stderr: Some(0.25),
                    status: RowStatus::LowConfidence,
                },
            ],
        };
        let mut buf = Vec::new();
        write_rows(&result, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sweep_value,algorithm,metric,value,trials,stderr,status");
        assert_eq!(lines[1], "1.0000000000000000e1,zf,ser,,3,,skipped");
        assert_eq!(
            lines[2],
            "1.0000000000000000e1,lmmse,ser,5.0000000000000000e-1,3,2.5000000000000000e-1,low_confidence"
        );
    }

    #[test]
    fn unwritable_path_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let target = blocker.join("out.csv");
        let err = write_file(&target, |w| w.write_all(b"a")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("out.csv") || err.to_string().contains("file"));
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(
            manifest_path(Path::new("out/ser.csv")),
            PathBuf::from("out/ser.csv.manifest")
        );
    }
}
