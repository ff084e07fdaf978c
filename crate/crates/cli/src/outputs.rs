//! Files written by a run and the readers that load them back.

use std::fs;
use std::path::Path;

use mgvi::{LatentVector, Layout};
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{CliError, Result};

pub const REPORT_FILE: &str = "report.toml";
pub const TIMING_FILE: &str = "timing.toml";
pub const TRACE_FILE: &str = "trace.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const FIELD_FILE: &str = "field.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const COMPARE_FILE: &str = "compare.csv";

/// Deterministic summary of a run. Wall time lives in the timing file so
/// that reports of identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub problem: String,
    pub preset: String,
    pub method: Method,
    pub seed: u64,
    pub dim: usize,
    pub n_samples: usize,
    pub signal: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_significance: Option<f64>,
    pub predictive_log_likelihood_samples: f64,
    pub predictive_log_likelihood_mean: f64,
    /// `‖mean‖ / √dim` in latent coordinates.
    pub mean_norm: f64,
    /// Relative L2 distance to the closed-form posterior mean, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rel_err: Option<f64>,
    pub converged: bool,
    pub global_iterations: usize,
    pub steps: usize,
    pub failed_line_searches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Timing {
    pub wall_time_s: f64,
}

/// One row of the convergence trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub method: String,
    pub step: usize,
    pub wall_time_s: f64,
    /// KL estimate (MGVI), Hamiltonian (MAP, Laplace) or negative ELBO (mean-field).
    pub objective: f64,
    pub rms: Option<f64>,
    pub avg_significance: Option<f64>,
    pub pred_ll_samples: f64,
    pub pred_ll_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRow {
    pub index: usize,
    pub truth: Option<f64>,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SampleTable {
    pub fn from_samples(layout: &Layout, samples: &[LatentVector]) -> Self {
        let columns = layout
            .blocks()
            .iter()
            .flat_map(|b| (0..b.size()).map(move |i| format!("{}_{i}", b.name)))
            .collect();
        let rows = samples.iter().map(|s| s.as_slice().to_vec()).collect();
        SampleTable { columns, rows }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| CliError::format(path, e))?;
    write_text(path, &text)
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    toml::from_str(&read_text(path)?).map_err(|e| CliError::format(path, e))
}

pub fn write_report(path: &Path, report: &RunReport) -> Result<()> {
    write_toml(path, report)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    read_toml(path)
}

pub fn write_timing(path: &Path, timing: &Timing) -> Result<()> {
    write_toml(path, timing)
}

pub fn read_timing(path: &Path) -> Result<Timing> {
    read_toml(path)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::format(path, e))?;
    w.write_record(header).map_err(|e| CliError::format(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::format(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CliError::format(path, format!("row {}: {e}", i + 2))))
        .collect()
}

pub const TRACE_COLUMNS: [&str; 8] = [
    "method",
    "step",
    "wall_time_s",
    "objective",
    "rms",
    "avg_significance",
    "pred_ll_samples",
    "pred_ll_mean",
];

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_rows(path, rows, &TRACE_COLUMNS)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    read_rows(path)
}

pub fn write_field(path: &Path, rows: &[FieldRow]) -> Result<()> {
    write_rows(path, rows, &["index", "truth", "mean", "std"])
}

pub fn read_field(path: &Path) -> Result<Vec<FieldRow>> {
    read_rows(path)
}

pub fn write_samples(path: &Path, table: &SampleTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format(path, e))?;
    let header = std::iter::once("sample".to_string()).chain(table.columns.iter().cloned());
    w.write_record(header).map_err(|e| CliError::format(path, e))?;
    for (k, row) in table.rows.iter().enumerate() {
        let fields = std::iter::once(k.to_string()).chain(row.iter().map(|v| v.to_string()));
        w.write_record(fields).map_err(|e| CliError::format(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<SampleTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    let header = r.headers().map_err(|e| CliError::format(path, e))?.clone();
    if header.get(0) != Some("sample") {
        return Err(CliError::format(path, "first column must be `sample`"));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::format(path, format!("row {line}: {e}")))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::format(path, format!("row {line}: {e}")))?;
        rows.push(row);
    }
    Ok(SampleTable { columns, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> RunReport {
        RunReport {
            problem: "poisson_lognormal_1d".into(),
            preset: "poisson_lognormal".into(),
            method: Method::Mgvi,
            seed: 7,
            dim: 256,
            n_samples: 24,
            signal: "log_rate".into(),
            rms: Some(0.123456789012345),
            avg_significance: None,
            predictive_log_likelihood_samples: -31.25,
            predictive_log_likelihood_mean: -30.0 - 1e-17,
            mean_norm: 0.7,
            mean_rel_err: Some(3.2e-9),
            converged: false,
            global_iterations: 35,
            steps: 300,
            failed_line_searches: 1,
        }
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(REPORT_FILE);
        write_report(&p, &report()).unwrap();
        assert_eq!(read_report(&p).unwrap(), report());
        let text = fs::read_to_string(&p).unwrap();
        assert!(!text.contains("avg_significance"));
        assert!(!text.contains("wall_time"));
    }

    #[test]
    fn timing_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TIMING_FILE);
        let t = Timing { wall_time_s: 1.0 / 3.0 };
        write_timing(&p, &t).unwrap();
        assert_eq!(read_timing(&p).unwrap(), t);
    }

    #[test]
    fn trace_round_trips_with_missing_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TRACE_FILE);
        let rows = vec![
            TraceRow {
                method: "mgvi".into(),
                step: 0,
                wall_time_s: 0.001,
                objective: 12.5,
                rms: Some(0.3),
                avg_significance: Some(1.1),
                pred_ll_samples: -4.0,
                pred_ll_mean: -4.5,
            },
            TraceRow {
                method: "mgvi".into(),
                step: 1,
                wall_time_s: 0.002,
                objective: f64::MIN_POSITIVE,
                rms: None,
                avg_significance: None,
                pred_ll_samples: -3.0,
                pred_ll_mean: -1e300,
            },
        ];
        write_trace(&p, &rows).unwrap();
        assert_eq!(read_trace(&p).unwrap(), rows);
        let header = fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
        assert_eq!(header, TRACE_COLUMNS.join(","));
    }

    #[test]
    fn empty_trace_keeps_its_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TRACE_FILE);
        write_trace(&p, &[]).unwrap();
        assert!(read_trace(&p).unwrap().is_empty());
    }

    #[test]
    fn field_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(FIELD_FILE);
        let rows = vec![
            FieldRow {
                index: 0,
                truth: Some(-0.25),
                mean: 0.1,
                std: 0.9,
            },
            FieldRow {
                index: 1,
                truth: None,
                mean: 2.0,
                std: 0.0,
            },
        ];
        write_field(&p, &rows).unwrap();
        assert_eq!(read_field(&p).unwrap(), rows);
    }

    #[test]
    fn samples_round_trip_bit_exactly() {
        let layout = Layout::new([("a", vec![2]), ("b", vec![1, 2])]).unwrap();
        let samples: Vec<LatentVector> = (0..3)
            .map(|k| {
                let v = (0..4).map(|i| (k * 4 + i) as f64 / 7.0 - 0.3).collect();
                LatentVector::from_values(&layout, v).unwrap()
            })
            .collect();
        let table = SampleTable::from_samples(&layout, &samples);
        assert_eq!(table.columns, ["a_0", "a_1", "b_0", "b_1"]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SAMPLES_FILE);
        write_samples(&p, &table).unwrap();
        let back = read_samples(&p).unwrap();
        assert_eq!(back, table);
        for (row, s) in back.rows.iter().zip(&samples) {
            let bits: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u64> = s.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, orig);
        }
    }

    #[test]
    fn malformed_samples_report_their_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(SAMPLES_FILE);
        fs::write(&p, "sample,x_0\n0,1.5\n1,abc\n").unwrap();
        let err = read_samples(&p).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
    }
}
