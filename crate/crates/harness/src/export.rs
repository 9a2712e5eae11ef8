//! Result records and their CSV/JSON round trip.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::HyperPoint;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(format!("unknown format {other:?}, expected csv or json")),
        }
    }
}

/// One trained-and-evaluated network: provenance, hyperparameters and the
/// metric summaries it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub sigma_in: Option<f64>,
    pub rho: Option<f64>,
    pub density: Option<f64>,
    pub eps: f64,
    pub beta: f64,
    /// Prediction-time offset for event-score rows.
    pub pt_lt: Option<f64>,
    pub vpt_median: Option<f64>,
    pub vpt_mean: Option<f64>,
    pub vpt_std: Option<f64>,
    pub ph_median: Option<f64>,
    pub ph_mean: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fscore: Option<f64>,
    pub mc: Option<f64>,
    pub wall_time_s: f64,
}

impl RunRecord {
    pub fn new(config_hash: &str, seed: u64, hyper: &HyperPoint) -> Self {
        RunRecord {
            config_hash: config_hash.to_string(),
            seed,
            sigma_in: hyper.sigma_in,
            rho: hyper.rho,
            density: hyper.density,
            eps: hyper.eps,
            beta: hyper.beta,
            pt_lt: None,
            vpt_median: None,
            vpt_mean: None,
            vpt_std: None,
            ph_median: None,
            ph_mean: None,
            precision: None,
            recall: None,
            fscore: None,
            mc: None,
            wall_time_s: 0.0,
        }
    }
}

const COLUMNS: [&str; 18] = [
    "config_hash",
    "seed",
    "sigma_in",
    "rho",
    "density",
    "eps",
    "beta",
    "pt_lt",
    "vpt_median",
    "vpt_mean",
    "vpt_std",
    "ph_median",
    "ph_mean",
    "precision",
    "recall",
    "fscore",
    "mc",
    "wall_time_s",
];

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Stable-column CSV with 17 significant digits (round-trips f64 exactly).
pub fn records_to_csv(records: &[RunRecord]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let fields = [
            r.config_hash.clone(),
            r.seed.to_string(),
            fmt_opt(r.sigma_in),
            fmt_opt(r.rho),
            fmt_opt(r.density),
            fmt(r.eps),
            fmt(r.beta),
            fmt_opt(r.pt_lt),
            fmt_opt(r.vpt_median),
            fmt_opt(r.vpt_mean),
            fmt_opt(r.vpt_std),
            fmt_opt(r.ph_median),
            fmt_opt(r.ph_mean),
            fmt_opt(r.precision),
            fmt_opt(r.recall),
            fmt_opt(r.fscore),
            fmt_opt(r.mc),
            fmt(r.wall_time_s),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn parse_f64(field: &str, name: &str, line: usize) -> Result<f64, HarnessError> {
    field.parse().map_err(|e| {
        HarnessError::Format(format!("line {line}: bad {name} value {field:?}: {e}"))
    })
}

fn parse_opt(field: &str, name: &str, line: usize) -> Result<Option<f64>, HarnessError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name, line).map(Some)
    }
}

pub fn records_from_csv(text: &str) -> Result<Vec<RunRecord>, HarnessError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| HarnessError::Format("empty records file".into()))?;
    if header != COLUMNS.join(",") {
        return Err(HarnessError::Format(format!(
            "unexpected header {header:?}"
        )));
    }
    let mut records = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(HarnessError::Format(format!(
                "line {ln}: expected {} fields, got {}",
                COLUMNS.len(),
                fields.len()
            )));
        }
        records.push(RunRecord {
            config_hash: fields[0].to_string(),
            seed: fields[1]
                .parse()
                .map_err(|e| HarnessError::Format(format!("line {ln}: bad seed: {e}")))?,
            sigma_in: parse_opt(fields[2], "sigma_in", ln)?,
            rho: parse_opt(fields[3], "rho", ln)?,
            density: parse_opt(fields[4], "density", ln)?,
            eps: parse_f64(fields[5], "eps", ln)?,
            beta: parse_f64(fields[6], "beta", ln)?,
            pt_lt: parse_opt(fields[7], "pt_lt", ln)?,
            vpt_median: parse_opt(fields[8], "vpt_median", ln)?,
            vpt_mean: parse_opt(fields[9], "vpt_mean", ln)?,
            vpt_std: parse_opt(fields[10], "vpt_std", ln)?,
            ph_median: parse_opt(fields[11], "ph_median", ln)?,
            ph_mean: parse_opt(fields[12], "ph_mean", ln)?,
            precision: parse_opt(fields[13], "precision", ln)?,
            recall: parse_opt(fields[14], "recall", ln)?,
            fscore: parse_opt(fields[15], "fscore", ln)?,
            mc: parse_opt(fields[16], "mc", ln)?,
            wall_time_s: parse_f64(fields[17], "wall_time_s", ln)?,
        });
    }
    Ok(records)
}

/// Writes records in the chosen format; CSV columns are stable, JSON is a
/// pretty-printed array.
pub fn write_records(
    records: &[RunRecord],
    path: &Path,
    format: ExportFormat,
) -> Result<(), HarnessError> {
    let text = match format {
        ExportFormat::Csv => records_to_csv(records),
        ExportFormat::Json => serde_json::to_string_pretty(records)
            .map_err(|e| HarnessError::Format(e.to_string()))?,
    };
    std::fs::write(path, text).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_records(path: &Path, format: ExportFormat) -> Result<Vec<RunRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    match format {
        ExportFormat::Csv => records_from_csv(&text),
        ExportFormat::Json => {
            serde_json::from_str(&text).map_err(|e| HarnessError::Format(e.to_string()))
        }
    }
}

/// Per-event horizon list (`event,ph_lt`), one row per scanned event.
pub fn ph_samples_to_csv(samples: &[f64]) -> String {
    let mut out = String::from("event,ph_lt\n");
    for (i, v) in samples.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", fmt(*v)));
    }
    out
}

/// Pooled per-(PT, reservoir size) score table.
pub fn score_table_to_csv(
    rows: &[(f64, usize, qrc_core::metrics::EventScores<f64>)],
) -> String {
    let mut out = String::from("pt_lt,reservoir_size,tp,fp,fn,tn,precision,recall,fscore\n");
    for (pt, size, s) in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt(*pt),
            size,
            s.true_positives,
            s.false_positives,
            s.false_negatives,
            s.true_negatives,
            fmt(s.precision),
            fmt(s.recall),
            fmt(s.fscore),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_records() -> Vec<RunRecord> {
        let hyper = HyperPoint {
            sigma_in: Some(0.30000000000000004),
            rho: Some(0.9),
            density: None,
            eps: 0.1,
            beta: 1e-9,
        };
        let mut a = RunRecord::new("abcd1234", 3, &hyper);
        a.vpt_median = Some(4.123456789012345e-1);
        a.wall_time_s = 1.5;
        let mut b = RunRecord::new("abcd1234", 4, &hyper);
        b.fscore = Some(0.75);
        b.pt_lt = Some(3.0);
        vec![a, b]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let records = sample_records();
        let csv = records_to_csv(&records);
        let back = records_from_csv(&csv).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn seventeen_digit_floats_survive() {
        let tricky = [
            0.1f64,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
            1.7976931348623157e308,
            -2.2250738585072014e-308,
        ];
        for v in tricky {
            let s = fmt(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v} -> {s}");
        }
    }

    #[test]
    fn empty_record_list_is_header_only() {
        let csv = records_to_csv(&[]);
        assert_eq!(csv.lines().count(), 1);
        assert!(records_from_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn json_round_trip() {
        let records = sample_records();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.json");
        write_records(&records, &path, ExportFormat::Json).unwrap();
        let back = read_records(&path, ExportFormat::Json).unwrap();
        assert_eq!(back, records);
    }
}
