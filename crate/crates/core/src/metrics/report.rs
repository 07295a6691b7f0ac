//! Per-image and aggregate metric records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const PSNR: &str = "psnr";
pub const SSIM: &str = "ssim";
pub const MS_SSIM: &str = "ms_ssim";
pub const NIQE: &str = "niqe";
pub const FRECHET: &str = "frechet_feature_distance";

/// Table columns in display order: statistical, semantic, perceptual. The
/// semantic columns are reserved for an external embedding provider.
pub const TABLE_COLUMNS: [(&str, &str); 7] = [
    ("PSNR", PSNR),
    ("SSIM", SSIM),
    ("MS-SSIM", MS_SSIM),
    ("FED", "fed"),
    ("LLE", "lle"),
    ("FFD", FRECHET),
    ("NIQE", NIQE),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub per_image: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, Aggregate>,
}

/// Non-finite values are written as the strings "inf", "-inf" and "nan".
fn encode(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn decode(v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| Error::Metric(format!("bad number {n}"))),
        Value::String(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            _ => Err(Error::Metric(format!("bad metric value {s:?}"))),
        },
        _ => Err(Error::Metric(format!("bad metric value {v}"))),
    }
}

/// Mean and population standard deviation. Infinite values propagate.
pub fn mean_std(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if !mean.is_finite() {
        return Aggregate { mean, std: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Aggregate { mean, std: var.sqrt() }
}

impl MetricReport {
    pub fn insert(&mut self, id: &str, metric: &str, value: f64) {
        self.per_image.entry(id.to_string()).or_default().insert(metric.to_string(), value);
    }

    /// Recompute aggregates for every per-image metric, keeping set-level entries.
    pub fn finalize(&mut self) {
        let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for metrics in self.per_image.values() {
            for (k, v) in metrics {
                columns.entry(k).or_default().push(*v);
            }
        }
        for (k, vals) in columns {
            self.aggregate.insert(k.to_string(), mean_std(&vals));
        }
    }

    pub fn set_level(&mut self, metric: &str, value: f64) {
        self.aggregate.insert(metric.to_string(), Aggregate { mean: value, std: 0.0 });
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|a| a.mean)
    }

    /// One JSON object per line: per-image records, then aggregates.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, metrics) in &self.per_image {
            let m: serde_json::Map<String, Value> = metrics.iter().map(|(k, v)| (k.clone(), encode(*v))).collect();
            out.push_str(&json!({"id": id, "metrics": m}).to_string());
            out.push('\n');
        }
        for (k, a) in &self.aggregate {
            out.push_str(&json!({"aggregate": k, "mean": encode(a.mean), "std": encode(a.std)}).to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let mut r = MetricReport::default();
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line).map_err(|e| Error::Metric(format!("bad report line: {e}")))?;
            if let Some(id) = v.get("id").and_then(Value::as_str) {
                let metrics = v
                    .get("metrics")
                    .and_then(Value::as_object)
                    .ok_or_else(|| Error::Metric("report record without metrics".into()))?;
                for (k, val) in metrics {
                    r.insert(id, k, decode(val)?);
                }
            } else if let Some(k) = v.get("aggregate").and_then(Value::as_str) {
                let get = |f: &str| v.get(f).ok_or_else(|| Error::Metric(format!("aggregate {k} lacks {f}")));
                r.aggregate.insert(
                    k.to_string(),
                    Aggregate {
                        mean: decode(get("mean")?)?,
                        std: decode(get("std")?)?,
                    },
                );
            } else {
                return Err(Error::Metric(format!("unrecognized report line: {line}")));
            }
        }
        Ok(r)
    }
}

fn cell(v: Option<f64>) -> String {
    match v {
        None => "n/a".to_string(),
        Some(v) if v.is_infinite() && v > 0.0 => "inf".to_string(),
        Some(v) => format!("{v:.4}"),
    }
}

/// Aligned table with one row per labelled report.
pub fn render_table(rows: &[(&str, &MetricReport)]) -> String {
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("".to_string())
        .chain(TABLE_COLUMNS.iter().map(|(h, _)| h.to_string()))
        .collect()];
    for (label, report) in rows {
        grid.push(
            std::iter::once(label.to_string())
                .chain(TABLE_COLUMNS.iter().map(|(_, key)| cell(report.mean(key))))
                .collect(),
        );
    }
    align(&grid)
}

/// Aligned table with one column per labelled report and one row per metric.
pub fn render_columns(columns: &[(&str, &MetricReport)], metrics: &[(&str, &str)]) -> String {
    let mut grid: Vec<Vec<String>> = vec![std::iter::once("".to_string())
        .chain(columns.iter().map(|(label, _)| label.to_string()))
        .collect()];
    for (header, key) in metrics {
        grid.push(
            std::iter::once(header.to_string())
                .chain(columns.iter().map(|(_, r)| cell(r.mean(key))))
                .collect(),
        );
    }
    align(&grid)
}

fn align(grid: &[Vec<String>]) -> String {
    let cols = grid.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| grid.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in grid {
        let mut line = String::new();
        for (c, s) in row.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{s:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "  {s:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricReport {
        let mut r = MetricReport::default();
        r.insert("a", PSNR, 20.0);
        r.insert("b", PSNR, f64::INFINITY);
        r.insert("a", SSIM, 0.5);
        r.insert("b", SSIM, 0.7);
        r.finalize();
        r.set_level(FRECHET, 1.25);
        r
    }

    #[test]
    fn aggregates_match_per_image_means() {
        let r = sample();
        assert!((r.mean(SSIM).unwrap() - 0.6).abs() < 1e-12);
        assert!((r.aggregate[SSIM].std - 0.1).abs() < 1e-12);
        assert_eq!(r.mean(PSNR), Some(f64::INFINITY));
    }

    #[test]
    fn jsonl_round_trip_with_sentinels() {
        let r = sample();
        let text = r.to_jsonl();
        assert!(text.contains("\"inf\""));
        assert_eq!(MetricReport::from_jsonl(&text).unwrap(), r);
    }

    #[test]
    fn table_has_reserved_columns() {
        let r = sample();
        let t = render_table(&[("Model", &r)]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].contains("PSNR") && lines[0].contains("FED") && lines[0].contains("NIQE"));
        assert!(lines[1].contains("n/a") && lines[1].contains("inf") && lines[1].contains("1.2500"));
    }
}
