//! Seed aggregation of `runs.csv` rows.

use std::path::Path;

use lreg::experiments::MetricRecord;
use serde::Deserialize;

pub const SUMMARY_HEADER: [&str; 6] = ["variant", "alpha", "metric", "n", "mean", "median"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub alpha: f64,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

/// Sum in row order divided by the count.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Middle value, or the average of the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Groups by (variant, alpha, metric) in order of first appearance.
pub fn summarize<'a>(records: impl IntoIterator<Item = &'a MetricRecord>) -> Vec<SummaryRow> {
    let mut groups: Vec<((String, u64, String), Vec<f64>)> = Vec::new();
    for r in records {
        let key = (r.variant.clone(), r.alpha.to_bits(), r.metric.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vals)) => vals.push(r.value),
            None => groups.push((key, vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|((variant, alpha, metric), vals)| SummaryRow {
            variant,
            alpha: f64::from_bits(alpha),
            metric,
            n: vals.len(),
            mean: mean(&vals),
            median: median(&vals),
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.variant.clone(),
            r.alpha.to_string(),
            r.metric.clone(),
            r.n.to_string(),
            r.mean.to_string(),
            r.median.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RunRow {
    #[allow(dead_code)]
    run_id: String,
    #[allow(dead_code)]
    kind: String,
    seed: u64,
    variant: String,
    alpha: f64,
    metric: String,
    value: f64,
}

/// Reads the metric rows of a `runs.csv`.
pub fn read_runs(path: &Path) -> Result<Vec<MetricRecord>, csv::Error> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<RunRow>()
        .map(|row| {
            row.map(|row| MetricRecord {
                seed: row.seed,
                variant: row.variant,
                alpha: row.alpha,
                metric: row.metric,
                value: row.value,
            })
        })
        .collect()
}

/// Plain-text table of a summary.
pub fn render(rows: &[SummaryRow]) -> String {
    let mut out = format!(
        "{:<16} {:>8} {:<34} {:>3} {:>12} {:>12}\n",
        "variant", "alpha", "metric", "n", "mean", "median"
    );
    for r in rows {
        out += &format!(
            "{:<16} {:>8} {:<34} {:>3} {:>12.6} {:>12.6}\n",
            r.variant, r.alpha, r.metric, r.n, r.mean, r.median
        );
    }
    out
}
