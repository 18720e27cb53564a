//! CSV and JSON report writers.

use std::path::Path;

use super::{summarize, ResultRow, SummaryRow};
use crate::error::{Error, Result};

pub const ROWS_HEADER: [&str; 14] = [
    "experiment",
    "language",
    "dist_threshold",
    "probe",
    "condition",
    "repetition",
    "tp",
    "fp",
    "fn",
    "tn",
    "accuracy",
    "precision",
    "recall",
    "f1",
];

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One line per result row.
pub fn rows_csv(rows: &[ResultRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(ROWS_HEADER)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.experiment.clone(),
            r.language.clone(),
            r.dist_threshold.to_string(),
            r.probe.to_string(),
            r.condition.clone(),
            r.repetition.to_string(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.fn_.to_string(),
            m.tn.to_string(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
        ])?;
    }
    finish(w)
}

pub fn summary_json(summaries: &[SummaryRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(summaries)? + "\n")
}

/// Plot-ready curve points from conditions of the form `series=N`.
pub fn curve_csv(summaries: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["language", "dist_threshold", "probe", "series", "n", "mean_accuracy", "mean_f1", "std_f1"])?;
    for s in summaries {
        let Some((series, n)) = s.condition.split_once('=') else {
            continue;
        };
        if n.parse::<usize>().is_err() {
            continue;
        }
        w.write_record([
            s.language.clone(),
            s.dist_threshold.to_string(),
            s.probe.to_string(),
            series.to_string(),
            n.to_string(),
            s.mean_accuracy.to_string(),
            s.mean_f1.to_string(),
            s.std_f1.to_string(),
        ])?;
    }
    finish(w)
}

/// Writes `<stem>.csv`, `<stem>_summary.json` and, when the conditions
/// form a curve, `<stem>_curve.csv` into `dir`.
pub fn write_reports(dir: impl AsRef<Path>, stem: &str, rows: &[ResultRow]) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let summaries = summarize(rows);
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    put(format!("{stem}.csv"), rows_csv(rows)?)?;
    put(format!("{stem}_summary.json"), summary_json(&summaries)?)?;
    if summaries.iter().any(|s| s.condition.contains('=')) {
        put(format!("{stem}_curve.csv"), curve_csv(&summaries)?)?;
    }
    Ok(written)
}
