//! JSON-lines metrics and the multi-seed summary.
//!
//! Each line carries an `event` field: `eval`, `answer` or `step`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ssal_core::oracle::{LabelAnswer, LabelQuery};
use ssal_core::trainer::{EvalRecord, StepReport};

use crate::error::{Error, Result};

pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Append to `path`, creating it if needed.
    pub fn append(path: &Path) -> Result<Self> {
        let file = File::options()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn line(&mut self, event: &str, body: Value) -> Result<()> {
        let mut obj = serde_json::Map::new();
        obj.insert("event".into(), event.into());
        if let Value::Object(fields) = body {
            obj.extend(fields);
        }
        serde_json::to_writer(&mut self.out, &obj).map_err(|e| Error::format(&self.path, e.to_string()))?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn eval(&mut self, rec: &EvalRecord) -> Result<()> {
        let body = serde_json::to_value(rec).map_err(|e| Error::format(&self.path, e.to_string()))?;
        self.line("eval", body)
    }

    pub fn answer(&mut self, q: &LabelQuery, a: &LabelAnswer) -> Result<()> {
        self.line(
            "answer",
            json!({
                "query_id": q.query_id,
                "dataset_index": q.dataset_index,
                "label": a.label,
                "source": a.source,
                "answered_at_ms": a.answered_at_ms,
            }),
        )
    }

    pub fn step(&mut self, r: &StepReport<'_>) -> Result<()> {
        self.line(
            "step",
            json!({
                "phase": r.phase,
                "step": r.step,
                "epoch": r.epoch,
                "lr": r.outcome.lr,
                "losses": r.outcome.losses,
                "confident": r.outcome.confident,
                "labels": r.split.labeled_count(),
            }),
        )
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub final_accuracy: f64,
    pub labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<SeedResult>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

impl RunSummary {
    pub fn new(runs: Vec<SeedResult>) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.final_accuracy).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&accs);
        RunSummary {
            runs,
            mean_accuracy,
            std_accuracy,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
    }
}
