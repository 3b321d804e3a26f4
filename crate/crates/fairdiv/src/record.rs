//! Run records and the artifact files built from them: per-run result rows
//! in CSV and JSON-lines form, per-epoch training history, and frontier
//! vertex exports with their area summary.
//!
//! Floats are written with the shortest round-tripping decimal form, so a
//! rerun with identical inputs produces byte-identical metric files; only
//! wall-clock fields differ between reruns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::FairnessNotion;
use crate::error::{Error, Result};
use crate::frontier::{fa_auc, low_bias_auc, FaPoint, Frontier};
use crate::trainer::{SweepRun, TrainHistory, TrainSettings};

/// One sweep run's outcome. Metric fields are present exactly when
/// `status` is `"ok"`; a failed run keeps its identity fields and carries
/// the error text instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset: String,
    pub lambda: f64,
    pub seed: u64,
    pub divergence: String,
    pub estimator: String,
    pub notion: String,
    pub status: String,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub accuracy: Option<f64>,
    #[serde(default)]
    pub delta_dp: Option<f64>,
    #[serde(default)]
    pub delta_eo: Option<f64>,
    #[serde(default)]
    pub group_aucs: Vec<f64>,
    pub wall_seconds: f64,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_FAILED: &str = "failed";

/// Column order of the records CSV. `group_aucs` is a single
/// semicolon-joined column so the row shape does not depend on the number
/// of groups.
pub const RECORD_COLUMNS: [&str; 14] = [
    "run_id",
    "dataset",
    "lambda",
    "seed",
    "divergence",
    "estimator",
    "notion",
    "status",
    "error",
    "accuracy",
    "delta_dp",
    "delta_eo",
    "group_aucs",
    "wall_seconds",
];

impl RunRecord {
    /// Builds the record for one sweep entry. `index` is the position in
    /// the sweep grid and makes the id unique even if the same
    /// (lambda, seed) cell were repeated.
    pub fn from_sweep(
        index: usize,
        dataset_id: &str,
        settings: &TrainSettings,
        run: &SweepRun,
    ) -> RunRecord {
        let run_id = format!(
            "r{index:03}-{dataset_id}-{}-l{}-s{}",
            settings.method_id(),
            run.lambda,
            run.seed
        );
        let mut record = RunRecord {
            run_id,
            dataset: dataset_id.to_string(),
            lambda: run.lambda,
            seed: run.seed,
            divergence: settings.divergence.as_str().to_string(),
            estimator: settings.estimator.as_str().to_string(),
            notion: settings.notion.as_str().to_string(),
            status: STATUS_FAILED.to_string(),
            error: None,
            accuracy: None,
            delta_dp: None,
            delta_eo: None,
            group_aucs: Vec::new(),
            wall_seconds: run.wall_seconds,
        };
        match &run.outcome {
            Ok(summary) => {
                record.status = STATUS_OK.to_string();
                record.accuracy = Some(summary.test.accuracy);
                record.delta_dp = Some(summary.test.delta_dp);
                record.delta_eo = Some(summary.test.delta_eo);
                record.group_aucs = summary.group_aucs.clone();
            }
            Err(message) => record.error = Some(message.clone()),
        }
        record
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    /// Test-set bias under the given notion, when the run succeeded.
    pub fn bias(&self, notion: FairnessNotion) -> Option<f64> {
        match notion {
            FairnessNotion::Dp => self.delta_dp,
            FairnessNotion::Eo => self.delta_eo,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.status.as_str() {
            STATUS_OK => {
                let metrics = [
                    ("accuracy", self.accuracy),
                    ("delta_dp", self.delta_dp),
                    ("delta_eo", self.delta_eo),
                ];
                for (name, value) in metrics {
                    match value {
                        Some(v) if v.is_finite() => {}
                        Some(v) => {
                            return Err(Error::Data(format!(
                                "record {}: {name} is non-finite ({v})",
                                self.run_id
                            )))
                        }
                        None => {
                            return Err(Error::Data(format!(
                                "record {}: ok status but {name} is missing",
                                self.run_id
                            )))
                        }
                    }
                }
                if self.group_aucs.iter().any(|a| !a.is_finite()) {
                    return Err(Error::Data(format!(
                        "record {}: non-finite group AUC",
                        self.run_id
                    )));
                }
            }
            STATUS_FAILED => {
                if self.error.is_none() {
                    return Err(Error::Data(format!(
                        "record {}: failed status without an error message",
                        self.run_id
                    )));
                }
            }
            other => {
                return Err(Error::Data(format!(
                    "record {}: unknown status {other:?}",
                    self.run_id
                )))
            }
        }
        Ok(())
    }

    fn csv_fields(&self) -> [String; 14] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let aucs =
            self.group_aucs.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";");
        [
            self.run_id.clone(),
            self.dataset.clone(),
            self.lambda.to_string(),
            self.seed.to_string(),
            self.divergence.clone(),
            self.estimator.clone(),
            self.notion.clone(),
            self.status.clone(),
            self.error.clone().unwrap_or_default(),
            opt(self.accuracy),
            opt(self.delta_dp),
            opt(self.delta_eo),
            aucs,
            self.wall_seconds.to_string(),
        ]
    }

    fn from_csv_row(row: &csv::StringRecord) -> Result<RunRecord> {
        if row.len() != RECORD_COLUMNS.len() {
            return Err(Error::Data(format!(
                "expected {} fields, found {}",
                RECORD_COLUMNS.len(),
                row.len()
            )));
        }
        let field = |idx: usize| row.get(idx).unwrap_or_default();
        let f64_at = |idx: usize| -> Result<f64> {
            field(idx).parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "field {} is not a number: {:?}",
                    RECORD_COLUMNS[idx],
                    field(idx)
                ))
            })
        };
        let opt_at = |idx: usize| -> Result<Option<f64>> {
            if field(idx).is_empty() {
                Ok(None)
            } else {
                f64_at(idx).map(Some)
            }
        };
        let seed = field(3).parse::<u64>().map_err(|_| {
            Error::Data(format!("field seed is not an unsigned integer: {:?}", field(3)))
        })?;
        let aucs = if field(12).is_empty() {
            Vec::new()
        } else {
            field(12)
                .split(';')
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| {
                        Error::Data(format!("field group_aucs has a bad entry: {tok:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?
        };
        let record = RunRecord {
            run_id: field(0).to_string(),
            dataset: field(1).to_string(),
            lambda: f64_at(2)?,
            seed,
            divergence: field(4).to_string(),
            estimator: field(5).to_string(),
            notion: field(6).to_string(),
            status: field(7).to_string(),
            error: if field(8).is_empty() { None } else { Some(field(8).to_string()) },
            accuracy: opt_at(9)?,
            delta_dp: opt_at(10)?,
            delta_eo: opt_at(11)?,
            group_aucs: aucs,
            wall_seconds: f64_at(13)?,
        };
        record.validate()?;
        Ok(record)
    }
}

pub(crate) fn validate_records(records: &[RunRecord]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for record in records {
        record.validate()?;
        if !seen.insert(record.run_id.as_str()) {
            return Err(Error::Data(format!("duplicate run_id {:?}", record.run_id)));
        }
    }
    Ok(())
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    validate_records(records)?;
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(RECORD_COLUMNS)?;
    for record in records {
        writer.write_record(&record.csv_fields())?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a records CSV back, reporting the 1-based line of any malformed
/// row.
pub fn read_records_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let name = path.display();
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.clone();
    if header.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Data(format!(
            "{name}: header does not match a records CSV (expected {})",
            RECORD_COLUMNS.join(",")
        )));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let record = RunRecord::from_csv_row(&row)
            .map_err(|e| Error::Data(format!("{name}: line {line}: {e}")))?;
        records.push(record);
    }
    validate_records(&records)?;
    Ok(records)
}

/// One JSON object per run, keys mirroring the record fields; group AUCs
/// stay a proper array here.
pub fn write_records_jsonl(path: &Path, records: &[RunRecord]) -> Result<()> {
    validate_records(records)?;
    let mut out = String::new();
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Data(format!("serializing run record: {e}")))?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<RunRecord>> {
    let name = path.display();
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RunRecord = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("{name}: line {}: {e}", idx + 1)))?;
        record
            .validate()
            .map_err(|e| Error::Data(format!("{name}: line {}: {e}", idx + 1)))?;
        records.push(record);
    }
    validate_records(&records)?;
    Ok(records)
}

/// Per-epoch history as CSV: epoch, classification loss, one column per
/// penalized pair, then the tracked accuracies and test gaps.
pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch".to_string(), "bce".to_string()];
    header.extend(history.pair_labels.iter().cloned());
    header.extend(
        ["train_accuracy", "test_accuracy", "test_delta_dp", "test_delta_eo"]
            .map(str::to_string),
    );
    writer.write_record(&header)?;
    for rec in &history.records {
        if rec.pair_estimates.len() != history.pair_labels.len() {
            return Err(Error::Shape(format!(
                "epoch {} carries {} pair estimates for {} labels",
                rec.epoch,
                rec.pair_estimates.len(),
                history.pair_labels.len()
            )));
        }
        let mut row = vec![rec.epoch.to_string(), rec.bce.to_string()];
        row.extend(rec.pair_estimates.iter().map(|v| v.to_string()));
        row.push(rec.train_accuracy.to_string());
        row.push(rec.test_accuracy.to_string());
        row.push(rec.test_delta_dp.to_string());
        row.push(rec.test_delta_eo.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Converts successful records into frontier points under the given
/// notion. Failed records are skipped; a successful record with a
/// valid-range violation (non-finite or negative bias) is an error.
pub fn fa_points(records: &[RunRecord], notion: FairnessNotion) -> Result<Vec<FaPoint>> {
    let mut points = Vec::new();
    for record in records.iter().filter(|r| r.is_ok()) {
        let epsilon = record.bias(notion).ok_or_else(|| {
            Error::Data(format!("record {} lacks a {notion} bias", record.run_id))
        })?;
        let acc = record.accuracy.expect("ok records carry accuracy");
        let method = format!(
            "{}-{}-{}",
            record.divergence, record.estimator, record.notion
        );
        points.push(FaPoint::new(epsilon, acc, record.lambda, record.seed, &method)?);
    }
    Ok(points)
}

/// Frontier vertices as CSV, in envelope order.
pub fn write_frontier_csv(path: &Path, frontier: &Frontier) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epsilon", "accuracy", "lambda", "seed", "method"])?;
    for v in frontier.vertices() {
        writer.write_record(&[
            v.epsilon.to_string(),
            v.acc.to_string(),
            v.lambda.to_string(),
            v.seed.to_string(),
            v.method.clone(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Normalized areas of a frontier, with the exact range they were taken
/// over recorded alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSummary {
    pub zeta: f64,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub fa_auc: f64,
    pub low_bias_auc: f64,
    pub n_points: usize,
    pub n_vertices: usize,
}

/// Computes both area summaries. The overall area runs from zero bias up
/// to the larger of 1 and the outermost vertex, so it always covers the
/// whole envelope.
pub fn frontier_summary(frontier: &Frontier, n_points: usize) -> Result<FrontierSummary> {
    let eps_lo = 0.0;
    let eps_hi =
        frontier.vertices().iter().map(|v| v.epsilon).fold(1.0, f64::max);
    Ok(FrontierSummary {
        zeta: frontier.zeta(),
        eps_lo,
        eps_hi,
        fa_auc: fa_auc(frontier, eps_lo, eps_hi)?,
        low_bias_auc: low_bias_auc(frontier)?,
        n_points,
        n_vertices: frontier.vertices().len(),
    })
}

pub fn write_frontier_summary(path: &Path, summary: &FrontierSummary) -> Result<()> {
    let line = serde_json::to_string(summary)
        .map_err(|e| Error::Data(format!("serializing frontier summary: {e}")))?;
    std::fs::write(path, format!("{line}\n"))?;
    Ok(())
}
