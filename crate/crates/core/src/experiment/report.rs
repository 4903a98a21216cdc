use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, reference, ExperimentError, SweepSpec};
use crate::eval::{mean, standard_error};
use crate::models::ModelKind;

/// One sweep cell. `se_dtw` is the standard error over the evaluation
/// initials. Cells whose training diverged carry `SENTINEL` statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub attractor: String,
    pub model: ModelKind,
    pub dropout: f64,
    pub n_train: usize,
    pub seed: u64,
    pub mean_dtw: f64,
    pub se_dtw: f64,
    pub diverged_count: usize,
    pub train_diverged: bool,
    pub final_loss: f64,
    pub wall_time_s: f64,
    pub config_fingerprint: String,
    pub paper_mean: Option<f64>,
    pub paper_se: Option<f64>,
}

impl ReportRow {
    pub const SENTINEL: f64 = -1.0;

    pub const HEADER: &'static str = "attractor,model,dropout,n_train,seed,mean_dtw,se_dtw,diverged_count,\
train_diverged,final_loss,wall_time_s,config_fingerprint,paper_mean,paper_se";

    /// Equality of everything except the wall-clock time.
    pub fn same_result(&self, other: &Self) -> bool {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        } == Self {
            wall_time_s: 0.0,
            ..other.clone()
        } && self.mean_dtw.to_bits() == other.mean_dtw.to_bits()
            && self.se_dtw.to_bits() == other.se_dtw.to_bits()
            && self.final_loss.to_bits() == other.final_loss.to_bits()
    }

    pub(crate) fn key(&self) -> (String, ModelKind, u64, usize, u64) {
        (
            self.attractor.clone(),
            self.model,
            self.dropout.to_bits(),
            self.n_train,
            self.seed,
        )
    }

    /// The row as one CSV line including the trailing newline.
    pub fn to_csv_line(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.serialize(self).expect("row serializes");
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }
}

/// Aggregate over the seeds of one `(attractor, model, dropout, n_train)`
/// curve point. `se_across_seeds` is the cross-seed standard error of the
/// per-seed means; `mean_eval_se` averages the within-seed errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub attractor: String,
    pub model: ModelKind,
    pub dropout: f64,
    pub n_train: usize,
    pub seeds: usize,
    pub diverged_seeds: usize,
    pub mean_dtw: f64,
    pub se_across_seeds: f64,
    pub mean_eval_se: f64,
    pub paper_mean: Option<f64>,
    pub paper_se: Option<f64>,
}

/// Groups rows by curve point in spec order. Diverged seeds are counted
/// but excluded from the statistics.
pub fn summarize(spec: &SweepSpec, rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for attractor in &spec.attractors {
        for &model in &spec.models {
            for &dropout in &spec.dropout_rates {
                for &n_train in &spec.n_train {
                    let group: Vec<&ReportRow> = rows
                        .iter()
                        .filter(|r| {
                            &r.attractor == attractor
                                && r.model == model
                                && r.dropout.to_bits() == dropout.to_bits()
                                && r.n_train == n_train
                                && spec.seeds.contains(&r.seed)
                        })
                        .collect();
                    if group.is_empty() {
                        continue;
                    }
                    let ok: Vec<&&ReportRow> = group.iter().filter(|r| !r.train_diverged).collect();
                    let means: Vec<f64> = ok.iter().map(|r| r.mean_dtw).collect();
                    let ses: Vec<f64> = ok.iter().map(|r| r.se_dtw).collect();
                    let reference = reference::lookup(attractor, model, dropout, n_train);
                    out.push(SummaryRow {
                        attractor: attractor.clone(),
                        model,
                        dropout,
                        n_train,
                        seeds: group.len(),
                        diverged_seeds: group.len() - ok.len(),
                        mean_dtw: if means.is_empty() { ReportRow::SENTINEL } else { mean(&means) },
                        se_across_seeds: standard_error(&means).unwrap_or(0.0),
                        mean_eval_se: if ses.is_empty() { ReportRow::SENTINEL } else { mean(&ses) },
                        paper_mean: reference.map(|r| r.0),
                        paper_se: reference.map(|r| r.1),
                    });
                }
            }
        }
    }
    out
}

/// Reads a report, dropping a trailing partial line left by an interrupted
/// append.
pub fn read_rows(path: &Path) -> Result<Vec<ReportRow>, ExperimentError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(complete.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| ExperimentError::Report {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if !complete.is_empty() && header != ReportRow::HEADER {
        return Err(ExperimentError::Report {
            path: path.to_path_buf(),
            msg: format!("unexpected header {header:?}"),
        });
    }
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| ExperimentError::Report {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
        .collect()
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Replaces `path` with a header plus `rows`.
pub fn write_rows(path: &Path, rows: &[ReportRow]) -> Result<(), ExperimentError> {
    let mut text = format!("{}\n", ReportRow::HEADER);
    for row in rows {
        text.push_str(&row.to_csv_line());
    }
    write_atomic(path, text.as_bytes())
}

pub fn write_summary(path: &Path, summary: &[SummaryRow]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in summary {
        w.serialize(row).map_err(|e| ExperimentError::Report {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
    }
    let mut bytes = w.into_inner().expect("in-memory writer");
    if summary.is_empty() {
        bytes = b"attractor,model,dropout,n_train,seeds,diverged_seeds,mean_dtw,se_across_seeds,mean_eval_se,paper_mean,paper_se\n".to_vec();
    }
    write_atomic(path, &bytes)
}
