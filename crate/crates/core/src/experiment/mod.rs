//! Sweeps over attractor, model, dropout rate, number of training sequences
//! and seed, with resumable CSV reports.

pub mod reference;
mod report;
mod sweep;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{
    save_trajectory, Attractor, DynamicsError, FigureEightConfig, PointAttractorConfig, Trajectory,
    VanDerPolConfig, INIT_RANGE,
};
use crate::eval::{evaluate, EvalError};
use crate::models::{load_checkpoint, Generator, ModelConfig, ModelError, ModelKind, SequenceModel};
use crate::sampler::{SeededSampler, SAMPLER_ALGORITHM};
use crate::train::{train, AdamConfig, TrainConfig, TrainError};

pub use report::{read_rows, summarize, write_rows, write_summary, ReportRow, SummaryRow};
pub use sweep::{run_sweep, run_sweep_with, SweepOptions, SweepOutcome};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep configuration: {0}")]
    Config(String),
    #[error(
        "{path}: existing rows carry fingerprint {found} but this sweep has {expected}; \
         use a fresh output directory"
    )]
    FingerprintMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed report: {msg}")]
    Report { path: PathBuf, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub const NUMERICS_REVISION: u32 = 1;

pub const DEFAULT_N_TRAIN: [usize; 12] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 25, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperMain,
    PaperDropout,
    FigureEight,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::PaperMain => "paper-main",
            Preset::PaperDropout => "paper-dropout",
            Preset::FigureEight => "figure-eight",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper-main" => Ok(Preset::PaperMain),
            "paper-dropout" => Ok(Preset::PaperDropout),
            "figure-eight" => Ok(Preset::FigureEight),
            other => Err(ExperimentError::Config(format!(
                "unknown preset {other:?} (expected paper-main, paper-dropout or figure-eight)"
            ))),
        }
    }
}

/// A full sweep: the cartesian product of the five list fields, all sharing
/// one training and evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub attractors: Vec<String>,
    pub models: Vec<ModelKind>,
    pub n_train: Vec<usize>,
    pub dropout_rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub n_eval_inits: usize,
    pub adam: AdamConfig,
    pub point: PointAttractorConfig,
    pub cyclic: VanDerPolConfig,
    pub figure_eight: FigureEightConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            attractors: vec!["point".into(), "cyclic".into()],
            models: vec![ModelKind::Rnn, ModelKind::Transformer],
            n_train: DEFAULT_N_TRAIN.to_vec(),
            dropout_rates: vec![0.0],
            seeds: vec![0],
            epochs: 25_000,
            n_eval_inits: 10,
            adam: AdamConfig::default(),
            point: PointAttractorConfig::default(),
            cyclic: VanDerPolConfig::default(),
            figure_eight: FigureEightConfig::default(),
        }
    }
}

/// Everything that changes what a row means, apart from its coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Protocol {
    pub epochs: usize,
    pub n_eval_inits: usize,
    pub adam: AdamConfig,
    pub point: PointAttractorConfig,
    pub cyclic: VanDerPolConfig,
    pub figure_eight: FigureEightConfig,
    pub design: DesignRecord,
}

/// Fixed modelling choices recorded in every fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignRecord {
    /// Bumped whenever a code change alters trained weights or scores.
    pub numerics_revision: u32,
    pub point_solver: &'static str,
    pub cyclic_solver: &'static str,
    pub rnn: ModelConfig,
    pub transformer: ModelConfig,
    pub transformer_block: &'static str,
    pub init: &'static str,
    pub loss: &'static str,
    pub optimizer: &'static str,
    pub sampler: &'static str,
    pub init_range: (f64, f64),
    pub eval_context: &'static str,
    pub dtw_cost: &'static str,
}

impl DesignRecord {
    pub fn current() -> Self {
        Self {
            numerics_revision: NUMERICS_REVISION,
            point_solver: "closed-form",
            cyclic_solver: "rk4",
            rnn: ModelConfig::rnn(0),
            transformer: ModelConfig::transformer(0, 0.0),
            transformer_block: "post-ln, relu ffn, bias-free projections, sinusoidal positions",
            init: "uniform 1/sqrt(fan_in); elman cell 1/sqrt(hidden); zero initial states",
            loss: "teacher-forced mse, mean over sequences",
            optimizer: "full-batch adam, one step per epoch",
            sampler: SAMPLER_ALGORITHM,
            init_range: INIT_RANGE,
            eval_context: "single initial point",
            dtw_cost: "euclidean",
        }
    }
}

impl SweepSpec {
    pub fn preset(preset: Preset) -> Self {
        let seeds = (0..5).collect();
        match preset {
            Preset::PaperMain => Self {
                seeds,
                ..Self::default()
            },
            Preset::PaperDropout => Self {
                models: vec![ModelKind::Transformer],
                dropout_rates: vec![0.0, 0.01, 0.1, 0.3],
                seeds,
                ..Self::default()
            },
            Preset::FigureEight => Self {
                attractors: vec!["figure-eight".into()],
                n_train: vec![1],
                seeds,
                ..Self::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let spec: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn attractor(&self, name: &str) -> Result<Attractor, ExperimentError> {
        match name {
            "point" => Ok(Attractor::Point(self.point)),
            "cyclic" => Ok(Attractor::Cyclic(self.cyclic)),
            "figure-eight" => Ok(Attractor::FigureEight(self.figure_eight)),
            other => Err(ExperimentError::Config(format!(
                "unknown attractor {other:?} (expected point, cyclic or figure-eight)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.attractors.is_empty()
            || self.models.is_empty()
            || self.n_train.is_empty()
            || self.dropout_rates.is_empty()
            || self.seeds.is_empty()
        {
            return bad("attractors, models, n_train, dropout_rates and seeds must be non-empty".into());
        }
        fn unique<T: PartialEq + fmt::Debug>(name: &str, items: &[T]) -> Result<(), ExperimentError> {
            for (i, a) in items.iter().enumerate() {
                if items[..i].contains(a) {
                    return Err(ExperimentError::Config(format!("{name} lists {a:?} twice")));
                }
            }
            Ok(())
        }
        unique("attractors", &self.attractors)?;
        unique("models", &self.models)?;
        unique("n_train", &self.n_train)?;
        unique("dropout_rates", &self.dropout_rates)?;
        unique("seeds", &self.seeds)?;
        for name in &self.attractors {
            self.attractor(name)?.validate()?;
        }
        if self.n_train.contains(&0) {
            return bad("n_train values must be at least 1".into());
        }
        if self.attractors.iter().any(|a| a == "figure-eight") && self.n_train != [1] {
            return bad("figure-eight sweeps train on a single sequence; set n_train = [1]".into());
        }
        for &d in &self.dropout_rates {
            if !(0.0..1.0).contains(&d) {
                return bad(format!("dropout rate must be in [0, 1), got {d}"));
            }
        }
        if self.models.contains(&ModelKind::Rnn) && self.dropout_rates != [0.0] {
            return bad("the RNN has no dropout; sweeps including it need dropout_rates = [0.0]".into());
        }
        if self.epochs < 1 || self.n_eval_inits < 1 {
            return bad("epochs and n_eval_inits must be at least 1".into());
        }
        self.adam.validate()?;
        Ok(())
    }

    pub fn protocol(&self) -> Protocol {
        Protocol {
            epochs: self.epochs,
            n_eval_inits: self.n_eval_inits,
            adam: self.adam,
            point: self.point,
            cyclic: self.cyclic,
            figure_eight: self.figure_eight,
            design: DesignRecord::current(),
        }
    }

    /// SHA-256 of the protocol. Rows are only comparable, and a sweep only
    /// resumable, under an identical fingerprint.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.protocol()).expect("protocol serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn row_count(&self) -> usize {
        self.attractors.len() * self.models.len() * self.dropout_rates.len() * self.n_train.len() * self.seeds.len()
    }

    /// Cells in report order: attractor, model, dropout, n_train, seed.
    pub fn cells(&self) -> Result<Vec<CellSpec>, ExperimentError> {
        self.validate()?;
        let fingerprint = self.fingerprint();
        let mut cells = Vec::with_capacity(self.row_count());
        for name in &self.attractors {
            let attractor = self.attractor(name)?;
            for &model in &self.models {
                for &dropout in &self.dropout_rates {
                    for &n_train in &self.n_train {
                        for &seed in &self.seeds {
                            cells.push(CellSpec {
                                attractor,
                                model,
                                dropout,
                                n_train,
                                seed,
                                epochs: self.epochs,
                                n_eval_inits: self.n_eval_inits,
                                adam: self.adam,
                                fingerprint: fingerprint.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub attractor: Attractor,
    pub model: ModelKind,
    pub dropout: f64,
    pub n_train: usize,
    pub seed: u64,
    pub epochs: usize,
    pub n_eval_inits: usize,
    pub adam: AdamConfig,
    pub fingerprint: String,
}

fn attractor_code(a: &Attractor) -> u64 {
    match a {
        Attractor::Point(_) => 0,
        Attractor::Cyclic(_) => 1,
        Attractor::FigureEight(_) => 2,
    }
}

fn model_code(m: ModelKind) -> u64 {
    match m {
        ModelKind::Rnn => 0,
        ModelKind::Transformer => 1,
    }
}

impl CellSpec {
    /// Unique per cell; seeds the dropout masks.
    pub fn cell_seed(&self) -> u64 {
        SeededSampler::derive(
            self.seed,
            "cell",
            &[
                attractor_code(&self.attractor),
                model_code(self.model),
                self.dropout.to_bits(),
                self.n_train as u64,
            ],
        )
        .next_u64()
    }

    /// Training data depends only on (seed, attractor, n_train), so models
    /// and dropout rates in the same seed see identical sequences.
    pub fn data_sampler(&self) -> SeededSampler {
        SeededSampler::derive(
            self.seed,
            "train-data",
            &[attractor_code(&self.attractor), self.n_train as u64],
        )
    }

    /// Evaluation initials depend only on (seed, attractor).
    pub fn eval_sampler(&self) -> SeededSampler {
        SeededSampler::derive(self.seed, "eval", &[attractor_code(&self.attractor)])
    }

    /// Weight initialization shared by every dropout rate of a model.
    pub fn init_seed(&self) -> u64 {
        SeededSampler::derive(
            self.seed,
            "init",
            &[
                attractor_code(&self.attractor),
                model_code(self.model),
                self.n_train as u64,
            ],
        )
        .next_u64()
    }

    pub fn model_config(&self) -> ModelConfig {
        match self.model {
            ModelKind::Rnn => ModelConfig::rnn(self.init_seed()),
            ModelKind::Transformer => ModelConfig::transformer(self.init_seed(), self.dropout),
        }
    }

    /// File-name friendly identifier.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-d{}-n{}-s{}",
            self.attractor.name(),
            self.model,
            self.dropout,
            self.n_train,
            self.seed
        )
    }
}

/// Runs one cell and returns its row.
pub fn run_cell(cell: &CellSpec) -> Result<ReportRow, ExperimentError> {
    run_cell_with_model(cell).map(|(row, _)| row)
}

/// Like [`run_cell`], also handing back the trained model (`None` when
/// training diverged).
pub fn run_cell_with_model(cell: &CellSpec) -> Result<(ReportRow, Option<SequenceModel>), ExperimentError> {
    let start = Instant::now();
    let dataset = cell.attractor.training_set(cell.n_train, &mut cell.data_sampler())?;
    let model = SequenceModel::new(cell.model_config())?;
    let cfg = TrainConfig {
        epochs: cell.epochs,
        adam: cell.adam,
        seed: cell.cell_seed(),
        loss_log_stride: cell.epochs,
        checkpoint_every: None,
        checkpoint_dir: None,
    };
    let reference = reference::lookup(cell.attractor.name(), cell.model, cell.dropout, cell.n_train);
    let mut row = ReportRow {
        attractor: cell.attractor.name().to_string(),
        model: cell.model,
        dropout: cell.dropout,
        n_train: cell.n_train,
        seed: cell.seed,
        mean_dtw: ReportRow::SENTINEL,
        se_dtw: ReportRow::SENTINEL,
        diverged_count: cell.n_eval_inits,
        train_diverged: true,
        final_loss: ReportRow::SENTINEL,
        wall_time_s: 0.0,
        config_fingerprint: cell.fingerprint.clone(),
        paper_mean: reference.map(|r| r.0),
        paper_se: reference.map(|r| r.1),
    };
    let trained = match train(model, &dataset, &cfg) {
        Ok(result) => result,
        Err(TrainError::Diverged { .. }) => {
            row.wall_time_s = start.elapsed().as_secs_f64();
            return Ok((row, None));
        }
        Err(e) => return Err(e.into()),
    };
    let report = evaluate(
        &trained.model,
        &cell.attractor,
        cell.n_eval_inits,
        cell.attractor.steps(),
        &mut cell.eval_sampler(),
    )?;
    row.mean_dtw = report.mean;
    row.se_dtw = report.std_err;
    row.diverged_count = report.diverged_count();
    row.train_diverged = false;
    row.final_loss = trained.final_loss();
    row.wall_time_s = start.elapsed().as_secs_f64();
    Ok((row, Some(trained.model)))
}

/// Writes `generated_XX.txt` and `reference_XX.txt` for `n_inits` fresh
/// initials drawn from `sampler`.
pub fn dump_rollouts(
    model: &dyn Generator,
    attractor: &Attractor,
    n_inits: usize,
    sampler: &mut SeededSampler,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    if n_inits < 1 {
        return Err(ExperimentError::Config("n_inits must be at least 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let steps = attractor.steps();
    let inits = crate::dynamics::sample_initials(n_inits, INIT_RANGE.0, INIT_RANGE.1, sampler)?;
    let mut written = Vec::with_capacity(2 * n_inits);
    for (i, init) in inits.into_iter().enumerate() {
        let reference = attractor.reference(init, steps)?;
        let rollout = model.rollout(init, steps)?;
        let generated = Trajectory::new(rollout.points, attractor.dt(), attractor.kind())?;
        for (prefix, traj) in [("generated", &generated), ("reference", &reference)] {
            let path = out_dir.join(format!("{prefix}_{i:02}.txt"));
            save_trajectory(traj, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn dump_rollouts_from_checkpoint(
    checkpoint: &Path,
    attractor: &Attractor,
    n_inits: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let model = load_checkpoint(checkpoint)?;
    dump_rollouts(&model, attractor, n_inits, &mut SeededSampler::new(seed), out_dir)
}

#[cfg(test)]
mod tests;
