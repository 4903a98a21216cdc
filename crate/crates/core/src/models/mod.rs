//! The two sequence models behind one interface.
//!
//! Both models are trained with teacher forcing (predict `traj[k+1]` from the
//! ground-truth prefix `traj[..=k]`) and evaluated by autoregressive rollout
//! from a single initial position.

mod checkpoint;
mod rnn;
mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamSet, Tape, ValueGrid, Var};
use crate::dynamics::{Point2, Trajectory};
use crate::nn::{Mode, NnError};
use crate::sampler::SeededSampler;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use rnn::RnnModel;
pub use transformer::TransformerModel;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rnn,
    Transformer,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::Transformer => "transformer",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rnn" => Ok(ModelKind::Rnn),
            "transformer" => Ok(ModelKind::Transformer),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

/// Architecture hyperparameters. `hidden` is the RNN state width and the
/// Transformer's `d_model`; `d_ff` is the Transformer feed-forward width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout_rate: f64,
    pub init_seed: u64,
    /// Longest sequence the positional table covers.
    pub max_len: usize,
}

impl ModelConfig {
    pub fn rnn(init_seed: u64) -> Self {
        Self {
            kind: ModelKind::Rnn,
            hidden: 20,
            d_ff: 40,
            heads: 4,
            layers: 1,
            dropout_rate: 0.0,
            init_seed,
            max_len: 600,
        }
    }

    pub fn transformer(init_seed: u64, dropout_rate: f64) -> Self {
        Self {
            kind: ModelKind::Transformer,
            dropout_rate,
            ..Self::rnn(init_seed)
        }
    }

    /// Transformer reading "40 units" as the model width.
    pub fn wide_transformer(init_seed: u64, dropout_rate: f64) -> Self {
        Self {
            hidden: 40,
            ..Self::transformer(init_seed, dropout_rate)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.hidden == 0 || self.d_ff == 0 || self.heads == 0 || self.layers == 0 || self.max_len == 0 {
            return bad(format!("all widths and counts must be positive: {self:?}"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("heads ({}) must divide hidden ({})", self.heads, self.hidden));
        }
        if self.kind == ModelKind::Transformer && !self.hidden.is_multiple_of(2) {
            return bad(format!("transformer width must be even, got {}", self.hidden));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate));
        }
        Ok(())
    }
}

/// Output of an autoregressive rollout. `points` starts with the initial
/// position; if a prediction became non-finite the rollout stops there and
/// `diverged` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub points: Vec<Point2>,
    pub diverged: bool,
}

/// Anything that can generate a trajectory from an initial position.
pub trait Generator {
    fn rollout(&self, init: Point2, steps: usize) -> Result<Rollout, ModelError>;
}

/// Either of the two benchmark models.
#[derive(Debug, Clone, PartialEq)]
pub enum SequenceModel {
    Rnn(RnnModel),
    Transformer(TransformerModel),
}

impl SequenceModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(match config.kind {
            ModelKind::Rnn => SequenceModel::Rnn(RnnModel::new(config)?),
            ModelKind::Transformer => SequenceModel::Transformer(TransformerModel::new(config)?),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            SequenceModel::Rnn(m) => m.config(),
            SequenceModel::Transformer(m) => m.config(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            SequenceModel::Rnn(m) => m.params(),
            SequenceModel::Transformer(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            SequenceModel::Rnn(m) => m.params_mut(),
            SequenceModel::Transformer(m) => m.params_mut(),
        }
    }

    /// Allocates whatever per-dataset state training needs (the RNN's
    /// trainable initial hidden states).
    pub fn prepare_for_dataset(&mut self, n_sequences: usize) {
        if let SequenceModel::Rnn(m) = self {
            m.ensure_initial_states(n_sequences);
        }
    }

    /// Teacher-forced training loss: mean over sequences of per-sequence MSE
    /// between predictions and next positions. Sequence `i` of `dataset` uses
    /// trainable initial state `i` for the RNN in train mode.
    pub fn dataset_loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        dataset: &[Trajectory],
        mode: Mode,
        sampler: &mut SeededSampler,
    ) -> Result<Var, ModelError> {
        if dataset.is_empty() {
            return Err(ModelError::Contract("dataset is empty".into()));
        }
        if let Some(t) = dataset.iter().find(|t| t.len() < 2) {
            return Err(ModelError::Contract(format!(
                "trajectories need at least 2 points, got {}",
                t.len()
            )));
        }
        let (pred, targets) = match self {
            SequenceModel::Rnn(m) => m.predict_batch(tape, params, dataset, mode)?,
            SequenceModel::Transformer(m) => m.predict_batch(tape, params, dataset, mode, sampler)?,
        };
        mean_sequence_mse(tape, pred, &targets)
    }

    /// Prediction `k` estimates `traj[k + 1]` from `traj[..=k]`.
    pub fn teacher_forced_predict(
        &self,
        traj: &Trajectory,
        seq_index: Option<usize>,
        mode: Mode,
        sampler: &mut SeededSampler,
    ) -> Result<Vec<Point2>, ModelError> {
        if traj.len() < 2 {
            return Err(ModelError::Contract(format!(
                "trajectory needs at least 2 points, got {}",
                traj.len()
            )));
        }
        let mut tape = Tape::new();
        let pred = match self {
            SequenceModel::Rnn(m) => m.predict_one(&mut tape, traj, seq_index, mode)?,
            SequenceModel::Transformer(m) => {
                let (p, _) = m.predict_batch(&mut tape, m.params(), std::slice::from_ref(traj), mode, sampler)?;
                p
            }
        };
        Ok(grid_to_points(tape.value(pred)))
    }
}

impl Generator for SequenceModel {
    fn rollout(&self, init: Point2, steps: usize) -> Result<Rollout, ModelError> {
        match self {
            SequenceModel::Rnn(m) => m.rollout(init, steps),
            SequenceModel::Transformer(m) => m.rollout(init, steps),
        }
    }
}

/// Per-sequence targets (`traj[1..]`) laid out as one grid per sequence.
pub(crate) struct Targets {
    /// Row ranges of each sequence inside the prediction grid; `None` when
    /// all sequences share one layout and a single MSE covers them.
    segments: Option<Vec<(usize, usize)>>,
    grids: Vec<ValueGrid>,
}

impl Targets {
    pub(crate) fn whole(grid: ValueGrid) -> Self {
        Self {
            segments: None,
            grids: vec![grid],
        }
    }

    pub(crate) fn segmented(segments: Vec<(usize, usize)>, grids: Vec<ValueGrid>) -> Self {
        Self {
            segments: Some(segments),
            grids,
        }
    }
}

fn mean_sequence_mse(tape: &mut Tape, pred: Var, targets: &Targets) -> Result<Var, ModelError> {
    match &targets.segments {
        None => Ok(tape.mse(pred, targets.grids[0].clone())?),
        Some(segments) => {
            let mut total: Option<Var> = None;
            for ((start, len), grid) in segments.iter().zip(&targets.grids) {
                let part = tape.slice_rows(pred, *start, *len)?;
                let loss = tape.mse(part, grid.clone())?;
                total = Some(match total {
                    None => loss,
                    Some(acc) => tape.add(acc, loss)?,
                });
            }
            let total = total.ok_or_else(|| ModelError::Contract("no sequences".into()))?;
            Ok(tape.scale(total, 1.0 / segments.len() as f64))
        }
    }
}

pub(crate) fn points_to_grid(points: &[Point2]) -> ValueGrid {
    let data = points.iter().flat_map(|p| [p.x, p.y]).collect();
    ValueGrid::from_rows(points.len(), 2, data).expect("non-empty point list")
}

pub(crate) fn grid_to_points(grid: &ValueGrid) -> Vec<Point2> {
    grid.data()
        .chunks_exact(2)
        .map(|c| Point2::new(c[0], c[1]))
        .collect()
}
