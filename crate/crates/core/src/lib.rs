//! Few-exemplar generalization benchmark for sequence models on attractor
//! dynamics.
//!
//! The crate generates ground-truth trajectories from a point attractor and
//! the van der Pol oscillator, trains an Elman RNN and a decoder-only
//! Transformer on a handful of them, rolls both models out autoregressively
//! from fresh initial positions, and scores the rollouts with dynamic time
//! warping. Everything, including reverse-mode differentiation, is
//! implemented here on plain `f64` arrays.

pub mod autodiff;
pub mod dynamics;
pub mod eval;
pub mod experiment;
pub mod gradcheck;
pub mod models;
pub mod nn;
pub mod sampler;
pub mod train;

pub use dynamics::{Attractor, Point2, Trajectory, TrajectoryKind};
pub use eval::{dtw, evaluate, DtwResult, EvalReport};
pub use experiment::{run_cell, run_sweep, CellSpec, Preset, ReportRow, SweepSpec};
pub use models::{Generator, ModelConfig, ModelKind, Rollout, SequenceModel};
pub use sampler::SeededSampler;
pub use train::{train, TrainConfig, TrainResult};
