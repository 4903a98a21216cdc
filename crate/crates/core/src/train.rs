//! Full-batch teacher-forced training with Adam.

use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamSet, Tape};
use crate::dynamics::{Point2, Trajectory};
use crate::models::{save_checkpoint, ModelError, SequenceModel};
use crate::nn::Mode;
use crate::sampler::SeededSampler;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.alpha > 0.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(TrainError::Contract(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Adam with bias correction, applied in place to every parameter.
/// `t` is the 1-based step counter.
pub fn adam_step(params: &mut ParamSet, cfg: &AdamConfig, t: u64) -> Result<(), TrainError> {
    if t < 1 {
        return Err(TrainError::Contract("Adam step counter starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for p in params.iter_mut() {
        let g = p.grad.data();
        let m = p.adam_m.data_mut();
        for (m, g) in m.iter_mut().zip(g) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        }
        let v = p.adam_v.data_mut();
        for (v, g) in v.iter_mut().zip(p.grad.data()) {
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
        let (m, v) = (p.adam_m.data(), p.adam_v.data());
        for ((theta, m), v) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *theta -= cfg.alpha * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

/// Mean over all `2T` coordinates of squared differences.
pub fn mse_loss(pred: &[Point2], target: &[Point2]) -> Result<f64, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::Contract(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p.x - t.x).powi(2) + (p.y - t.y).powi(2))
        .sum();
    Ok(total / (2 * pred.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Seeds the per-epoch dropout streams.
    pub seed: u64,
    pub loss_log_stride: usize,
    /// Also write a checkpoint every this many epochs (needs `checkpoint_dir`).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Directory for `final.json` and periodic checkpoints.
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25_000,
            adam: AdamConfig::default(),
            seed: 0,
            loss_log_stride: 100,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::Contract("epochs must be at least 1".into()));
        }
        if self.loss_log_stride < 1 {
            return Err(TrainError::Contract("loss_log_stride must be at least 1".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(TrainError::Contract("checkpoint_every must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: SequenceModel,
    /// `(epoch, loss)` with 1-based epochs; the loss is measured before that
    /// epoch's update.
    pub loss_curve: Vec<(usize, f64)>,
    pub wall_time_s: f64,
}

impl TrainResult {
    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN)
    }
}

/// One full-batch Adam step per epoch on the mean per-sequence MSE.
pub fn train(
    mut model: SequenceModel,
    dataset: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Contract("training set is empty".into()));
    }
    model.prepare_for_dataset(dataset.len());
    for p in model.params_mut().iter_mut() {
        p.adam_m.fill(0.0);
        p.adam_v.fill(0.0);
    }
    let start = Instant::now();
    let mut loss_curve = Vec::new();
    for epoch in 1..=cfg.epochs {
        model.params_mut().zero_grads();
        let mut sampler = SeededSampler::derive(cfg.seed, "dropout", &[epoch as u64]);
        let mut tape = Tape::new();
        let loss = model.dataset_loss(&mut tape, model.params(), dataset, Mode::Train, &mut sampler)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        tape.backward(loss, model.params_mut()).map_err(ModelError::from)?;
        drop(tape);
        adam_step(model.params_mut(), &cfg.adam, epoch as u64)?;
        if (epoch - 1) % cfg.loss_log_stride == 0 || epoch == cfg.epochs {
            loss_curve.push((epoch, value));
        }
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if epoch % every == 0 && epoch != cfg.epochs {
                save_checkpoint(&model, &dir.join(format!("epoch-{epoch}.json")))?;
            }
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        save_checkpoint(&model, &dir.join("final.json"))?;
    }
    Ok(TrainResult {
        model,
        loss_curve,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Two-column `epoch,loss` text with a header line.
pub fn write_loss_curve<W: Write>(curve: &[(usize, f64)], mut w: W) -> io::Result<()> {
    writeln!(w, "epoch,loss")?;
    for (epoch, loss) in curve {
        writeln!(w, "{epoch},{loss:.16e}")?;
    }
    w.flush()
}
