//! Dynamic time warping and rollout scoring.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{sample_initials, Attractor, DynamicsError, Point2, INIT_RANGE};
use crate::models::{Generator, ModelError};
use crate::sampler::SeededSampler;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwResult {
    pub distance: f64,
    /// Monotone warping path from `(0, 0)` to `(n - 1, m - 1)`.
    pub path: Vec<(usize, usize)>,
    pub cells: (usize, usize),
}

/// Classic DTW with steps `(1,0)`, `(0,1)`, `(1,1)` and Euclidean local cost.
///
/// When several predecessors tie, the path prefers the diagonal, then the
/// vertical step `(i - 1, j)`, then the horizontal one.
pub fn dtw(a: &[Point2], b: &[Point2]) -> Result<DtwResult, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::Contract(format!(
            "dtw needs non-empty inputs, got lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let cost = a[i].distance(&b[j]);
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => acc[j - 1],
                (_, 0) => acc[(i - 1) * m],
                _ => acc[(i - 1) * m + j - 1]
                    .min(acc[(i - 1) * m + j])
                    .min(acc[i * m + j - 1]),
            };
            acc[i * m + j] = cost + best;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(DtwResult {
        distance: acc[n * m - 1],
        path,
        cells: (n, m),
    })
}

/// Sample standard deviation (`n - 1` denominator) over `sqrt(n)`.
pub fn standard_error(values: &[f64]) -> Result<f64, EvalError> {
    let n = values.len();
    if n < 2 {
        return Err(EvalError::Contract(format!(
            "standard error needs at least 2 values, got {n}"
        )));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((var / n as f64).sqrt())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitScore {
    pub init: Point2,
    pub dtw: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attractor: String,
    pub steps: usize,
    pub seed: u64,
    pub per_init: Vec<InitScore>,
    pub mean: f64,
    /// Standard error over the evaluation initials; 0 for a single initial.
    pub std_err: f64,
}

impl EvalReport {
    pub fn diverged_count(&self) -> usize {
        self.per_init.iter().filter(|s| s.diverged).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Rolls `model` out from `n_inits` fresh initials in the `[-3, 3]` square
/// and scores each rollout against the ground truth with DTW. A diverged
/// rollout is scored on its finite prefix and flagged.
pub fn evaluate<G: Generator + ?Sized>(
    model: &G,
    attractor: &Attractor,
    n_inits: usize,
    steps: usize,
    sampler: &mut SeededSampler,
) -> Result<EvalReport, EvalError> {
    if n_inits < 1 {
        return Err(EvalError::Contract("n_inits must be at least 1".into()));
    }
    let seed = sampler.seed();
    let inits = sample_initials(n_inits, INIT_RANGE.0, INIT_RANGE.1, sampler)?;
    let mut per_init = Vec::with_capacity(n_inits);
    for init in inits {
        let reference = attractor.reference(init, steps)?;
        let rollout = model.rollout(init, steps)?;
        let score = dtw(&rollout.points, reference.points())?;
        per_init.push(InitScore {
            init,
            dtw: score.distance,
            diverged: rollout.diverged,
        });
    }
    let scores: Vec<f64> = per_init.iter().map(|s| s.dtw).collect();
    let std_err = if scores.len() > 1 { standard_error(&scores)? } else { 0.0 };
    Ok(EvalReport {
        attractor: attractor.name().to_string(),
        steps,
        seed,
        mean: mean(&scores),
        std_err,
        per_init,
    })
}
