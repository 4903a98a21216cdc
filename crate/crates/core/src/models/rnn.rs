use crate::autodiff::{ParamId, ParamSet, Tape, ValueGrid, Var};
use crate::dynamics::{Point2, Trajectory};
use crate::nn::{ElmanCell, LinearLayer, Mode};
use crate::sampler::SeededSampler;

use super::{grid_to_points, points_to_grid, ModelConfig, ModelError, Rollout, Targets};

/// Elman RNN with a linear read-out and one trainable initial hidden state
/// per training sequence. Evaluation always starts from a zero state.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    config: ModelConfig,
    params: ParamSet,
    cell: ElmanCell,
    head: LinearLayer,
    initial_states: Vec<ParamId>,
}

impl RnnModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut sampler = SeededSampler::new(config.init_seed);
        let mut params = ParamSet::new();
        let cell = ElmanCell::new(&mut params, "rnn.cell", 2, config.hidden, &mut sampler);
        let head = LinearLayer::new(&mut params, "rnn.head", config.hidden, 2, &mut sampler);
        Ok(Self {
            config,
            params,
            cell,
            head,
            initial_states: Vec::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn cell(&self) -> &ElmanCell {
        &self.cell
    }

    pub fn head(&self) -> &LinearLayer {
        &self.head
    }

    pub fn initial_states(&self) -> &[ParamId] {
        &self.initial_states
    }

    /// Adds zero-initialized trainable initial states up to `n`.
    pub fn ensure_initial_states(&mut self, n: usize) {
        while self.initial_states.len() < n {
            let name = format!("rnn.h0.{}", self.initial_states.len());
            let id = self.params.add(name, ValueGrid::zeros(&[self.config.hidden]));
            self.initial_states.push(id);
        }
    }

    /// Teacher-forced predictions for a batch. In train mode sequence `i`
    /// starts from trainable state `i`; in eval mode every sequence starts at 0.
    pub(crate) fn predict_batch(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        dataset: &[Trajectory],
        mode: Mode,
    ) -> Result<(Var, Targets), ModelError> {
        let states: Vec<Option<usize>> = match mode {
            Mode::Train => (0..dataset.len()).map(Some).collect(),
            Mode::Eval => vec![None; dataset.len()],
        };
        let len = dataset[0].len();
        if dataset.iter().all(|t| t.len() == len) {
            let refs: Vec<&Trajectory> = dataset.iter().collect();
            let (pred, target) = self.run_batch(tape, params, &refs, &states)?;
            return Ok((pred, Targets::whole(target)));
        }
        let mut preds = Vec::with_capacity(dataset.len());
        let mut segments = Vec::with_capacity(dataset.len());
        let mut grids = Vec::with_capacity(dataset.len());
        let mut start = 0;
        for (traj, state) in dataset.iter().zip(&states) {
            let (p, g) = self.run_batch(tape, params, &[traj], std::slice::from_ref(state))?;
            segments.push((start, traj.len() - 1));
            start += traj.len() - 1;
            preds.push(p);
            grids.push(g);
        }
        Ok((tape.concat_rows(&preds)?, Targets::segmented(segments, grids)))
    }

    pub(crate) fn predict_one(
        &self,
        tape: &mut Tape,
        traj: &Trajectory,
        seq_index: Option<usize>,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        let state = match (mode, seq_index) {
            (Mode::Train, None) => {
                return Err(ModelError::Contract(
                    "train-mode RNN prediction needs the sequence index of its initial state".into(),
                ))
            }
            (Mode::Train, Some(i)) => Some(i),
            (Mode::Eval, _) => None,
        };
        let (pred, _) = self.run_batch(tape, &self.params, &[traj], &[state])?;
        Ok(pred)
    }

    /// Equal-length batch, rows ordered step-major (`row = k * batch + b`).
    fn run_batch(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        batch: &[&Trajectory],
        states: &[Option<usize>],
    ) -> Result<(Var, ValueGrid), ModelError> {
        let n = batch.len();
        let steps = batch[0].len() - 1;
        let hidden = self.config.hidden;
        let mut inputs = Vec::with_capacity(steps * n);
        let mut targets = Vec::with_capacity(steps * n);
        for k in 0..steps {
            for traj in batch {
                inputs.push(traj.points()[k]);
                targets.push(traj.points()[k + 1]);
            }
        }

        let cell = self.cell.bind(tape, params);
        let head = self.head.bind(tape, params);
        let x_all = tape.constant(points_to_grid(&inputs));
        let xin_all = tape.matmul(x_all, cell.w_xh)?;

        let mut h = if states.iter().all(Option::is_none) {
            tape.constant(ValueGrid::zeros(&[n, hidden]))
        } else {
            let mut rows = Vec::with_capacity(n);
            for state in states {
                rows.push(match state {
                    Some(i) => {
                        let id = *self.initial_states.get(*i).ok_or_else(|| {
                            ModelError::Contract(format!(
                                "sequence index {i} has no trainable initial state ({} allocated)",
                                self.initial_states.len()
                            ))
                        })?;
                        tape.param(params, id)
                    }
                    None => tape.constant(ValueGrid::zeros(&[1, hidden])),
                });
            }
            if rows.len() == 1 {
                rows[0]
            } else {
                tape.concat_rows(&rows)?
            }
        };

        let mut hs = Vec::with_capacity(steps);
        for k in 0..steps {
            let xin = if steps == 1 { xin_all } else { tape.slice_rows(xin_all, k * n, n)? };
            h = cell.step_projected(tape, h, xin)?;
            hs.push(h);
        }
        let h_all = if hs.len() == 1 { hs[0] } else { tape.concat_rows(&hs)? };
        let pred = head.forward(tape, h_all)?;
        Ok((pred, points_to_grid(&targets)))
    }

    pub fn rollout(&self, init: Point2, steps: usize) -> Result<Rollout, ModelError> {
        let mut points = Vec::with_capacity(steps + 1);
        points.push(init);
        let mut tape = Tape::new();
        let cell = self.cell.bind(&mut tape, &self.params);
        let head = self.head.bind(&mut tape, &self.params);
        let mut h = tape.constant(ValueGrid::zeros(&[1, self.config.hidden]));
        let mut x = init;
        for _ in 0..steps {
            let xv = tape.constant(points_to_grid(&[x]));
            h = cell.step(&mut tape, h, xv)?;
            let out = head.forward(&mut tape, h)?;
            let next = grid_to_points(tape.value(out))[0];
            if !next.is_finite() {
                return Ok(Rollout {
                    points,
                    diverged: true,
                });
            }
            points.push(next);
            x = next;
        }
        Ok(Rollout {
            points,
            diverged: false,
        })
    }
}
