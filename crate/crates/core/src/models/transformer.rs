use crate::autodiff::{ParamSet, Tape, ValueGrid, Var};
use crate::dynamics::{Point2, Trajectory};
use crate::nn::{
    causal_mask, dropout, positional_encoding, AttentionBlock, CausalMask, DropoutSpec, LinearLayer, Mode,
    PositionalEncodingTable,
};
use crate::sampler::SeededSampler;

use super::{grid_to_points, points_to_grid, ModelConfig, ModelError, Rollout, Targets};

/// Decoder-only Transformer: linear embedding of 2-D positions plus
/// sinusoidal position rows, a stack of causal post-norm decoder blocks, and
/// a linear read-out at every position.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel {
    config: ModelConfig,
    params: ParamSet,
    embed: LinearLayer,
    pe: PositionalEncodingTable,
    blocks: Vec<AttentionBlock>,
    head: LinearLayer,
}

impl TransformerModel {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut sampler = SeededSampler::new(config.init_seed);
        let mut params = ParamSet::new();
        let embed = LinearLayer::new(&mut params, "embed", 2, config.hidden, &mut sampler);
        let pe = positional_encoding(config.max_len, config.hidden)?;
        let blocks = (0..config.layers)
            .map(|l| {
                AttentionBlock::new(
                    &mut params,
                    &format!("decoder.{l}"),
                    config.hidden,
                    config.heads,
                    config.d_ff,
                    &mut sampler,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        let head = LinearLayer::new(&mut params, "head", config.hidden, 2, &mut sampler);
        Ok(Self {
            config,
            params,
            embed,
            pe,
            blocks,
            head,
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

    pub fn embed(&self) -> &LinearLayer {
        &self.embed
    }

    pub fn head(&self) -> &LinearLayer {
        &self.head
    }

    pub fn blocks(&self) -> &[AttentionBlock] {
        &self.blocks
    }

    pub fn positional_table(&self) -> &PositionalEncodingTable {
        &self.pe
    }

    /// Forward pass over several input sequences stacked row-wise.
    fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        inputs: &[&[Point2]],
        mode: Mode,
        sampler: &mut SeededSampler,
    ) -> Result<Var, ModelError> {
        let d = self.config.hidden;
        let mut positions = Vec::new();
        let mut stacked = Vec::new();
        for seq in inputs {
            if seq.len() > self.pe.max_len() {
                return Err(ModelError::Contract(format!(
                    "sequence of length {} exceeds positional table ({})",
                    seq.len(),
                    self.pe.max_len()
                )));
            }
            stacked.extend_from_slice(seq);
            positions.extend_from_slice(self.pe.prefix(seq.len())?.data());
        }
        let mut masks: Vec<CausalMask> = Vec::new();
        for seq in inputs {
            if !masks.iter().any(|m| m.len() == seq.len()) {
                masks.push(causal_mask(seq.len()));
            }
        }
        let mask_refs: Vec<&CausalMask> = inputs
            .iter()
            .map(|seq| masks.iter().find(|m| m.len() == seq.len()).expect("mask built above"))
            .collect();

        let drop = DropoutSpec::new(self.config.dropout_rate, mode)?;
        let x = tape.constant(points_to_grid(&stacked));
        let embed = self.embed.bind(tape, params);
        let e = embed.forward(tape, x)?;
        let pe = tape.constant(ValueGrid::from_rows(stacked.len(), d, positions)?);
        let mut h = tape.add(e, pe)?;
        h = dropout(tape, h, &drop, sampler)?;
        for block in &self.blocks {
            h = block.bind(tape, params).forward(tape, h, &mask_refs, &drop, sampler)?;
        }
        let head = self.head.bind(tape, params);
        Ok(head.forward(tape, h)?)
    }

    pub(crate) fn predict_batch(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        dataset: &[Trajectory],
        mode: Mode,
        sampler: &mut SeededSampler,
    ) -> Result<(Var, Targets), ModelError> {
        let inputs: Vec<&[Point2]> = dataset.iter().map(|t| &t.points()[..t.len() - 1]).collect();
        let pred = self.forward(tape, params, &inputs, mode, sampler)?;
        let len = dataset[0].len();
        if dataset.iter().all(|t| t.len() == len) {
            let targets: Vec<Point2> = dataset.iter().flat_map(|t| t.points()[1..].iter().copied()).collect();
            return Ok((pred, Targets::whole(points_to_grid(&targets))));
        }
        let mut segments = Vec::with_capacity(dataset.len());
        let mut grids = Vec::with_capacity(dataset.len());
        let mut start = 0;
        for t in dataset {
            segments.push((start, t.len() - 1));
            start += t.len() - 1;
            grids.push(points_to_grid(&t.points()[1..]));
        }
        Ok((pred, Targets::segmented(segments, grids)))
    }

    /// Re-encodes the whole generated prefix at every step and appends the
    /// prediction read at its last position.
    pub fn rollout(&self, init: Point2, steps: usize) -> Result<Rollout, ModelError> {
        if steps + 1 > self.pe.max_len() {
            return Err(ModelError::Contract(format!(
                "rollout of {steps} steps exceeds positional table ({})",
                self.pe.max_len()
            )));
        }
        let mut points = Vec::with_capacity(steps + 1);
        points.push(init);
        // Eval mode never draws from the sampler.
        let mut sampler = SeededSampler::new(0);
        for _ in 0..steps {
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, &self.params, &[&points], Mode::Eval, &mut sampler)?;
            let (rows, _) = tape.value(out).dims();
            let last = tape.value(out).row(rows - 1);
            let next = Point2::new(last[0], last[1]);
            if !next.is_finite() {
                return Ok(Rollout {
                    points,
                    diverged: true,
                });
            }
            points.push(next);
        }
        Ok(Rollout {
            points,
            diverged: false,
        })
    }

    /// Teacher-forced predictions for raw input points (eval mode).
    pub fn predict_points(&self, inputs: &[Point2]) -> Result<Vec<Point2>, ModelError> {
        let mut tape = Tape::new();
        let mut sampler = SeededSampler::new(0);
        let out = self.forward(&mut tape, &self.params, &[inputs], Mode::Eval, &mut sampler)?;
        Ok(grid_to_points(tape.value(out)))
    }
}
