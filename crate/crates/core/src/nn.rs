//! Layers shared by the two sequence models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, ParamId, ParamSet, Tape, ValueGrid, Var};
use crate::sampler::SeededSampler;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Uniform `[-bound, bound]` initialization.
pub fn uniform_grid(shape: &[usize], bound: f64, sampler: &mut SeededSampler) -> ValueGrid {
    let mut g = ValueGrid::zeros(shape);
    g.data_mut()
        .iter_mut()
        .for_each(|v| *v = sampler.uniform(-bound, bound));
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    weight: Var,
    bias: Var,
}

impl LinearLayer {
    /// Weight and bias drawn from `U(-1/sqrt(input), 1/sqrt(input))`.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        sampler: &mut SeededSampler,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = params.add(format!("{name}.weight"), uniform_grid(&[input, output], bound, sampler));
        let bias = params.add(format!("{name}.bias"), uniform_grid(&[output], bound, sampler));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> BoundLinear {
        BoundLinear {
            weight: tape.param(params, self.weight),
            bias: tape.param(params, self.bias),
        }
    }
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let xw = tape.matmul(x, self.weight)?;
        tape.add_row(xw, self.bias)
    }
}

/// Elman recurrent cell: `h' = tanh(x w_xh + h w_hh + b_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElmanCell {
    pub w_xh: ParamId,
    pub w_hh: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundElmanCell {
    pub w_xh: Var,
    pub w_hh: Var,
    pub b_h: Var,
}

impl ElmanCell {
    /// All three tensors use the bound `1/sqrt(hidden)`.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        sampler: &mut SeededSampler,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_xh = params.add(format!("{name}.w_xh"), uniform_grid(&[input, hidden], bound, sampler));
        let w_hh = params.add(format!("{name}.w_hh"), uniform_grid(&[hidden, hidden], bound, sampler));
        let b_h = params.add(format!("{name}.b_h"), uniform_grid(&[hidden], bound, sampler));
        Self {
            w_xh,
            w_hh,
            b_h,
            input,
            hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> BoundElmanCell {
        BoundElmanCell {
            w_xh: tape.param(params, self.w_xh),
            w_hh: tape.param(params, self.w_hh),
            b_h: tape.param(params, self.b_h),
        }
    }
}

impl BoundElmanCell {
    /// One step for a batch: `h` is `B x hidden`, `x` is `B x input`.
    pub fn step(&self, tape: &mut Tape, h: Var, x: Var) -> Result<Var, AutodiffError> {
        let xin = tape.matmul(x, self.w_xh)?;
        self.step_projected(tape, h, xin)
    }

    /// Step with the input projection `x w_xh` already computed.
    pub fn step_projected(&self, tape: &mut Tape, h: Var, xin: Var) -> Result<Var, AutodiffError> {
        let rec = tape.matmul(h, self.w_hh)?;
        let pre = tape.add(xin, rec)?;
        let pre = tape.add_row(pre, self.b_h)?;
        Ok(tape.tanh(pre))
    }
}

/// Single Elman update on a fresh binding of the cell parameters.
pub fn elman_step(
    tape: &mut Tape,
    params: &ParamSet,
    cell: &ElmanCell,
    h: Var,
    x: Var,
) -> Result<Var, AutodiffError> {
    cell.bind(tape, params).step(tape, h, x)
}

/// Precomputed sinusoidal position table.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncodingTable {
    table: ValueGrid,
    d_model: usize,
}

impl PositionalEncodingTable {
    pub fn max_len(&self) -> usize {
        self.table.dims().0
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn table(&self) -> &ValueGrid {
        &self.table
    }

    /// Rows `0..len` as a `len x d_model` grid.
    pub fn prefix(&self, len: usize) -> Result<ValueGrid, NnError> {
        if len == 0 || len > self.max_len() {
            return Err(NnError::Config(format!(
                "positional table has {} rows, requested {len}",
                self.max_len()
            )));
        }
        let data = self.table.data()[..len * self.d_model].to_vec();
        Ok(ValueGrid::from_rows(len, self.d_model, data)?)
    }
}

/// `table[pos][2i] = sin(pos / 10000^(2i/d_model))`,
/// `table[pos][2i+1] = cos(pos / 10000^(2i/d_model))`.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<PositionalEncodingTable, NnError> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(NnError::Config(format!("d_model must be positive and even, got {d_model}")));
    }
    if max_len == 0 {
        return Err(NnError::Config("max_len must be positive".into()));
    }
    let mut data = Vec::with_capacity(max_len * d_model);
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / d_model as f64);
            data.push(angle.sin());
            data.push(angle.cos());
        }
    }
    Ok(PositionalEncodingTable {
        table: ValueGrid::from_rows(max_len, d_model, data)?,
        d_model,
    })
}

/// Lower-triangular attention mask: query `q` may attend to key `k` iff `k <= q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalMask {
    len: usize,
    allowed: Vec<bool>,
}

impl CausalMask {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.len + k]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

pub fn causal_mask(len: usize) -> CausalMask {
    let allowed = (0..len * len).map(|i| i % len <= i / len).collect();
    CausalMask { len, allowed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn new(rate: f64, mode: Mode) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(Self { rate, mode })
    }

    pub fn eval() -> Self {
        Self {
            rate: 0.0,
            mode: Mode::Eval,
        }
    }

    pub fn is_active(&self) -> bool {
        self.mode == Mode::Train && self.rate > 0.0
    }
}

/// Inverted dropout: in training, zero each element with probability `rate`
/// and scale survivors by `1 / (1 - rate)`. Identity in eval mode.
pub fn dropout(
    tape: &mut Tape,
    x: Var,
    spec: &DropoutSpec,
    sampler: &mut SeededSampler,
) -> Result<Var, NnError> {
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(NnError::Config(format!("dropout rate must be in [0, 1), got {}", spec.rate)));
    }
    if !spec.is_active() {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - spec.rate);
    let factors = (0..tape.value(x).len())
        .map(|_| if sampler.bernoulli(spec.rate) { 0.0 } else { keep })
        .collect();
    Ok(tape.mul_const(x, factors)?)
}

/// One post-norm decoder block: masked multi-head self-attention followed by
/// a position-wise ReLU feed-forward, each wrapped as `LN(x + drop(sublayer(x)))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub ff_in: LinearLayer,
    pub ff_out: LinearLayer,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
}

impl AttentionBlock {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        sampler: &mut SeededSampler,
    ) -> Result<Self, NnError> {
        if heads == 0 || d_model == 0 || !d_model.is_multiple_of(heads) {
            return Err(NnError::Config(format!(
                "heads ({heads}) must divide d_model ({d_model})"
            )));
        }
        if d_ff == 0 {
            return Err(NnError::Config("d_ff must be positive".into()));
        }
        let bound = 1.0 / (d_model as f64).sqrt();
        let mut proj = |p: &mut ParamSet, n: &str| {
            p.add(format!("{name}.{n}"), uniform_grid(&[d_model, d_model], bound, sampler))
        };
        let w_q = proj(params, "w_q");
        let w_k = proj(params, "w_k");
        let w_v = proj(params, "w_v");
        let w_o = proj(params, "w_o");
        let ln1_gain = params.add(format!("{name}.ln1.gain"), ValueGrid::filled(&[d_model], 1.0));
        let ln1_bias = params.add(format!("{name}.ln1.bias"), ValueGrid::zeros(&[d_model]));
        let ff_in = LinearLayer::new(params, &format!("{name}.ff_in"), d_model, d_ff, sampler);
        let ff_out = LinearLayer::new(params, &format!("{name}.ff_out"), d_ff, d_model, sampler);
        let ln2_gain = params.add(format!("{name}.ln2.gain"), ValueGrid::filled(&[d_model], 1.0));
        let ln2_bias = params.add(format!("{name}.ln2.bias"), ValueGrid::zeros(&[d_model]));
        Ok(Self {
            d_model,
            heads,
            d_ff,
            w_q,
            w_k,
            w_v,
            w_o,
            ln1_gain,
            ln1_bias,
            ff_in,
            ff_out,
            ln2_gain,
            ln2_bias,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamSet) -> BoundAttentionBlock {
        BoundAttentionBlock {
            d_model: self.d_model,
            heads: self.heads,
            w_q: tape.param(params, self.w_q),
            w_k: tape.param(params, self.w_k),
            w_v: tape.param(params, self.w_v),
            w_o: tape.param(params, self.w_o),
            ln1_gain: tape.param(params, self.ln1_gain),
            ln1_bias: tape.param(params, self.ln1_bias),
            ff_in: self.ff_in.bind(tape, params),
            ff_out: self.ff_out.bind(tape, params),
            ln2_gain: tape.param(params, self.ln2_gain),
            ln2_bias: tape.param(params, self.ln2_bias),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundAttentionBlock {
    d_model: usize,
    heads: usize,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    w_o: Var,
    ln1_gain: Var,
    ln1_bias: Var,
    ff_in: BoundLinear,
    ff_out: BoundLinear,
    ln2_gain: Var,
    ln2_bias: Var,
}

impl BoundAttentionBlock {
    /// Concatenated per-head attention outputs, before the `w_o` projection,
    /// computed with the fused causal kernel.
    pub fn attend(&self, tape: &mut Tape, x: Var, masks: &[&CausalMask]) -> Result<Var, NnError> {
        let (t, d) = tape.value(x).dims();
        let total: usize = masks.iter().map(|m| m.len()).sum();
        if d != self.d_model || total != t || masks.is_empty() {
            return Err(NnError::Autodiff(AutodiffError::Shape(format!(
                "attention input {t}x{d} with masks covering {total} rows and d_model {}",
                self.d_model
            ))));
        }
        let q = tape.matmul(x, self.w_q)?;
        let k = tape.matmul(x, self.w_k)?;
        let v = tape.matmul(x, self.w_v)?;
        let segments: Vec<usize> = masks.iter().map(|m| m.len()).collect();
        Ok(tape.causal_attention(q, k, v, self.heads, &segments)?)
    }

    /// Same result as [`attend`](Self::attend), assembled from the generic
    /// primitives (`masked_fill`, `softmax_rows`, ...). Works with any mask.
    ///
    /// `x` may stack several sequences row-wise; `masks` gives one causal
    /// mask per sequence in order, and attention never crosses a boundary.
    pub fn attend_composite(&self, tape: &mut Tape, x: Var, masks: &[&CausalMask]) -> Result<Var, NnError> {
        let (t, d) = tape.value(x).dims();
        let total: usize = masks.iter().map(|m| m.len()).sum();
        if d != self.d_model || total != t || masks.is_empty() {
            return Err(NnError::Autodiff(AutodiffError::Shape(format!(
                "attention input {t}x{d} with masks covering {total} rows and d_model {}",
                self.d_model
            ))));
        }
        let dh = self.d_model / self.heads;
        let q = tape.matmul(x, self.w_q)?;
        let k = tape.matmul(x, self.w_k)?;
        let v = tape.matmul(x, self.w_v)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut segments = Vec::with_capacity(masks.len());
        let mut start = 0;
        for mask in masks {
            let len = mask.len();
            let (qs, ks, vs) = if masks.len() == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_rows(q, start, len)?,
                    tape.slice_rows(k, start, len)?,
                    tape.slice_rows(v, start, len)?,
                )
            };
            let mut heads = Vec::with_capacity(self.heads);
            for h in 0..self.heads {
                let qh = tape.slice_cols(qs, h * dh, dh)?;
                let kh = tape.slice_cols(ks, h * dh, dh)?;
                let vh = tape.slice_cols(vs, h * dh, dh)?;
                let kt = tape.transpose(kh);
                let scores = tape.matmul(qh, kt)?;
                let scores = tape.scale(scores, scale);
                let scores = tape.masked_fill(scores, mask.as_slice())?;
                let weights = tape.softmax_rows(scores)?;
                heads.push(tape.matmul(weights, vh)?);
            }
            segments.push(tape.concat_cols(&heads)?);
            start += len;
        }
        if segments.len() == 1 {
            Ok(segments[0])
        } else {
            Ok(tape.concat_rows(&segments)?)
        }
    }

    /// `LN(x + drop(MHA(x) w_o))`.
    pub fn attention_sublayer(
        &self,
        tape: &mut Tape,
        x: Var,
        masks: &[&CausalMask],
        drop: &DropoutSpec,
        sampler: &mut SeededSampler,
    ) -> Result<Var, NnError> {
        let heads = self.attend(tape, x, masks)?;
        let out = tape.matmul(heads, self.w_o)?;
        let out = dropout(tape, out, drop, sampler)?;
        let res = tape.add(x, out)?;
        Ok(tape.layer_norm(res, self.ln1_gain, self.ln1_bias)?)
    }

    /// `LN(x + drop(relu(x W1 + b1) W2 + b2))`.
    pub fn feed_forward_sublayer(
        &self,
        tape: &mut Tape,
        x: Var,
        drop: &DropoutSpec,
        sampler: &mut SeededSampler,
    ) -> Result<Var, NnError> {
        let inner = self.ff_in.forward(tape, x)?;
        let inner = tape.relu(inner);
        let out = self.ff_out.forward(tape, inner)?;
        let out = dropout(tape, out, drop, sampler)?;
        let res = tape.add(x, out)?;
        Ok(tape.layer_norm(res, self.ln2_gain, self.ln2_bias)?)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        masks: &[&CausalMask],
        drop: &DropoutSpec,
        sampler: &mut SeededSampler,
    ) -> Result<Var, NnError> {
        let a = self.attention_sublayer(tape, x, masks, drop, sampler)?;
        self.feed_forward_sublayer(tape, a, drop, sampler)
    }
}

/// Attention sublayer of `block` on a fresh parameter binding.
pub fn mha_forward(
    tape: &mut Tape,
    params: &ParamSet,
    x: Var,
    block: &AttentionBlock,
    mask: &CausalMask,
    drop: &DropoutSpec,
    sampler: &mut SeededSampler,
) -> Result<Var, NnError> {
    block
        .bind(tape, params)
        .attention_sublayer(tape, x, &[mask], drop, sampler)
}

/// Feed-forward sublayer of `block` on a fresh parameter binding.
pub fn feed_forward(
    tape: &mut Tape,
    params: &ParamSet,
    x: Var,
    block: &AttentionBlock,
    drop: &DropoutSpec,
    sampler: &mut SeededSampler,
) -> Result<Var, NnError> {
    block.bind(tape, params).feed_forward_sublayer(tape, x, drop, sampler)
}

#[cfg(test)]
mod tests;
