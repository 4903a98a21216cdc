use std::rc::Rc;

use super::grid::gemm_acc;
use super::{AutodiffError, ParamId, ParamSet, ValueGrid};

/// Additive score applied to disallowed attention entries.
pub const MASK_SENTINEL: f64 = -1e30;
/// Variance epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Rc<Vec<f64>>),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    MaskedFill(Var),
    Transpose(Var),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Sum(Var),
    Mse(Var, Rc<ValueGrid>),
    CausalAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: Vec<usize>,
        probs: Vec<f64>,
    },
}

/// Records primitive operations as they execute so that a single reverse
/// sweep can propagate gradients back to the bound parameters.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<ValueGrid>,
    ops: Vec<Op>,
}

fn shape_err(op: &str, a: &ValueGrid, b: &ValueGrid) -> AutodiffError {
    AutodiffError::Shape(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

fn grid(rows: usize, cols: usize, data: Vec<f64>) -> ValueGrid {
    ValueGrid::from_rows(rows, cols, data).expect("internal shape bookkeeping")
}

/// Copies head columns `off..off+dh` of rows `base..base+len` into a
/// column-major `dh x len` buffer.
fn head_columns(src: &[f64], d: usize, base: usize, len: usize, off: usize, dh: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * len];
    for j in 0..len {
        let r = (base + j) * d + off;
        for c in 0..dh {
            out[c * len + j] = src[r + c];
        }
    }
    out
}

fn scatter_head_columns(src: &[f64], dst: &mut [f64], d: usize, base: usize, len: usize, off: usize, dh: usize) {
    for j in 0..len {
        let r = (base + j) * d + off;
        for c in 0..dh {
            dst[r + c] += src[c * len + j];
        }
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// Dot product with four independent accumulators (fixed order, so results
/// are reproducible).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, len: usize) -> &mut Vec<f64> {
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> &ValueGrid {
        &self.values[v.0]
    }

    fn push(&mut self, value: ValueGrid, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn constant(&mut self, value: ValueGrid) -> Var {
        self.push(value, Op::Constant)
    }

    /// Binds a parameter; gradients reaching this node are added to its `grad`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(params.get(id).value.clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ga, gb) = (self.value(a), self.value(b));
        let (m, k) = ga.dims();
        let (k2, n) = gb.dims();
        if k != k2 {
            return Err(shape_err("matmul", ga, gb));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(m, k, n, ga.data(), false, gb.data(), false, &mut out);
        Ok(self.push(grid(m, n, out), Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ga, gb) = (self.value(a), self.value(b));
        if ga.dims() != gb.dims() {
            return Err(shape_err("add", ga, gb));
        }
        let data = ga.data().iter().zip(gb.data()).map(|(x, y)| x + y).collect();
        let out = ValueGrid::new(ga.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of an `r x c` grid.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ga, gr) = (self.value(a), self.value(row));
        let (r, c) = ga.dims();
        if gr.dims() != (1, c) {
            return Err(shape_err("add_row", ga, gr));
        }
        let mut data = ga.data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            chunk.iter_mut().zip(gr.data()).for_each(|(x, b)| *x += b);
        }
        Ok(self.push(grid(r, c, data), Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ga, gb) = (self.value(a), self.value(b));
        if ga.dims() != gb.dims() {
            return Err(shape_err("mul", ga, gb));
        }
        let data = ga.data().iter().zip(gb.data()).map(|(x, y)| x * y).collect();
        let out = ValueGrid::new(ga.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Elementwise product with a fixed (non-differentiable) factor grid.
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var, AutodiffError> {
        let ga = self.value(a);
        if factors.len() != ga.len() {
            return Err(AutodiffError::Shape(format!(
                "mul_const: {} factors for shape {:?}",
                factors.len(),
                ga.shape()
            )));
        }
        let data = ga.data().iter().zip(&factors).map(|(x, f)| x * f).collect();
        let out = ValueGrid::new(ga.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulConst(a, Rc::new(factors))))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ga = self.value(a);
        let data = ga.data().iter().map(|x| x * s).collect();
        let out = ValueGrid::new(ga.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let ga = self.value(a);
        let data = ga.data().iter().map(|x| x.tanh()).collect();
        let out = ValueGrid::new(ga.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ga = self.value(a);
        let data = ga.data().iter().map(|x| x.max(0.0)).collect();
        let out = ValueGrid::new(ga.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Relu(a))
    }

    /// Max-subtracted softmax along each row. A row whose entries are all
    /// masked is rejected.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ga = self.value(a);
        let (r, c) = ga.dims();
        let mut data = ga.data().to_vec();
        for (row_idx, row) in data.chunks_exact_mut(c).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= MASK_SENTINEL * 0.5 {
                return Err(AutodiffError::DegenerateMask { row: row_idx });
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(grid(r, c, data), Op::Softmax(a)))
    }

    /// Row-wise layer normalization with learned `gain` and `bias` rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (gx, gg, gb) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = gx.dims();
        if gg.dims() != (1, c) || gb.dims() != (1, c) {
            return Err(shape_err("layer_norm", gx, gg));
        }
        let mut xhat = Vec::with_capacity(r * c);
        let mut rstd = Vec::with_capacity(r);
        let mut out = Vec::with_capacity(r * c);
        for row in gx.data().chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            for (j, v) in row.iter().enumerate() {
                let h = (v - mean) * s;
                xhat.push(h);
                out.push(h * gg.data()[j] + gb.data()[j]);
            }
        }
        Ok(self.push(
            grid(r, c, out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
        ))
    }

    /// Adds [`MASK_SENTINEL`] wherever `allowed` is false.
    pub fn masked_fill(&mut self, a: Var, allowed: &[bool]) -> Result<Var, AutodiffError> {
        let ga = self.value(a);
        if allowed.len() != ga.len() {
            return Err(AutodiffError::Shape(format!(
                "masked_fill: mask of {} entries for shape {:?}",
                allowed.len(),
                ga.shape()
            )));
        }
        let data = ga
            .data()
            .iter()
            .zip(allowed)
            .map(|(v, &ok)| if ok { *v } else { v + MASK_SENTINEL })
            .collect();
        let out = ValueGrid::new(ga.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MaskedFill(a)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let ga = self.value(a);
        let (r, c) = ga.dims();
        let src = ga.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        self.push(grid(c, r, data), Op::Transpose(a))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ga = self.value(a);
        let (r, c) = ga.dims();
        if len == 0 || start + len > r {
            return Err(AutodiffError::Shape(format!(
                "slice_rows: rows {start}..{} out of {r}",
                start + len
            )));
        }
        let data = ga.data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(grid(len, c, data), Op::SliceRows(a, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Shape("concat_rows: no inputs".into()))?;
        let c = self.value(*first).dims().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let g = self.value(*p);
            let (r, pc) = g.dims();
            if pc != c {
                return Err(shape_err("concat_rows", self.value(*first), g));
            }
            data.extend_from_slice(g.data());
            rows += r;
        }
        Ok(self.push(grid(rows, c, data), Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let ga = self.value(a);
        let (r, c) = ga.dims();
        if len == 0 || start + len > c {
            return Err(AutodiffError::Shape(format!(
                "slice_cols: cols {start}..{} out of {c}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in ga.data().chunks_exact(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(grid(r, len, data), Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| AutodiffError::Shape("concat_cols: no inputs".into()))?;
        let r = self.value(*first).dims().0;
        let mut total = 0;
        for p in parts {
            let g = self.value(*p);
            if g.dims().0 != r {
                return Err(shape_err("concat_cols", self.value(*first), g));
            }
            total += g.dims().1;
        }
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(i));
            }
        }
        Ok(self.push(grid(r, total, data), Op::ConcatCols(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(ValueGrid::scalar(s), Op::Sum(a))
    }

    /// Mean of squared differences against a fixed target.
    pub fn mse(&mut self, a: Var, target: ValueGrid) -> Result<Var, AutodiffError> {
        let ga = self.value(a);
        if ga.dims() != target.dims() {
            return Err(shape_err("mse", ga, &target));
        }
        let n = ga.len() as f64;
        let s = ga
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(ValueGrid::scalar(s), Op::Mse(a, Rc::new(target))))
    }

    /// Fused multi-head causal attention over `q`, `k`, `v` (each `t x d`,
    /// heads laid out as contiguous column blocks). Rows are split into
    /// independent sequences of the given `segments` lengths.
    ///
    /// Numerically this is `softmax(masked_fill(Q_h K_h^T / sqrt(d_h))) V_h`
    /// per head with the causal mask; masked entries would receive weight
    /// `exp(MASK_SENTINEL - max) = 0`, so they are skipped outright.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[usize],
    ) -> Result<Var, AutodiffError> {
        let (gq, gk, gv) = (self.value(q), self.value(k), self.value(v));
        let (t, d) = gq.dims();
        if gk.dims() != (t, d) || gv.dims() != (t, d) {
            return Err(shape_err("causal_attention", gq, gk));
        }
        if heads == 0 || d % heads != 0 || segments.iter().sum::<usize>() != t || segments.contains(&0) {
            return Err(AutodiffError::Shape(format!(
                "causal_attention: {heads} heads over width {d}, segments {segments:?} over {t} rows"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (gq.data(), gk.data(), gv.data());
        let mut out = vec![0.0; t * d];
        let mut probs = Vec::with_capacity(heads * segments.iter().map(|l| l * (l + 1) / 2).sum::<usize>());
        let mut base = 0;
        for &len in segments {
            for h in 0..heads {
                let off = h * dh;
                let kt = head_columns(kd, d, base, len, off, dh);
                let vt = head_columns(vd, d, base, len, off, dh);
                let mut row = vec![0.0; len];
                for i in 0..len {
                    let scores = &mut row[..=i];
                    scores.fill(0.0);
                    let qi = &qd[(base + i) * d + off..(base + i) * d + off + dh];
                    for (c, &qc) in qi.iter().enumerate() {
                        axpy(qc * scale, &kt[c * len..c * len + i + 1], scores);
                    }
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for p in scores.iter_mut() {
                        *p = (*p - max).exp();
                        total += *p;
                    }
                    scores.iter_mut().for_each(|p| *p /= total);
                    let o = &mut out[(base + i) * d + off..(base + i) * d + off + dh];
                    for (c, oc) in o.iter_mut().enumerate() {
                        *oc = dot(scores, &vt[c * len..c * len + i + 1]);
                    }
                    probs.extend_from_slice(scores);
                }
            }
            base += len;
        }
        Ok(self.push(
            grid(t, d, out),
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                segments: segments.to_vec(),
                probs,
            },
        ))
    }

    /// Reverse sweep from the scalar `loss`, adding `dloss/dparam` into the
    /// `grad` buffers of every bound parameter.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<(), AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads, params);
        }
        Ok(())
    }

    fn backward_node(
        &self,
        i: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        params: &mut ParamSet,
    ) {
        let out = &self.values[i];
        match &self.ops[i] {
            Op::Constant => {}
            Op::Param(id) => {
                let p = params.get_mut(*id);
                p.grad.data_mut().iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            Op::MatMul(a, b) => {
                let (ga, gb) = (self.value(*a), self.value(*b));
                let (m, k) = ga.dims();
                let n = gb.dims().1;
                // dA = dC * B^T
                gemm_acc(m, n, k, g, false, gb.data(), true, accumulate(grads, *a, m * k));
                // dB = A^T * dC
                gemm_acc(k, m, n, ga.data(), true, g, false, accumulate(grads, *b, k * n));
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    let d = accumulate(grads, *v, g.len());
                    d.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
            }
            Op::AddRow(a, row) => {
                let c = out.dims().1;
                let d = accumulate(grads, *a, g.len());
                d.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                let d = accumulate(grads, *row, c);
                for chunk in g.chunks_exact(c) {
                    d.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let d = accumulate(grads, *a, g.len());
                for ((d, s), y) in d.iter_mut().zip(g).zip(vb) {
                    *d += s * y;
                }
                let d = accumulate(grads, *b, g.len());
                for ((d, s), x) in d.iter_mut().zip(g).zip(va) {
                    *d += s * x;
                }
            }
            Op::MulConst(a, f) => {
                let d = accumulate(grads, *a, g.len());
                for ((d, s), f) in d.iter_mut().zip(g).zip(f.iter()) {
                    *d += s * f;
                }
            }
            Op::Scale(a, s) => {
                let d = accumulate(grads, *a, g.len());
                d.iter_mut().zip(g).for_each(|(d, u)| *d += u * s);
            }
            Op::Tanh(a) => {
                let d = accumulate(grads, *a, g.len());
                for ((d, s), y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += s * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let d = accumulate(grads, *a, g.len());
                for ((d, s), y) in d.iter_mut().zip(g).zip(out.data()) {
                    if *y > 0.0 {
                        *d += s;
                    }
                }
            }
            Op::Softmax(a) => {
                let c = out.dims().1;
                let d = accumulate(grads, *a, g.len());
                for ((dr, gr), yr) in d
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(out.data().chunks_exact(c))
                {
                    let dot: f64 = gr.iter().zip(yr).map(|(s, y)| s * y).sum();
                    for ((d, s), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += y * (s - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = out.dims().1;
                let gains = self.value(*gain).data();
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let dx = accumulate(grads, *x, g.len());
                let mut dxhat = vec![0.0; c];
                for (row, ((dxr, gr), hr)) in dx
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(xhat.chunks_exact(c))
                    .enumerate()
                {
                    for j in 0..c {
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                        dxhat[j] = gr[j] * gains[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / c as f64;
                    let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dxr[j] += rstd[row] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                    }
                }
                let d = accumulate(grads, *gain, c);
                d.iter_mut().zip(&dgain).for_each(|(d, s)| *d += s);
                let d = accumulate(grads, *bias, c);
                d.iter_mut().zip(&dbias).for_each(|(d, s)| *d += s);
            }
            Op::MaskedFill(a) => {
                let d = accumulate(grads, *a, g.len());
                d.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims();
                let d = accumulate(grads, *a, g.len());
                // out is r x c, input is c x r
                for i in 0..r {
                    for j in 0..c {
                        d[j * r + i] += g[i * c + j];
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let src = self.value(*a);
                let c = src.dims().1;
                let d = accumulate(grads, *a, src.len());
                d[start * c..start * c + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, s)| *d += s);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    let d = accumulate(grads, *p, n);
                    d.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, s)| *d += s);
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let src = self.value(*a);
                let c = src.dims().1;
                let w = out.dims().1;
                let d = accumulate(grads, *a, src.len());
                for (dr, gr) in d.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                    dr[*start..start + w].iter_mut().zip(gr).for_each(|(d, s)| *d += s);
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.dims().1;
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.value(*p).dims();
                    let n = self.value(*p).len();
                    let d = accumulate(grads, *p, n);
                    for (dr, gr) in d.chunks_exact_mut(w).zip(g.chunks_exact(total)) {
                        dr.iter_mut().zip(&gr[offset..offset + w]).for_each(|(d, s)| *d += s);
                    }
                    offset += w;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let d = accumulate(grads, *a, n);
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            } => {
                let (t, d) = out.dims();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                );
                let mut dq = vec![0.0; t * d];
                let mut dk = vec![0.0; t * d];
                let mut dv = vec![0.0; t * d];
                let mut cursor = 0;
                let mut base = 0;
                for &len in segments {
                    for h in 0..*heads {
                        let off = h * dh;
                        let kt = head_columns(kd, d, base, len, off, dh);
                        let vt = head_columns(vd, d, base, len, off, dh);
                        let mut dkt = vec![0.0; dh * len];
                        let mut dvt = vec![0.0; dh * len];
                        let mut ds = vec![0.0; len];
                        for i in 0..len {
                            let p = &probs[cursor..cursor + i + 1];
                            cursor += i + 1;
                            let gi = &g[(base + i) * d + off..(base + i) * d + off + dh];
                            let dsi = &mut ds[..=i];
                            dsi.fill(0.0);
                            for (c, &gc) in gi.iter().enumerate() {
                                axpy(gc, &vt[c * len..c * len + i + 1], dsi);
                                axpy(gc, p, &mut dvt[c * len..c * len + i + 1]);
                            }
                            let total = dot(p, dsi);
                            for (d_s, pj) in dsi.iter_mut().zip(p) {
                                *d_s = pj * (*d_s - total) * scale;
                            }
                            let qi = &qd[(base + i) * d + off..(base + i) * d + off + dh];
                            let dqi = &mut dq[(base + i) * d + off..(base + i) * d + off + dh];
                            for c in 0..dh {
                                dqi[c] += dot(dsi, &kt[c * len..c * len + i + 1]);
                                axpy(qi[c], dsi, &mut dkt[c * len..c * len + i + 1]);
                            }
                        }
                        scatter_head_columns(&dkt, &mut dk, d, base, len, off, dh);
                        scatter_head_columns(&dvt, &mut dv, d, base, len, off, dh);
                    }
                    base += len;
                }
                for (var, src) in [(*q, dq), (*k, dk), (*v, dv)] {
                    let d = accumulate(grads, var, src.len());
                    d.iter_mut().zip(&src).for_each(|(d, s)| *d += s);
                }
            }
            Op::Mse(a, target) => {
                let va = self.value(*a).data();
                let scale = 2.0 * g[0] / va.len() as f64;
                let d = accumulate(grads, *a, va.len());
                for ((d, p), t) in d.iter_mut().zip(va).zip(target.data()) {
                    *d += scale * (p - t);
                }
            }
        }
    }
}
