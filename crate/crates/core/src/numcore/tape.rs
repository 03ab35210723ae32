//! Reverse-mode differentiation over a flat tape of matrix primitives.
//!
//! Every primitive stores its output value on the tape together with the
//! indices of its inputs. [`Tape::backward`] walks the tape once in reverse
//! and accumulates one gradient per bound parameter.

use super::matrix::{gemm, softmax_in_place, Matrix};
use super::params::{Gradients, ParamId, ParamStore};
use super::NumError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix, inv_std: Vec<f64> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    Gather { table: Var, rows: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, pad: Option<usize>, probs: Matrix, count: usize },
    SumSquares(Var),
    Sum(Vec<Var>),
    Attention { q: Var, k: Var, v: Var, shape: AttnShape, probs: Matrix },
}

/// Layout of a batched multi-head attention call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnShape {
    pub batch: usize,
    pub heads: usize,
    /// Query rows per batch item.
    pub q_len: usize,
    /// Key/value rows per batch item.
    pub kv_len: usize,
    pub causal: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
}

/// Parameters of a [`ParamStore`] bound as leaves of one tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }
}

const LN_EPS: f64 = 1e-5;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Constant)
    }

    /// Records every parameter of `store` as a differentiable leaf.
    pub fn bind(&mut self, store: &ParamStore) -> Bound {
        let vars = store
            .ids()
            .map(|id| self.push(store.get(id).clone(), Op::Param(id)))
            .collect();
        Bound { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(v, Op::MatMulBt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1×c` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (am, bm) = (self.value(a), self.value(bias));
        if bm.rows() != 1 || bm.cols() != am.cols() {
            return Err(NumError::Shape(format!(
                "add_row: bias {}x{} does not broadcast over {}x{}",
                bm.rows(),
                bm.cols(),
                am.rows(),
                am.cols()
            )));
        }
        let mut v = am.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(bm.data()) {
                *x += b;
            }
        }
        Ok(self.push(v, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Row-wise softmax. With `causal`, row `i` only spans columns `0..=i`
    /// and the remaining entries are exactly zero.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Result<Var, NumError> {
        let mut v = self.value(a).clone();
        if v.cols() == 0 {
            return Err(NumError::Domain("softmax of an empty row".into()));
        }
        if !v.is_finite() {
            return Err(NumError::Numeric("softmax input contains a non-finite value".into()));
        }
        let cols = v.cols();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let live = if causal { (r + 1).min(cols) } else { cols };
            softmax_in_place(&mut row[..live]);
            row[live..].iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(self.push(v, Op::Softmax(a)))
    }

    /// Per-row layer normalization with learned `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumError> {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        if self.value(gain).shape() != (1, cols) || self.value(bias).shape() != (1, cols) {
            return Err(NumError::Shape(format!("layer_norm: gain/bias must be 1x{cols}")));
        }
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xm.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (o, x) in xhat.row_mut(r).iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gi), bi) in out.row_mut(r).iter_mut().zip(g).zip(b) {
                *o = *o * gi + bi;
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let am = self.value(a);
        if start + len > am.cols() {
            return Err(NumError::Shape(format!(
                "slice_cols: columns {start}..{} out of range for {}x{}",
                start + len,
                am.rows(),
                am.cols()
            )));
        }
        let mut v = Matrix::zeros(am.rows(), len);
        for r in 0..am.rows() {
            v.row_mut(r).copy_from_slice(&am.row(r)[start..start + len]);
        }
        Ok(self.push(v, Op::SliceCols { x: a, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let rows = parts.first().map(|p| self.value(*p).rows()).unwrap_or(0);
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            return Err(NumError::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                let pm = self.value(*p);
                v.row_mut(r)[off..off + pm.cols()].copy_from_slice(pm.row(r));
                off += pm.cols();
            }
        }
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let cols = parts.first().map(|p| self.value(*p).cols()).unwrap_or(0);
        if parts.iter().any(|p| self.value(*p).cols() != cols) {
            return Err(NumError::Shape("concat_rows: column counts differ".into()));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let rows = data.len() / cols.max(1);
        let v = Matrix::from_vec(if cols == 0 { 0 } else { rows }, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Selects rows of `table` (embedding lookup); rows may repeat.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var, NumError> {
        let tm = self.value(table);
        if let Some(&bad) = rows.iter().find(|&&r| r >= tm.rows()) {
            return Err(NumError::Domain(format!(
                "row index {bad} out of range for table with {} rows",
                tm.rows()
            )));
        }
        let mut v = Matrix::zeros(rows.len(), tm.cols());
        for (i, &r) in rows.iter().enumerate() {
            v.row_mut(i).copy_from_slice(tm.row(r));
        }
        Ok(self.push(
            v,
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, skipping positions whose target equals `pad`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        pad: Option<usize>,
    ) -> Result<Var, NumError> {
        let lm = self.value(logits);
        if lm.rows() != targets.len() {
            return Err(NumError::Shape(format!(
                "cross_entropy: {} logit rows for {} targets",
                lm.rows(),
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= lm.cols()) {
            return Err(NumError::Domain(format!("target index {bad} out of range")));
        }
        if !lm.is_finite() {
            return Err(NumError::Numeric("non-finite logits".into()));
        }
        let mut probs = lm.clone();
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(r);
            softmax_in_place(row);
            if Some(t) != pad {
                total -= row[t].ln();
                count += 1;
            }
        }
        if count == 0 {
            return Err(NumError::Domain("cross_entropy: every target position is padding".into()));
        }
        let loss = Matrix::filled(1, 1, total / count as f64);
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                pad,
                probs,
                count,
            },
        ))
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).frobenius_sq();
        self.push(Matrix::filled(1, 1, s), Op::SumSquares(a))
    }

    /// Element-wise sum of equally shaped values.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = parts
            .first()
            .ok_or_else(|| NumError::Domain("sum of zero terms".into()))?;
        let mut v = self.value(*first).clone();
        for p in &parts[1..] {
            let pm = self.value(*p);
            if pm.shape() != v.shape() {
                return Err(NumError::Shape("sum: shapes differ".into()));
            }
            v.add_assign(pm);
        }
        Ok(self.push(v, Op::Sum(parts.to_vec())))
    }

    /// Scaled dot-product attention for a batch of independent items.
    ///
    /// `q` is `(batch·q_len)×(heads·d_h)` and `k`, `v` are
    /// `(batch·kv_len)×(heads·d_h)`; rows of item `b` are contiguous. Head
    /// `h` uses columns `h·d_h..(h+1)·d_h`. Output has the shape of `q`.
    /// With `causal` the query at position `t` sees keys `0..=t`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape) -> Result<Var, NumError> {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let AttnShape { batch, heads, q_len, kv_len, causal } = shape;
        if heads == 0 || kv_len == 0 || qm.cols() % heads != 0 {
            return Err(NumError::Shape(format!("attention: {} columns do not split into {heads} heads", qm.cols())));
        }
        if qm.rows() != batch * q_len
            || km.rows() != batch * kv_len
            || vm.shape() != km.shape()
            || km.cols() != qm.cols()
        {
            return Err(NumError::Shape(format!(
                "attention: q {}x{}, k {}x{}, v {}x{} do not match batch {batch}, q_len {q_len}, kv_len {kv_len}",
                qm.rows(),
                qm.cols(),
                km.rows(),
                km.cols(),
                vm.rows(),
                vm.cols()
            )));
        }
        if causal && q_len != kv_len {
            return Err(NumError::Shape("attention: causal masking needs q_len == kv_len".into()));
        }
        if !qm.is_finite() || !km.is_finite() {
            return Err(NumError::Numeric("attention input contains a non-finite value".into()));
        }
        let dh = qm.cols() / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = Matrix::zeros(batch * heads * q_len, kv_len);
        let mut out = Matrix::zeros(qm.rows(), qm.cols());
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dh;
                for t in 0..q_len {
                    let qrow = &qm.row(b * q_len + t)[c0..c0 + dh];
                    let live = if causal { t + 1 } else { kv_len };
                    let prow = probs.row_mut((b * heads + h) * q_len + t);
                    for (s, p) in prow[..live].iter_mut().enumerate() {
                        let krow = &km.row(b * kv_len + s)[c0..c0 + dh];
                        *p = scale * qrow.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax_in_place(&mut prow[..live]);
                    let orow = &mut out.row_mut(b * q_len + t)[c0..c0 + dh];
                    for (s, p) in prow[..live].iter().enumerate() {
                        let vrow = &vm.row(b * kv_len + s)[c0..c0 + dh];
                        for (o, x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        Ok(self.push(out, Op::Attention { q, k, v, shape, probs }))
    }

    /// Attention weights recorded by [`Tape::attention`]: row
    /// `(b·heads + h)·q_len + t` holds the distribution of query `t` of item
    /// `b` under head `h`.
    pub fn attention_weights(&self, out: Var) -> Option<&Matrix> {
        match &self.ops[out.0] {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Back-propagates from a `1×1` value. Returns one gradient per
    /// parameter of `store`, zero for parameters that were not bound or
    /// do not influence `loss`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients, NumError> {
        if self.value(loss).shape() != (1, 1) {
            return Err(NumError::Shape("backward requires a 1x1 loss".into()));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.values.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::zeros_like(store);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, am.shape());
                    gemm(&g, false, bm, true, ga, 1.0);
                    let gb = slot(&mut grads, *b, bm.shape());
                    gemm(am, true, &g, false, gb, 1.0);
                }
                Op::MatMulBt(a, b) => {
                    let (am, bm) = (self.value(*a), self.value(*b));
                    let ga = slot(&mut grads, *a, am.shape());
                    gemm(&g, false, bm, false, ga, 1.0);
                    let gb = slot(&mut grads, *b, bm.shape());
                    gemm(&g, true, am, false, gb, 1.0);
                }
                Op::Add(a, b) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    slot(&mut grads, *b, g.shape()).add_assign(&g);
                }
                Op::AddRow(a, bias) => {
                    slot(&mut grads, *a, g.shape()).add_assign(&g);
                    let gb = slot(&mut grads, *bias, (1, g.cols()));
                    for r in 0..g.rows() {
                        for (o, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = slot(&mut grads, *a, g.shape());
                    for (o, x) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += s * x;
                    }
                }
                Op::Relu(a) => {
                    let am = self.value(*a);
                    let ga = slot(&mut grads, *a, g.shape());
                    for ((o, x), inp) in ga.data_mut().iter_mut().zip(g.data()).zip(am.data()) {
                        if *inp > 0.0 {
                            *o += x;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let y = &self.values[i];
                    let gx = slot(&mut grads, *x, g.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yi), gi) in gx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += yi * (gi - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let gvec = self.value(*gain).data().to_vec();
                    let (rows, cols) = xhat.shape();
                    {
                        let gg = slot(&mut grads, *gain, (1, cols));
                        for r in 0..rows {
                            for ((o, d), xh) in gg.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                                *o += d * xh;
                            }
                        }
                    }
                    {
                        let gb = slot(&mut grads, *bias, (1, cols));
                        for r in 0..rows {
                            for (o, d) in gb.data_mut().iter_mut().zip(g.row(r)) {
                                *o += d;
                            }
                        }
                    }
                    let gx = slot(&mut grads, *x, (rows, cols));
                    let n = cols as f64;
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        for ((d, gi), gm) in dxhat.iter_mut().zip(g.row(r)).zip(&gvec) {
                            *d = gi * gm;
                        }
                        let xr = xhat.row(r);
                        let mean_d = dxhat.iter().sum::<f64>() / n;
                        let mean_dx = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, d), xh) in gx.row_mut(r).iter_mut().zip(&dxhat).zip(xr) {
                            *o += inv_std[r] * (d - mean_d - xh * mean_dx);
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let shape = self.value(*x).shape();
                    let gx = slot(&mut grads, *x, shape);
                    for r in 0..g.rows() {
                        for (o, v) in gx.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let shape = self.value(*p).shape();
                        let gp = slot(&mut grads, *p, shape);
                        for r in 0..g.rows() {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[off..off + shape.1]) {
                                *o += v;
                            }
                        }
                        off += shape.1;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let shape = self.value(*p).shape();
                        let n = shape.0 * shape.1;
                        let gp = slot(&mut grads, *p, shape);
                        for (o, v) in gp.data_mut().iter_mut().zip(&g.data()[off..off + n]) {
                            *o += v;
                        }
                        off += n;
                    }
                }
                Op::Transpose(a) => {
                    let gt = g.transpose();
                    slot(&mut grads, *a, gt.shape()).add_assign(&gt);
                }
                Op::Gather { table, rows } => {
                    let shape = self.value(*table).shape();
                    let gt = slot(&mut grads, *table, shape);
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, v) in gt.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, pad, probs, count } => {
                    let scale = g.data()[0] / *count as f64;
                    let gl = slot(&mut grads, *logits, probs.shape());
                    for (r, &t) in targets.iter().enumerate() {
                        if Some(t) == *pad {
                            continue;
                        }
                        for (c, (o, p)) in gl.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                            let onehot = if c == t { 1.0 } else { 0.0 };
                            *o += scale * (p - onehot);
                        }
                    }
                }
                Op::SumSquares(a) => {
                    let am = self.value(*a);
                    let s = 2.0 * g.data()[0];
                    let ga = slot(&mut grads, *a, am.shape());
                    for (o, x) in ga.data_mut().iter_mut().zip(am.data()) {
                        *o += s * x;
                    }
                }
                Op::Sum(parts) => {
                    for p in parts {
                        slot(&mut grads, *p, g.shape()).add_assign(&g);
                    }
                }
                Op::Attention { q, k, v, shape, probs } => {
                    let (gq, gk, gv) = self.attention_backward(*q, *k, *v, *shape, probs, &g);
                    slot(&mut grads, *q, gq.shape()).add_assign(&gq);
                    slot(&mut grads, *k, gk.shape()).add_assign(&gk);
                    slot(&mut grads, *v, gv.shape()).add_assign(&gv);
                }
            }
        }
        Ok(out)
    }
}

impl Tape {
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: &Matrix,
        g: &Matrix,
    ) -> (Matrix, Matrix, Matrix) {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let AttnShape { batch, heads, q_len, kv_len, causal } = shape;
        let dh = qm.cols() / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Matrix::zeros(qm.rows(), qm.cols());
        let mut gk = Matrix::zeros(km.rows(), km.cols());
        let mut gv = Matrix::zeros(vm.rows(), vm.cols());
        let mut ds = vec![0.0; kv_len];
        for b in 0..batch {
            for h in 0..heads {
                let c0 = h * dh;
                for t in 0..q_len {
                    let live = if causal { t + 1 } else { kv_len };
                    let prow = probs.row((b * heads + h) * q_len + t);
                    let grow = &g.row(b * q_len + t)[c0..c0 + dh];
                    // dP = dO·Vᵀ, then through the softmax
                    for (s, d) in ds[..live].iter_mut().enumerate() {
                        let vrow = &vm.row(b * kv_len + s)[c0..c0 + dh];
                        *d = grow.iter().zip(vrow).map(|(x, y)| x * y).sum();
                    }
                    let dot: f64 = ds[..live].iter().zip(prow).map(|(d, p)| d * p).sum();
                    for (d, p) in ds[..live].iter_mut().zip(prow) {
                        *d = p * (*d - dot) * scale;
                    }
                    for s in 0..live {
                        let p = prow[s];
                        let row = b * kv_len + s;
                        for (o, x) in gv.row_mut(row)[c0..c0 + dh].iter_mut().zip(grow) {
                            *o += p * x;
                        }
                        let qrow = &qm.row(b * q_len + t)[c0..c0 + dh];
                        for (o, x) in gk.row_mut(row)[c0..c0 + dh].iter_mut().zip(qrow) {
                            *o += ds[s] * x;
                        }
                        let krow = &km.row(row)[c0..c0 + dh];
                        for (o, x) in gq.row_mut(b * q_len + t)[c0..c0 + dh].iter_mut().zip(krow) {
                            *o += ds[s] * x;
                        }
                    }
                }
            }
        }
        (gq, gk, gv)
    }
}

fn slot(grads: &mut [Option<Matrix>], v: Var, shape: (usize, usize)) -> &mut Matrix {
    grads[v.0].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_twice_theta() {
        let mut store = ParamStore::new();
        let id = store.insert("theta", Matrix::row_vector(&[1.0, -2.0, 0.5])).unwrap();
        let mut tape = Tape::new();
        let b = tape.bind(&store);
        let loss = tape.sum_squares(b.var(id));
        let g = tape.backward(loss, &store).unwrap();
        assert_eq!(g.get(id).data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn causal_softmax_zeroes_future() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::filled(3, 3, 0.7));
        let y = tape.softmax_rows(x, true).unwrap();
        let ym = tape.value(y);
        assert_eq!(ym.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(ym.row(1), &[0.5, 0.5, 0.0]);
        assert!((ym.row(2).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attention_matches_tape_primitives() {
        use crate::numcore::grad_check;
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let q = store.insert("q", Matrix::xavier(6, 4, &mut rng)).unwrap();
        let k = store.insert("k", Matrix::xavier(6, 4, &mut rng)).unwrap();
        let v = store.insert("v", Matrix::xavier(6, 4, &mut rng)).unwrap();
        let shape = AttnShape { batch: 2, heads: 2, q_len: 3, kv_len: 3, causal: true };
        // reference: item 1, head 0 through softmax_rows
        let mut t = Tape::new();
        let bd = t.bind(&store);
        let out = t.attention(bd.var(q), bd.var(k), bd.var(v), shape).unwrap();
        let qs = t.gather_rows(bd.var(q), &[3, 4, 5]).unwrap();
        let ks = t.gather_rows(bd.var(k), &[3, 4, 5]).unwrap();
        let vs = t.gather_rows(bd.var(v), &[3, 4, 5]).unwrap();
        let (qh, kh, vh) = (t.slice_cols(qs, 0, 2).unwrap(), t.slice_cols(ks, 0, 2).unwrap(), t.slice_cols(vs, 0, 2).unwrap());
        let s = t.matmul_bt(qh, kh).unwrap();
        let s = t.scale(s, 1.0 / 2f64.sqrt());
        let p = t.softmax_rows(s, true).unwrap();
        let o = t.matmul(p, vh).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert!((t.value(out).get(3 + r, c) - t.value(o).get(r, c)).abs() < 1e-14);
            }
        }
        let w = t.attention_weights(out).unwrap();
        assert_eq!(w.row(6 * 1)[1..], [0.0, 0.0]);
        let report = grad_check(&store, 1e-6, 100, 1, |t, b| {
            let a = t.attention(b.var(q), b.var(k), b.var(v), shape)?;
            let a = t.relu(a);
            Ok(t.sum_squares(a))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn all_pad_targets_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 4));
        assert!(matches!(tape.cross_entropy(x, &[0, 0], Some(0)), Err(NumError::Domain(_))));
    }
}
