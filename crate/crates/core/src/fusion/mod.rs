//! Turns the query description, the LLM explanation and the LLM's ranked
//! candidates into one conditioning vector for the decoder.
//!
//! Token matrices are reduced to vectors by attention pooling. Two stacked
//! multi-head attention layers then mix them: the first fuses the
//! description (`org`) and explanation (`exp`) streams into `y_uni`, the
//! second fuses `y_uni` with the prediction embedding (`pred`) into
//! `y_cross`. Every layer attends over exactly two keys, one per stream,
//! and uses the sum of both streams' queries.
//!
//! All computation runs on a [`Tape`] so the same code serves training and
//! inference. The plain functions below build a throwaway tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingMatrix;
use crate::llmclient::LlmPrediction;
use crate::numcore::{AttnShape, Bound, Matrix, NumError, ParamId, ParamStore, Tape, Var};
use crate::smiles::symbol_tokens;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionDims {
    pub d: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Candidate slots in the prediction embedding.
    pub r: usize,
    /// Symbol vocabulary size.
    pub c: usize,
}

impl FusionDims {
    pub fn new(d: usize, heads: usize, head_dim: usize, r: usize, c: usize) -> Result<Self, FusionError> {
        if d == 0 || heads == 0 || head_dim == 0 || r == 0 || c == 0 {
            return Err(FusionError::Config("fusion dimensions must be positive".into()));
        }
        if heads * head_dim != d {
            return Err(FusionError::Config(format!(
                "heads × head_dim must equal d ({heads} × {head_dim} != {d})"
            )));
        }
        Ok(Self { d, heads, head_dim, r, c })
    }
}

/// Ablation switches. `drop_exp` and `drop_org` cannot both be set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub drop_exp: bool,
    pub drop_org: bool,
    /// `y_cross` is `y_uni`. Also the unimodal setting used for mol2text.
    pub drop_pred: bool,
    /// Both attention layers become affine maps of the concatenated inputs.
    pub linear_fuse: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation { drop_exp: false, drop_org: false, drop_pred: false, linear_fuse: false };

    pub fn validate(self) -> Result<Self, FusionError> {
        if self.drop_exp && self.drop_org {
            return Err(FusionError::Config("drop_exp and drop_org together leave no text stream".into()));
        }
        Ok(self)
    }

    /// The full model followed by the four single-switch variants.
    pub fn variants() -> [Ablation; 5] {
        let f = Ablation::FULL;
        [
            f,
            Ablation { drop_exp: true, ..f },
            Ablation { drop_org: true, ..f },
            Ablation { drop_pred: true, ..f },
            Ablation { linear_fuse: true, ..f },
        ]
    }

    pub fn label(self) -> String {
        let mut parts = Vec::new();
        if self.drop_exp {
            parts.push("w/o y_exp");
        }
        if self.drop_org {
            parts.push("w/o y_org");
        }
        if self.drop_pred {
            parts.push("w/o y_pred");
        }
        if self.linear_fuse {
            parts.push("w/o HMHA");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join(", ")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Org,
    Exp,
    Pred,
    Uni,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Org, Stream::Exp, Stream::Pred, Stream::Uni];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Org => "org",
            Stream::Exp => "exp",
            Stream::Pred => "pred",
            Stream::Uni => "uni",
        }
    }
}

/// Query, key and value projections of one stream. Each is `d × (H·d_h)`;
/// columns `h·d_h..(h+1)·d_h` hold head `h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

/// Handles to the fusion blocks inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusionParams {
    pub dims: FusionDims,
    /// Pooling vector of the explanation stream.
    pub u: ParamId,
    /// Pooling vector of the description stream.
    pub v: ParamId,
    streams: [StreamIds; 4],
    pub o_uni: ParamId,
    pub o_cross: ParamId,
    pub w_pred: ParamId,
    pub lin1_w: ParamId,
    pub lin1_b: ParamId,
    pub lin2_w: ParamId,
    pub lin2_b: ParamId,
}

fn block_shapes(dims: &FusionDims) -> Vec<(String, usize, usize)> {
    let FusionDims { d, heads, head_dim, r, c } = *dims;
    let hd = heads * head_dim;
    let mut v = vec![("fusion.u".to_string(), 1, d), ("fusion.v".to_string(), 1, d)];
    for s in Stream::ALL {
        for w in ["wq", "wk", "wv"] {
            v.push((format!("fusion.{}.{w}", s.name()), d, hd));
        }
    }
    v.push(("fusion.o_uni".into(), hd, d));
    v.push(("fusion.o_cross".into(), hd, d));
    v.push(("fusion.w_pred".into(), r * c, d));
    v.push(("fusion.lin1.w".into(), 2 * d, d));
    v.push(("fusion.lin1.b".into(), 1, d));
    v.push(("fusion.lin2.w".into(), 2 * d, d));
    v.push(("fusion.lin2.b".into(), 1, d));
    v
}

impl FusionParams {
    /// Registers freshly initialized blocks in `store`: Xavier matrices,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, dims: FusionDims, rng: &mut R) -> Result<Self, FusionError> {
        for (name, rows, cols) in block_shapes(&dims) {
            let m = if name.ends_with(".b") { Matrix::zeros(rows, cols) } else { Matrix::xavier(rows, cols, rng) };
            store.insert(name, m)?;
        }
        Self::attach(store, dims)
    }

    /// Looks up existing blocks by name and checks their shapes.
    pub fn attach(store: &ParamStore, dims: FusionDims) -> Result<Self, FusionError> {
        let mut ids = Vec::new();
        for (name, rows, cols) in block_shapes(&dims) {
            let id = store
                .id(&name)
                .ok_or_else(|| FusionError::Shape(format!("missing parameter block {name}")))?;
            let shape = store.get(id).shape();
            if shape != (rows, cols) {
                return Err(FusionError::Shape(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    shape.0, shape.1
                )));
            }
            ids.push(id);
        }
        let s = |i: usize| StreamIds { wq: ids[2 + 3 * i], wk: ids[3 + 3 * i], wv: ids[4 + 3 * i] };
        Ok(Self {
            dims,
            u: ids[0],
            v: ids[1],
            streams: [s(0), s(1), s(2), s(3)],
            o_uni: ids[14],
            o_cross: ids[15],
            w_pred: ids[16],
            lin1_w: ids[17],
            lin1_b: ids[18],
            lin2_w: ids[19],
            lin2_b: ids[20],
        })
    }

    pub fn stream(&self, s: Stream) -> StreamIds {
        self.streams[s as usize]
    }

    pub fn block_names(&self) -> Vec<String> {
        block_shapes(&self.dims).into_iter().map(|(n, _, _)| n).collect()
    }
}

/// Inputs for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionExample {
    /// Token embeddings of the query text, `m × d`.
    pub org: Matrix,
    /// Token embeddings of the LLM explanation, `n × d`.
    pub exp: Matrix,
    /// Multi-hot candidate indicator of length `R·C`.
    pub pred: Vec<f64>,
}

impl FusionExample {
    pub fn new(org: &EmbeddingMatrix, exp: &EmbeddingMatrix, pred: Vec<f64>) -> Self {
        Self { org: org.matrix().clone(), exp: exp.matrix().clone(), pred }
    }
}

/// Pools `tokens` (`m × d`) with weights `softmax(tokens · wᵀ)`. Returns
/// the `1 × d` pooled row and the `1 × m` weights.
pub fn pool_on_tape(tape: &mut Tape, tokens: Var, w: Var) -> Result<(Var, Var), FusionError> {
    let (m, d) = tape.value(tokens).shape();
    if m == 0 {
        return Err(FusionError::Shape("cannot pool zero tokens".into()));
    }
    if tape.value(w).shape() != (1, d) {
        let (r, c) = tape.value(w).shape();
        return Err(FusionError::Shape(format!("pooling vector is {r}x{c}, tokens have d = {d}")));
    }
    let logits = tape.matmul_bt(w, tokens)?;
    let alpha = tape.softmax_rows(logits, false)?;
    let pooled = tape.matmul(alpha, tokens)?;
    Ok((pooled, alpha))
}

/// One attention layer over a batch. `a` and `b` are `batch × d`; when `b`
/// is absent the layer attends over `a`'s own key alone. Returns the
/// projected output and the attention op (for its weights).
fn mha_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    heads: usize,
    a: (Var, StreamIds),
    b: Option<(Var, StreamIds)>,
    w_o: ParamId,
) -> Result<(Var, Var), FusionError> {
    let batch = tape.value(a.0).rows();
    let proj = |tape: &mut Tape, x: Var, w: ParamId| tape.matmul(x, bound.var(w));
    let qa = proj(tape, a.0, a.1.wq)?;
    let ka = proj(tape, a.0, a.1.wk)?;
    let va = proj(tape, a.0, a.1.wv)?;
    let (q, k, v, kv_len) = match b {
        None => (qa, ka, va, 1),
        Some((bx, bs)) => {
            if tape.value(bx).rows() != batch {
                return Err(FusionError::Shape("stream batch sizes differ".into()));
            }
            let qb = proj(tape, bx, bs.wq)?;
            let kb = proj(tape, bx, bs.wk)?;
            let vb = proj(tape, bx, bs.wv)?;
            let q = tape.add(qa, qb)?;
            // rows [a_0, b_0, a_1, b_1, ...] so each item owns two keys
            let order: Vec<usize> = (0..batch).flat_map(|i| [i, batch + i]).collect();
            let k = tape.concat_rows(&[ka, kb])?;
            let k = tape.gather_rows(k, &order)?;
            let v = tape.concat_rows(&[va, vb])?;
            let v = tape.gather_rows(v, &order)?;
            (q, k, v, 2)
        }
    };
    let attn = tape.attention(q, k, v, AttnShape { batch, heads, q_len: 1, kv_len, causal: false })?;
    let out = tape.matmul(attn, bound.var(w_o))?;
    Ok((out, attn))
}

fn affine_pair(tape: &mut Tape, bound: &Bound, x: Var, y: Var, w: ParamId, b: ParamId) -> Result<Var, FusionError> {
    let xy = tape.concat_cols(&[x, y])?;
    let h = tape.matmul(xy, bound.var(w))?;
    Ok(tape.add_row(h, bound.var(b))?)
}

/// Tape handles produced by [`cross_modal_on_tape`]. `layer1`/`layer2`
/// are attention ops and are absent under `linear_fuse` (and `layer2`
/// under `drop_pred`).
#[derive(Clone, Copy, Debug)]
pub struct CrossModalVars {
    pub y_uni: Var,
    pub y_cross: Var,
    pub layer1: Option<Var>,
    pub layer2: Option<Var>,
}

/// Both fusion layers on `batch × d` stream inputs.
pub fn cross_modal_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    params: &FusionParams,
    y_org: Var,
    y_exp: Var,
    y_pred: Var,
    ablation: Ablation,
) -> Result<CrossModalVars, FusionError> {
    let ablation = ablation.validate()?;
    let d = params.dims.d;
    for (name, x) in [("y_org", y_org), ("y_exp", y_exp), ("y_pred", y_pred)] {
        if tape.value(x).cols() != d {
            return Err(FusionError::Shape(format!("{name} has {} columns, expected {d}", tape.value(x).cols())));
        }
    }
    let heads = params.dims.heads;
    let org = (y_org, params.stream(Stream::Org));
    let exp = (y_exp, params.stream(Stream::Exp));

    if ablation.linear_fuse {
        let zeros = |tape: &mut Tape, like: Var| {
            let (r, c) = tape.value(like).shape();
            tape.constant(Matrix::zeros(r, c))
        };
        let o = if ablation.drop_org { zeros(tape, y_org) } else { y_org };
        let e = if ablation.drop_exp { zeros(tape, y_exp) } else { y_exp };
        let y_uni = affine_pair(tape, bound, o, e, params.lin1_w, params.lin1_b)?;
        let y_cross = if ablation.drop_pred {
            y_uni
        } else {
            affine_pair(tape, bound, y_uni, y_pred, params.lin2_w, params.lin2_b)?
        };
        return Ok(CrossModalVars { y_uni, y_cross, layer1: None, layer2: None });
    }

    let (y_uni, l1) = match (ablation.drop_org, ablation.drop_exp) {
        (false, false) => mha_on_tape(tape, bound, heads, org, Some(exp), params.o_uni)?,
        (true, _) => mha_on_tape(tape, bound, heads, exp, None, params.o_uni)?,
        (_, true) => mha_on_tape(tape, bound, heads, org, None, params.o_uni)?,
    };
    if ablation.drop_pred {
        return Ok(CrossModalVars { y_uni, y_cross: y_uni, layer1: Some(l1), layer2: None });
    }
    let uni = (y_uni, params.stream(Stream::Uni));
    let pred = (y_pred, params.stream(Stream::Pred));
    let (y_cross, l2) = mha_on_tape(tape, bound, heads, uni, Some(pred), params.o_cross)?;
    Ok(CrossModalVars { y_uni, y_cross, layer1: Some(l1), layer2: Some(l2) })
}

/// Tape handles for a batch run through [`forward_on_tape`]; every `y_*`
/// is `batch × d` with one row per example.
#[derive(Clone, Debug)]
pub struct FusionVars {
    pub y_org: Var,
    pub y_exp: Var,
    pub y_pred: Var,
    pub y_uni: Var,
    pub y_cross: Var,
    pub layer1: Option<Var>,
    pub layer2: Option<Var>,
    /// Per example: pooling weights of the description and explanation.
    pub pool_weights: Vec<(Var, Var)>,
}

/// Pooling, prediction embedding and both fusion layers for a batch.
pub fn forward_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    params: &FusionParams,
    batch: &[FusionExample],
    ablation: Ablation,
) -> Result<FusionVars, FusionError> {
    if batch.is_empty() {
        return Err(FusionError::Shape("empty batch".into()));
    }
    let rc = params.dims.r * params.dims.c;
    let mut orgs = Vec::with_capacity(batch.len());
    let mut exps = Vec::with_capacity(batch.len());
    let mut pool_weights = Vec::with_capacity(batch.len());
    let mut pred = Matrix::zeros(batch.len(), rc);
    for (i, ex) in batch.iter().enumerate() {
        if ex.pred.len() != rc {
            return Err(FusionError::Shape(format!("prediction indicator has length {}, expected {rc}", ex.pred.len())));
        }
        pred.row_mut(i).copy_from_slice(&ex.pred);
        let org = tape.constant(ex.org.clone());
        let exp = tape.constant(ex.exp.clone());
        let (yo, wo) = pool_on_tape(tape, org, bound.var(params.v))?;
        let (ye, we) = pool_on_tape(tape, exp, bound.var(params.u))?;
        orgs.push(yo);
        exps.push(ye);
        pool_weights.push((wo, we));
    }
    let y_org = tape.concat_rows(&orgs)?;
    let y_exp = tape.concat_rows(&exps)?;
    let pred = tape.constant(pred);
    let y_pred = tape.matmul(pred, bound.var(params.w_pred))?;
    let cm = cross_modal_on_tape(tape, bound, params, y_org, y_exp, y_pred, ablation)?;
    Ok(FusionVars {
        y_org,
        y_exp,
        y_pred,
        y_uni: cm.y_uni,
        y_cross: cm.y_cross,
        layer1: cm.layer1,
        layer2: cm.layer2,
        pool_weights,
    })
}

/// Attention weights of one head in one layer, for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub layer: u8,
    pub head: usize,
    /// One weight per key; two keys unless a text stream was dropped.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionOutput {
    pub y_org: Vec<f64>,
    pub y_exp: Vec<f64>,
    pub y_pred: Vec<f64>,
    pub y_uni: Vec<f64>,
    pub y_cross: Vec<f64>,
    pub attention_trace: Vec<AttentionRecord>,
}

/// Attention records of batch item `item` from the layers in `vars`.
pub fn attention_trace(tape: &Tape, layers: [Option<Var>; 2], item: usize, heads: usize) -> Vec<AttentionRecord> {
    let mut out = Vec::new();
    for (layer, op) in layers.iter().enumerate() {
        let Some(w) = op.and_then(|v| tape.attention_weights(v)) else { continue };
        for head in 0..heads {
            out.push(AttentionRecord {
                layer: layer as u8 + 1,
                head,
                weights: w.row(item * heads + head).to_vec(),
            });
        }
    }
    out
}

fn row_of(tape: &Tape, v: Var, r: usize) -> Vec<f64> {
    tape.value(v).row(r).to_vec()
}

fn check_len(name: &str, x: &[f64], d: usize) -> Result<(), FusionError> {
    if x.len() != d {
        return Err(FusionError::Shape(format!("{name} has length {}, expected {d}", x.len())));
    }
    Ok(())
}

/// Attention pooling of token rows with pooling vector `w`.
pub fn pool(tokens: &EmbeddingMatrix, w: &[f64]) -> Result<Vec<f64>, FusionError> {
    Ok(pool_with_weights(tokens.matrix(), w)?.0)
}

/// Pooled vector and the weights that produced it.
pub fn pool_with_weights(tokens: &Matrix, w: &[f64]) -> Result<(Vec<f64>, Vec<f64>), FusionError> {
    check_len("pooling vector", w, tokens.cols())?;
    let mut tape = Tape::new();
    let t = tape.constant(tokens.clone());
    let w = tape.constant(Matrix::row_vector(w));
    let (p, a) = pool_on_tape(&mut tape, t, w)?;
    Ok((row_of(&tape, p, 0), row_of(&tape, a, 0)))
}

/// Multi-hot indicator of the first `r` candidates: slot `i` has a one at
/// every vocabulary symbol occurring in candidate `i`. Returns the
/// `r·|vocab|` vector and the number of symbols missing from `vocab`.
pub fn prediction_indicator(candidates: &[String], vocab: &[String], r: usize) -> (Vec<f64>, usize) {
    let c = vocab.len();
    let mut out = vec![0.0; r * c];
    let mut oov = 0;
    for (slot, cand) in candidates.iter().take(r).enumerate() {
        for sym in symbol_tokens(cand) {
            match vocab.iter().position(|v| v == sym) {
                Some(j) => out[slot * c + j] = 1.0,
                None => oov += 1,
            }
        }
    }
    (out, oov)
}

/// Prediction embedding: the candidate indicator mapped through `w_pred`
/// (`R·C × d`, so `R = rows / |vocab|`). Also returns the out-of-vocabulary
/// symbol count.
pub fn encode_predictions(
    prediction: &LlmPrediction,
    vocab: &[String],
    w_pred: &Matrix,
) -> Result<(Vec<f64>, usize), FusionError> {
    if vocab.is_empty() || w_pred.rows() % vocab.len() != 0 {
        return Err(FusionError::Shape(format!(
            "W_pred has {} rows, not a multiple of the vocabulary size {}",
            w_pred.rows(),
            vocab.len()
        )));
    }
    let r = w_pred.rows() / vocab.len();
    let (ind, oov) = prediction_indicator(&prediction.ranked_smiles, vocab, r);
    let y = Matrix::row_vector(&ind).matmul(w_pred)?;
    Ok((y.into_vec(), oov))
}

/// One fusion layer on single vectors: `a` and `b` are the two streams,
/// `streams` names their projection sets and `w_o` the output projection.
pub fn mha_fuse(
    a: &[f64],
    b: &[f64],
    store: &ParamStore,
    params: &FusionParams,
    streams: (Stream, Stream),
    w_o: ParamId,
) -> Result<(Vec<f64>, Vec<AttentionRecord>), FusionError> {
    let d = params.dims.d;
    check_len("a", a, d)?;
    check_len("b", b, d)?;
    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let av = tape.constant(Matrix::row_vector(a));
    let bv = tape.constant(Matrix::row_vector(b));
    let (out, attn) = mha_on_tape(
        &mut tape,
        &bound,
        params.dims.heads,
        (av, params.stream(streams.0)),
        Some((bv, params.stream(streams.1))),
        w_o,
    )?;
    let trace = attention_trace(&tape, [Some(attn), None], 0, params.dims.heads);
    Ok((row_of(&tape, out, 0), trace))
}

/// Both fusion layers on single stream vectors.
pub fn cross_modal(
    y_org: &[f64],
    y_exp: &[f64],
    y_pred: &[f64],
    store: &ParamStore,
    params: &FusionParams,
    ablation: Ablation,
) -> Result<FusionOutput, FusionError> {
    let d = params.dims.d;
    check_len("y_org", y_org, d)?;
    check_len("y_exp", y_exp, d)?;
    check_len("y_pred", y_pred, d)?;
    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let o = tape.constant(Matrix::row_vector(y_org));
    let e = tape.constant(Matrix::row_vector(y_exp));
    let p = tape.constant(Matrix::row_vector(y_pred));
    let cm = cross_modal_on_tape(&mut tape, &bound, params, o, e, p, ablation)?;
    Ok(FusionOutput {
        y_org: y_org.to_vec(),
        y_exp: y_exp.to_vec(),
        y_pred: y_pred.to_vec(),
        y_uni: row_of(&tape, cm.y_uni, 0),
        y_cross: row_of(&tape, cm.y_cross, 0),
        attention_trace: attention_trace(&tape, [cm.layer1, cm.layer2], 0, params.dims.heads),
    })
}

/// Full fusion of one example, pooling included.
pub fn fuse_example(
    ex: &FusionExample,
    store: &ParamStore,
    params: &FusionParams,
    ablation: Ablation,
) -> Result<FusionOutput, FusionError> {
    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let fv = forward_on_tape(&mut tape, &bound, params, std::slice::from_ref(ex), ablation)?;
    Ok(FusionOutput {
        y_org: row_of(&tape, fv.y_org, 0),
        y_exp: row_of(&tape, fv.y_exp, 0),
        y_pred: row_of(&tape, fv.y_pred, 0),
        y_uni: row_of(&tape, fv.y_uni, 0),
        y_cross: row_of(&tape, fv.y_cross, 0),
        attention_trace: attention_trace(&tape, [fv.layer1, fv.layer2], 0, params.dims.heads),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(d: usize, heads: usize, r: usize, c: usize, seed: u64) -> (ParamStore, FusionParams) {
        let mut store = ParamStore::new();
        let dims = FusionDims::new(d, heads, d / heads, r, c).unwrap();
        let p = FusionParams::init(&mut store, dims, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (store, p)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn random_example(rng: &mut ChaCha8Rng, d: usize, rc: usize) -> FusionExample {
        let m = rng.gen_range(1..6);
        let n = rng.gen_range(1..6);
        let org = Matrix::from_vec(m, d, random_vec(rng, m * d)).unwrap();
        let exp = Matrix::from_vec(n, d, random_vec(rng, n * d)).unwrap();
        let pred = (0..rc).map(|_| f64::from(rng.gen_bool(0.3) as u8)).collect();
        FusionExample { org, exp, pred }
    }

    #[test]
    fn dims_validated() {
        assert!(FusionDims::new(128, 4, 32, 4, 40).is_ok());
        assert!(matches!(FusionDims::new(128, 4, 16, 4, 40), Err(FusionError::Config(_))));
        assert!(FusionDims::new(8, 0, 8, 4, 4).is_err());
    }

    #[test]
    fn pool_single_token_is_identity() {
        let m = Matrix::row_vector(&[0.3, -2.0, 5.0]);
        let (y, w) = pool_with_weights(&m, &[10.0, 1.0, -3.0]).unwrap();
        assert_eq!(w, [1.0]);
        assert_eq!(y, [0.3, -2.0, 5.0]);
    }

    #[test]
    fn pool_identical_rows() {
        let m = Matrix::from_rows(&[vec![1.5, -0.5], vec![1.5, -0.5], vec![1.5, -0.5]]).unwrap();
        let (y, _) = pool_with_weights(&m, &[0.7, 3.0]).unwrap();
        for (a, b) in y.iter().zip([1.5, -0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn pool_hand_fixture() {
        // rows (1,0), (0,1), (2,2) with w = (1,0): logits 1, 0, 2
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let (y, w) = pool_with_weights(&m, &[1.0, 0.0]).unwrap();
        let z = 1f64.exp() + 1.0 + 2f64.exp();
        let expect_w = [1f64.exp() / z, 1.0 / z, 2f64.exp() / z];
        for (a, b) in w.iter().zip(expect_w) {
            assert!((a - b).abs() < 1e-15);
        }
        let expect_y = [expect_w[0] + 2.0 * expect_w[2], expect_w[1] + 2.0 * expect_w[2]];
        for (a, b) in y.iter().zip(expect_y) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(pool_with_weights(&m, &[1.0]).is_err());
    }

    #[test]
    fn indicator_bags_symbols() {
        let vocab: Vec<String> = ["C", "O", "="].iter().map(|s| s.to_string()).collect();
        let (ind, oov) = prediction_indicator(&["CC".to_string()], &vocab, 1);
        assert_eq!(ind, [1.0, 0.0, 0.0]);
        assert_eq!(oov, 0);
        let (ind, oov) = prediction_indicator(&["CO".into(), "C".into(), "N".into()], &vocab, 2);
        assert_eq!(ind, [1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(oov, 0);
        let (_, oov) = prediction_indicator(&["CN#N".into()], &vocab, 1);
        assert_eq!(oov, 3);
    }

    #[test]
    fn encode_predictions_hand_fixture() {
        let vocab: Vec<String> = ["C", "O", "="].iter().map(|s| s.to_string()).collect();
        let pred = LlmPrediction {
            ranked_smiles: vec!["CO".into(), "C".into()],
            explanation: String::new(),
            raw: String::new(),
            provider_id: String::new(),
        };
        // 6×2 fixture: column 0 weights 1..6, column 1 all ones
        let w = Matrix::from_rows(&(1..=6).map(|i| vec![i as f64, 1.0]).collect::<Vec<_>>()).unwrap();
        let (y, _) = encode_predictions(&pred, &vocab, &w).unwrap();
        // indicator [1,1,0,1,0,0] → (1+2+4, 3)
        assert_eq!(y, [7.0, 3.0]);
        let (y, _) = encode_predictions(&pred, &vocab, &Matrix::zeros(6, 2)).unwrap();
        assert_eq!(y, [0.0, 0.0]);
        assert!(encode_predictions(&pred, &vocab, &Matrix::zeros(5, 2)).is_err());
    }

    #[test]
    fn symmetric_keys_split_evenly() {
        let (mut store, p) = model(8, 2, 2, 3, 1);
        // shared key and value weights for org and exp, a = b
        for w in ["wk", "wv"] {
            let m = store.by_name(&format!("fusion.org.{w}")).unwrap().clone();
            *store.get_mut(store.id(&format!("fusion.exp.{w}")).unwrap()) = m;
        }
        let a: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let (y, trace) = mha_fuse(&a, &a, &store, &p, (Stream::Org, Stream::Exp), p.o_uni).unwrap();
        assert_eq!(trace.len(), 2);
        for t in &trace {
            assert_eq!(t.weights, [0.5, 0.5]);
        }
        // output is V_a projected
        let va = Matrix::row_vector(&a).matmul(store.get(p.stream(Stream::Org).wv)).unwrap();
        let expect = va.matmul(store.get(p.o_uni)).unwrap();
        for (x, e) in y.iter().zip(expect.data()) {
            assert!((x - e).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_logit_shift_keeps_weights() {
        let (mut store, p) = model(4, 1, 1, 2, 2);
        let a = [0.2, -0.4, 0.9, 0.1];
        let b = [-0.3, 0.5, 0.2, 0.7];
        let (_, before) = mha_fuse(&a, &b, &store, &p, (Stream::Org, Stream::Exp), p.o_uni).unwrap();
        // add c·eᵀ to both key maps where a·c = b·c = 1: each key gains the
        // same vector e, shifting both logits by q·e
        let c = {
            // solve for c in span{a,b}: [a·a a·b; b·a b·b] x = [1;1]
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
            let (aa, ab, bb) = (dot(&a, &a), dot(&a, &b), dot(&b, &b));
            let det = aa * bb - ab * ab;
            let (x, y) = ((bb - ab) / det, (aa - ab) / det);
            (0..4).map(|i| x * a[i] + y * b[i]).collect::<Vec<_>>()
        };
        let e = [0.8, -1.1, 0.3, 2.0];
        for s in ["org", "exp"] {
            let id = store.id(&format!("fusion.{s}.wk")).unwrap();
            let m = store.get_mut(id);
            for i in 0..4 {
                for j in 0..4 {
                    let v = m.get(i, j) + c[i] * e[j];
                    m.set(i, j, v);
                }
            }
        }
        let (_, after) = mha_fuse(&a, &b, &store, &p, (Stream::Org, Stream::Exp), p.o_uni).unwrap();
        for (x, y) in before[0].weights.iter().zip(&after[0].weights) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn fill(store: &mut ParamStore, name: &str, f: impl Fn(usize, usize) -> f64) {
        let id = store.id(name).unwrap();
        let m = store.get_mut(id);
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                m.set(i, j, f(i, j));
            }
        }
    }

    #[test]
    fn scalar_oracle_d4_h1() {
        // d = 4, one head of width 4, weights from closed-form formulas so
        // the reference below can recompute everything with scalar loops
        let (mut store, p) = model(4, 1, 1, 1, 0);
        let f = |k: f64| move |i: usize, j: usize| ((i * 4 + j) as f64 * 0.13 + k).sin() * 0.5;
        let names = [
            ("fusion.org.wq", 0.1),
            ("fusion.org.wk", 0.2),
            ("fusion.org.wv", 0.3),
            ("fusion.exp.wq", 0.4),
            ("fusion.exp.wk", 0.5),
            ("fusion.exp.wv", 0.6),
            ("fusion.o_uni", 0.7),
        ];
        for (n, k) in names {
            fill(&mut store, n, f(k));
        }
        let a = [0.5, -1.0, 0.25, 2.0];
        let b = [-0.75, 0.1, 1.5, -0.2];
        let (y, trace) = mha_fuse(&a, &b, &store, &p, (Stream::Org, Stream::Exp), p.o_uni).unwrap();

        let vm = |x: &[f64; 4], k: f64| -> [f64; 4] {
            let w = f(k);
            let mut o = [0.0; 4];
            for (j, oj) in o.iter_mut().enumerate() {
                for (i, xi) in x.iter().enumerate() {
                    *oj += xi * w(i, j);
                }
            }
            o
        };
        let (qa, ka, va) = (vm(&a, 0.1), vm(&a, 0.2), vm(&a, 0.3));
        let (qb, kb, vb) = (vm(&b, 0.4), vm(&b, 0.5), vm(&b, 0.6));
        let q: Vec<f64> = (0..4).map(|i| qa[i] + qb[i]).collect();
        let la: f64 = (0..4).map(|i| q[i] * ka[i]).sum::<f64>() / 2.0;
        let lb: f64 = (0..4).map(|i| q[i] * kb[i]).sum::<f64>() / 2.0;
        let wa = 1.0 / (1.0 + (lb - la).exp());
        let wb = 1.0 - wa;
        let o: [f64; 4] = std::array::from_fn(|i| wa * va[i] + wb * vb[i]);
        let expect = vm(&o, 0.7);
        assert!((trace[0].weights[0] - wa).abs() < 1e-12);
        assert!((trace[0].weights[1] - wb).abs() < 1e-12);
        for (x, e) in y.iter().zip(expect) {
            assert!((x - e).abs() < 1e-12, "{x} vs {e}");
        }
    }

    #[test]
    fn trace_layers_and_ablations() {
        let (store, p) = model(8, 2, 2, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (o, e, q) = (random_vec(&mut rng, 8), random_vec(&mut rng, 8), random_vec(&mut rng, 8));
        let full = cross_modal(&o, &e, &q, &store, &p, Ablation::FULL).unwrap();
        assert_eq!(full.attention_trace.len(), 4);
        for t in &full.attention_trace {
            assert_eq!(t.weights.len(), 2);
            assert!((t.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let dp = cross_modal(&o, &e, &q, &store, &p, Ablation { drop_pred: true, ..Ablation::FULL }).unwrap();
        assert_eq!(dp.y_cross, dp.y_uni);
        assert_eq!(dp.y_uni, full.y_uni);
        for v in Ablation::variants().into_iter().skip(1) {
            let out = cross_modal(&o, &e, &q, &store, &p, v).unwrap();
            assert_ne!(out.y_cross, full.y_cross, "{}", v.label());
        }
        let de = cross_modal(&o, &e, &q, &store, &p, Ablation { drop_exp: true, ..Ablation::FULL }).unwrap();
        assert_eq!(de.attention_trace[0].weights, [1.0]);
        let both = Ablation { drop_exp: true, drop_org: true, ..Ablation::FULL };
        assert!(matches!(cross_modal(&o, &e, &q, &store, &p, both), Err(FusionError::Config(_))));
        let labels: Vec<String> = Ablation::variants().iter().map(|a| a.label()).collect();
        assert_eq!(labels, ["full", "w/o y_exp", "w/o y_org", "w/o y_pred", "w/o HMHA"]);
    }

    #[test]
    fn batch_matches_single_examples() {
        let (store, p) = model(8, 2, 2, 3, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch: Vec<FusionExample> = (0..5).map(|_| random_example(&mut rng, 8, 6)).collect();
        let mut tape = Tape::new();
        let bound = tape.bind(&store);
        let fv = forward_on_tape(&mut tape, &bound, &p, &batch, Ablation::FULL).unwrap();
        for (i, ex) in batch.iter().enumerate() {
            let single = fuse_example(ex, &store, &p, Ablation::FULL).unwrap();
            for (a, b) in tape.value(fv.y_cross).row(i).iter().zip(&single.y_cross) {
                assert!((a - b).abs() < 1e-12);
            }
            assert_eq!(attention_trace(&tape, [fv.layer1, fv.layer2], i, 2), single.attention_trace);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (store, p) = model(8, 2, 2, 3, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch: Vec<FusionExample> = (0..3).map(|_| random_example(&mut rng, 8, 6)).collect();
        for ablation in Ablation::variants() {
            let report = grad_check(&store, 1e-6, 100, 3, |t, b| {
                let fv = forward_on_tape(t, b, &p, &batch, ablation).map_err(|e| NumError::Domain(e.to_string()))?;
                Ok(t.sum_squares(fv.y_cross))
            })
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "{}: {:?}", ablation.label(), report);
        }
    }
}
