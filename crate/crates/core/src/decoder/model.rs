use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, BOS, EOS, PAD, UNK};
use super::DecoderError;
use crate::numcore::{AttnShape, Bound, Matrix, ParamId, ParamStore, Tape, Var};

/// Decoder shape. `heads · head_dim` must equal `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub d: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
    /// Feed-forward width as a multiple of `d`.
    pub ffn_mult: usize,
    /// Longest input prefix, BOS included.
    pub max_len: usize,
}

impl DecoderConfig {
    pub fn validate(self) -> Result<Self, DecoderError> {
        if self.d == 0 || self.heads == 0 || self.layers == 0 || self.ffn_mult == 0 || self.max_len == 0 {
            return Err(DecoderError::Config("decoder dimensions must be positive".into()));
        }
        if self.heads * self.head_dim != self.d {
            return Err(DecoderError::Config(format!(
                "heads × head_dim must equal d ({} × {} != {})",
                self.heads, self.head_dim, self.d
            )));
        }
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerIds {
    pub ln1: (ParamId, ParamId),
    pub self_q: ParamId,
    pub self_k: ParamId,
    pub self_v: ParamId,
    pub self_o: ParamId,
    pub ln2: (ParamId, ParamId),
    pub cross_q: ParamId,
    pub cross_k: ParamId,
    pub cross_v: ParamId,
    pub cross_o: ParamId,
    pub ln3: (ParamId, ParamId),
    pub ff1: (ParamId, ParamId),
    pub ff2: (ParamId, ParamId),
}

/// Handles to the decoder blocks inside a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderParams {
    pub config: DecoderConfig,
    pub vocab_size: usize,
    pub embed: ParamId,
    pub layers: Vec<LayerIds>,
    pub ln_final: (ParamId, ParamId),
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Clone, Copy)]
enum Init {
    Xavier,
    Ones,
    Zeros,
}

fn block_shapes(cfg: &DecoderConfig, c: usize) -> Vec<(String, usize, usize, Init)> {
    let d = cfg.d;
    let f = cfg.ffn_mult * d;
    let mut v = vec![("decoder.embed".to_string(), c, d, Init::Xavier)];
    for l in 0..cfg.layers {
        let p = |s: &str| format!("decoder.l{l}.{s}");
        let ln = |v: &mut Vec<_>, s: &str| {
            v.push((p(&format!("{s}.g")), 1, d, Init::Ones));
            v.push((p(&format!("{s}.b")), 1, d, Init::Zeros));
        };
        ln(&mut v, "ln1");
        for w in ["self.q", "self.k", "self.v", "self.o"] {
            v.push((p(w), d, d, Init::Xavier));
        }
        ln(&mut v, "ln2");
        for w in ["cross.q", "cross.k", "cross.v", "cross.o"] {
            v.push((p(w), d, d, Init::Xavier));
        }
        ln(&mut v, "ln3");
        v.push((p("ff1.w"), d, f, Init::Xavier));
        v.push((p("ff1.b"), 1, f, Init::Zeros));
        v.push((p("ff2.w"), f, d, Init::Xavier));
        v.push((p("ff2.b"), 1, d, Init::Zeros));
    }
    v.push(("decoder.ln_final.g".into(), 1, d, Init::Ones));
    v.push(("decoder.ln_final.b".into(), 1, d, Init::Zeros));
    v.push(("decoder.out.w".into(), d, c, Init::Xavier));
    v.push(("decoder.out.b".into(), 1, c, Init::Zeros));
    v
}

const PER_LAYER: usize = 18;

impl DecoderParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: DecoderConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Result<Self, DecoderError> {
        config.validate()?;
        for (name, r, c, init) in block_shapes(&config, vocab_size) {
            let m = match init {
                Init::Xavier => Matrix::xavier(r, c, rng),
                Init::Ones => Matrix::filled(r, c, 1.0),
                Init::Zeros => Matrix::zeros(r, c),
            };
            store.insert(name, m)?;
        }
        Self::attach(store, config, vocab_size)
    }

    pub fn attach(store: &ParamStore, config: DecoderConfig, vocab_size: usize) -> Result<Self, DecoderError> {
        config.validate()?;
        let mut ids = Vec::new();
        for (name, r, c, _) in block_shapes(&config, vocab_size) {
            let id = store
                .id(&name)
                .ok_or_else(|| DecoderError::Shape(format!("missing parameter block {name}")))?;
            if store.get(id).shape() != (r, c) {
                let (a, b) = store.get(id).shape();
                return Err(DecoderError::Shape(format!("{name} is {a}x{b}, expected {r}x{c}")));
            }
            ids.push(id);
        }
        let layers = (0..config.layers)
            .map(|l| {
                let x = &ids[1 + l * PER_LAYER..1 + (l + 1) * PER_LAYER];
                LayerIds {
                    ln1: (x[0], x[1]),
                    self_q: x[2],
                    self_k: x[3],
                    self_v: x[4],
                    self_o: x[5],
                    ln2: (x[6], x[7]),
                    cross_q: x[8],
                    cross_k: x[9],
                    cross_v: x[10],
                    cross_o: x[11],
                    ln3: (x[12], x[13]),
                    ff1: (x[14], x[15]),
                    ff2: (x[16], x[17]),
                }
            })
            .collect();
        let t = 1 + config.layers * PER_LAYER;
        Ok(Self {
            config,
            vocab_size,
            embed: ids[0],
            layers,
            ln_final: (ids[t], ids[t + 1]),
            out_w: ids[t + 2],
            out_b: ids[t + 3],
        })
    }
}

/// Fixed sinusoidal position codes, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            m.set(pos, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    m
}

fn ln(tape: &mut Tape, b: &Bound, x: Var, p: (ParamId, ParamId)) -> Result<Var, DecoderError> {
    Ok(tape.layer_norm(x, b.var(p.0), b.var(p.1))?)
}

fn lin(tape: &mut Tape, b: &Bound, x: Var, w: ParamId) -> Result<Var, DecoderError> {
    Ok(tape.matmul(x, b.var(w))?)
}

/// Right-pads `prefixes` with PAD to a common length after validating them.
fn pad_prefixes(params: &DecoderParams, prefixes: &[Vec<usize>]) -> Result<(Vec<usize>, usize), DecoderError> {
    if prefixes.is_empty() {
        return Err(DecoderError::Shape("empty batch".into()));
    }
    let t = prefixes.iter().map(Vec::len).max().unwrap_or(0);
    if t > params.config.max_len {
        return Err(DecoderError::Domain(format!("prefix of length {t} exceeds max_len {}", params.config.max_len)));
    }
    let mut flat = Vec::with_capacity(prefixes.len() * t);
    for p in prefixes {
        if p.first() != Some(&BOS) {
            return Err(DecoderError::Domain("prefix must start with BOS".into()));
        }
        if let Some(&bad) = p.iter().find(|&&i| i >= params.vocab_size) {
            return Err(DecoderError::Domain(format!("token index {bad} outside vocabulary of {}", params.vocab_size)));
        }
        flat.extend_from_slice(p);
        flat.extend(std::iter::repeat(PAD).take(t - p.len()));
    }
    Ok((flat, t))
}

/// Logits for a batch of prefixes conditioned on `y_cross` (`batch × d`).
/// Returns `(batch·T) × C` logits, row `b·T + t` scoring the token after
/// position `t` of prefix `b`, and `T`.
pub fn forward_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    params: &DecoderParams,
    y_cross: Var,
    prefixes: &[Vec<usize>],
) -> Result<(Var, usize), DecoderError> {
    let cfg = params.config;
    let batch = prefixes.len();
    if tape.value(y_cross).shape() != (batch, cfg.d) {
        let (r, c) = tape.value(y_cross).shape();
        return Err(DecoderError::Shape(format!("y_cross is {r}x{c}, expected {batch}x{}", cfg.d)));
    }
    let (flat, t) = pad_prefixes(params, prefixes)?;
    let pe = positional_encoding(t, cfg.d);
    let mut tiled = Matrix::zeros(batch * t, cfg.d);
    for b in 0..batch {
        for p in 0..t {
            tiled.row_mut(b * t + p).copy_from_slice(pe.row(p));
        }
    }
    let emb = tape.gather_rows(bound.var(params.embed), &flat)?;
    let pe = tape.constant(tiled);
    let mut x = tape.add(emb, pe)?;
    let self_shape = AttnShape { batch, heads: cfg.heads, q_len: t, kv_len: t, causal: true };
    let cross_shape = AttnShape { batch, heads: cfg.heads, q_len: t, kv_len: 1, causal: false };
    for l in &params.layers {
        let h = ln(tape, bound, x, l.ln1)?;
        let (q, k, v) = (lin(tape, bound, h, l.self_q)?, lin(tape, bound, h, l.self_k)?, lin(tape, bound, h, l.self_v)?);
        let a = tape.attention(q, k, v, self_shape)?;
        let a = lin(tape, bound, a, l.self_o)?;
        x = tape.add(x, a)?;

        let h = ln(tape, bound, x, l.ln2)?;
        let q = lin(tape, bound, h, l.cross_q)?;
        let k = lin(tape, bound, y_cross, l.cross_k)?;
        let v = lin(tape, bound, y_cross, l.cross_v)?;
        let a = tape.attention(q, k, v, cross_shape)?;
        let a = lin(tape, bound, a, l.cross_o)?;
        x = tape.add(x, a)?;

        let h = ln(tape, bound, x, l.ln3)?;
        let f = lin(tape, bound, h, l.ff1.0)?;
        let f = tape.add_row(f, bound.var(l.ff1.1))?;
        let f = tape.relu(f);
        let f = lin(tape, bound, f, l.ff2.0)?;
        let f = tape.add_row(f, bound.var(l.ff2.1))?;
        x = tape.add(x, f)?;
    }
    let x = ln(tape, bound, x, params.ln_final)?;
    let logits = lin(tape, bound, x, params.out_w)?;
    let logits = tape.add_row(logits, bound.var(params.out_b))?;
    Ok((logits, t))
}

/// Teacher-forcing pair for a target: input `BOS s…`, expected `s… EOS`.
pub fn teacher_forcing(ids: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut input = Vec::with_capacity(ids.len() + 1);
    input.push(BOS);
    input.extend_from_slice(ids);
    let mut target = ids.to_vec();
    target.push(EOS);
    (input, target)
}

/// Mean cross-entropy of a batch of targets. `targets[b]` is the token
/// sequence without BOS/EOS.
pub fn loss_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    params: &DecoderParams,
    y_cross: Var,
    targets: &[Vec<usize>],
) -> Result<Var, DecoderError> {
    let (inputs, outputs): (Vec<_>, Vec<_>) = targets.iter().map(|t| teacher_forcing(t)).unzip();
    let (logits, t) = forward_on_tape(tape, bound, params, y_cross, &inputs)?;
    let mut flat = Vec::with_capacity(targets.len() * t);
    for o in &outputs {
        flat.extend_from_slice(o);
        flat.extend(std::iter::repeat(PAD).take(t - o.len()));
    }
    Ok(tape.cross_entropy(logits, &flat, Some(PAD))?)
}

/// Logits (`|prefix| × C`) for one prefix.
pub fn forward(store: &ParamStore, params: &DecoderParams, y_cross: &[f64], prefix: &[usize]) -> Result<Matrix, DecoderError> {
    let mut tape = Tape::new();
    let bound = tape.bind(store);
    let y = tape.constant(Matrix::row_vector(y_cross));
    let (logits, _) = forward_on_tape(&mut tape, &bound, params, y, &[prefix.to_vec()])?;
    Ok(tape.value(logits).clone())
}

/// Mean `-ln p(target)` over positions whose target is not PAD.
pub fn ce_loss(logits: &Matrix, targets: &[usize]) -> Result<f64, DecoderError> {
    let mut tape = Tape::new();
    let l = tape.constant(logits.clone());
    let loss = tape.cross_entropy(l, targets, Some(PAD))?;
    Ok(tape.value(loss).data()[0])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub ids: Vec<usize>,
    /// Hit the length limit before EOS.
    pub truncated: bool,
}

/// Greedy decoding for every row of `y_cross` (`batch × d`). At each step
/// the highest-scoring token wins, the lowest index on ties; PAD, BOS and
/// UNK are never emitted. Stops at EOS or after `max_len` tokens.
pub fn generate_batch(
    store: &ParamStore,
    params: &DecoderParams,
    vocab: &Vocab,
    y_cross: &Matrix,
    max_len: usize,
) -> Result<Vec<Generation>, DecoderError> {
    let batch = y_cross.rows();
    let max_len = max_len.min(params.config.max_len.saturating_sub(1));
    let mut prefixes: Vec<Vec<usize>> = vec![vec![BOS]; batch];
    let mut done = vec![false; batch];
    for _ in 0..max_len {
        let live: Vec<usize> = (0..batch).filter(|&b| !done[b]).collect();
        if live.is_empty() {
            break;
        }
        let mut tape = Tape::new();
        let bound = tape.bind(store);
        let mut y = Matrix::zeros(live.len(), y_cross.cols());
        for (i, &b) in live.iter().enumerate() {
            y.row_mut(i).copy_from_slice(y_cross.row(b));
        }
        let y = tape.constant(y);
        let batch_prefixes: Vec<Vec<usize>> = live.iter().map(|&b| prefixes[b].clone()).collect();
        let (logits, t) = forward_on_tape(&mut tape, &bound, params, y, &batch_prefixes)?;
        let lm = tape.value(logits);
        for (i, &b) in live.iter().enumerate() {
            let row = lm.row(i * t + prefixes[b].len() - 1);
            let next = argmax_allowed(row);
            if next == EOS {
                done[b] = true;
            } else {
                prefixes[b].push(next);
            }
        }
    }
    Ok(prefixes
        .into_iter()
        .zip(done)
        .map(|(p, finished)| {
            let ids = p[1..].to_vec();
            Generation { text: vocab.decode(&ids), ids, truncated: !finished }
        })
        .collect())
}

fn argmax_allowed(row: &[f64]) -> usize {
    let mut best = EOS;
    for (i, &x) in row.iter().enumerate() {
        if matches!(i, PAD | BOS | UNK) {
            continue;
        }
        if x > row[best] {
            best = i;
        }
    }
    best
}

pub fn generate(
    store: &ParamStore,
    params: &DecoderParams,
    vocab: &Vocab,
    y_cross: &[f64],
    max_len: usize,
) -> Result<Generation, DecoderError> {
    let mut g = generate_batch(store, params, vocab, &Matrix::row_vector(y_cross), max_len)?;
    Ok(g.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::VocabKind;
    use crate::numcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> (ParamStore, DecoderParams, Vocab) {
        let vocab = Vocab::build(VocabKind::Smiles, ["CCO"]);
        let cfg = DecoderConfig { d: 8, heads: 2, head_dim: 4, layers: 2, ffn_mult: 4, max_len: 16 };
        let mut store = ParamStore::new();
        let p = DecoderParams::init(&mut store, cfg, vocab.len(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (store, p, vocab)
    }

    fn y(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn rows_are_distributions_and_causal() {
        let (store, p, v) = small(1);
        let a = [BOS, v.id("C").unwrap(), v.id("O").unwrap(), v.id("C").unwrap()];
        let la = forward(&store, &p, &y(2), &a).unwrap();
        for r in 0..la.rows() {
            let s = crate::numcore::softmax(la.row(r)).unwrap();
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let mut b = a;
        b[2] = v.id("N").unwrap();
        let lb = forward(&store, &p, &y(2), &b).unwrap();
        assert_eq!(la.row(0), lb.row(0));
        assert_eq!(la.row(1), lb.row(1));
        assert_ne!(la.row(2), lb.row(2));
    }

    #[test]
    fn zero_output_layer_is_uniform() {
        let (mut store, p, v) = small(1);
        *store.get_mut(p.out_w) = Matrix::zeros(8, v.len());
        let l = forward(&store, &p, &y(3), &[BOS, 5]).unwrap();
        let s = crate::numcore::softmax(l.row(1)).unwrap();
        for x in s {
            assert!((x - 1.0 / v.len() as f64).abs() < 1e-15);
        }
        let loss = ce_loss(&l, &[4, 7]).unwrap();
        assert!((loss - (v.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_hand_values() {
        // probabilities 0.5 and 0.25 on the targets; column 0 is PAD and
        // underflows to probability zero
        let l = Matrix::from_rows(&[vec![-1e3, 0.0, 0.0], vec![-1e3, 0.0, 3f64.ln()]]).unwrap();
        let loss = ce_loss(&l, &[1, 1]).unwrap();
        assert!((loss - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        // certain model
        let l = Matrix::from_rows(&[vec![0.0, 800.0]]).unwrap();
        assert_eq!(ce_loss(&l, &[1]).unwrap(), 0.0);
        assert!(ce_loss(&l, &[PAD]).is_err());
    }

    #[test]
    fn rigged_eos_gives_empty_string() {
        let (mut store, p, v) = small(4);
        let b = store.get_mut(p.out_b);
        b.set(0, EOS, 1e6);
        let g = generate(&store, &p, &v, &y(1), 10).unwrap();
        assert_eq!(g.text, "");
        assert!(!g.truncated);
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let (store, p, v) = small(5);
        let a = generate(&store, &p, &v, &y(6), 6).unwrap();
        let b = generate(&store, &p, &v, &y(6), 6).unwrap();
        assert_eq!(a, b);
        assert!(a.ids.len() <= 6);
        let batch = Matrix::from_rows(&[y(6), y(7)]).unwrap();
        let both = generate_batch(&store, &p, &v, &batch, 6).unwrap();
        assert_eq!(both[0], a);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut row = vec![0.0; 10];
        row[5] = 2.0;
        row[7] = 2.0;
        assert_eq!(argmax_allowed(&row), 5);
        row[BOS] = 9.0;
        assert_eq!(argmax_allowed(&row), 5);
        assert_eq!(argmax_allowed(&[0.0; 6]), EOS);
    }

    #[test]
    fn prefix_validation() {
        let (store, p, _) = small(1);
        assert!(matches!(forward(&store, &p, &y(1), &[5, 5]), Err(DecoderError::Domain(_))));
        assert!(matches!(forward(&store, &p, &y(1), &[BOS, 999]), Err(DecoderError::Domain(_))));
        assert!(matches!(forward(&store, &p, &y(1), &[BOS; 17]), Err(DecoderError::Domain(_))));
    }

    #[test]
    fn decoder_gradients_match_finite_differences() {
        let (mut store, p, _) = small(8);
        let yid = store.insert("y", Matrix::from_rows(&[y(1), y(2)]).unwrap()).unwrap();
        let targets = vec![vec![4, 5, 6], vec![7]];
        let r = grad_check(&store, 1e-6, 100, 2, |t, b| {
            loss_on_tape(t, b, &p, b.var(yid), &targets).map_err(|e| crate::numcore::NumError::Domain(e.to_string()))
        })
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }
}
