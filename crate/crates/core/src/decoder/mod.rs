//! Character-level transformer decoder conditioned on the fused vector,
//! the joint fusion+decoder model, its training loop and checkpoints.

mod model;
mod train;
mod vocab;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use model::{
    ce_loss, forward, forward_on_tape, generate, generate_batch, loss_on_tape, positional_encoding, teacher_forcing,
    DecoderConfig, DecoderParams, Generation, LayerIds,
};
pub use train::{train, EpochRecord, Monitor, Plateau, TrainConfig, TrainOutcome};
pub use vocab::{Vocab, VocabKind, BOS, EOS, PAD, UNK};

use crate::fusion::{self, Ablation, FusionDims, FusionError, FusionExample, FusionOutput, FusionParams};
use crate::numcore::{Bound, Checkpoint, CheckpointHeader, Matrix, NumError, ParamStore, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum DecoderError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Divergence {
        epoch: usize,
        step: usize,
        reason: String,
        /// Best finite model seen before the failure.
        last_finite: Box<Model>,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// One supervised example: fusion inputs and the target token ids
/// (without BOS/EOS).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub fusion: FusionExample,
    pub target: Vec<usize>,
}

/// Fusion and decoder blocks in one store, trained jointly.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub fusion: FusionParams,
    pub decoder: DecoderParams,
    pub vocab: Vocab,
    pub ablation: Ablation,
}

const EVAL_BATCH: usize = 64;

impl Model {
    /// Fresh model; fusion blocks are initialized before decoder blocks
    /// from one seeded stream.
    pub fn new(vocab: Vocab, r: usize, config: DecoderConfig, ablation: Ablation, seed: u64) -> Result<Self, DecoderError> {
        ablation.validate()?;
        let config = config.validate()?;
        let dims = FusionDims::new(config.d, config.heads, config.head_dim, r, vocab.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let fusion = FusionParams::init(&mut store, dims, &mut rng)?;
        let decoder = DecoderParams::init(&mut store, config, vocab.len(), &mut rng)?;
        Ok(Self { store, fusion, decoder, vocab, ablation })
    }

    pub fn config(&self) -> DecoderConfig {
        self.decoder.config
    }

    /// Mean token loss of `batch` recorded on `tape`, with this model's
    /// parameters bound as leaves.
    pub fn loss_on_tape(&self, tape: &mut Tape, batch: &[TrainingExample]) -> Result<Var, DecoderError> {
        let bound = tape.bind(&self.store);
        self.loss_with(tape, &bound, batch)
    }

    /// Like [`Model::loss_on_tape`] but with parameters already bound
    /// (possibly from another store of the same layout).
    pub fn loss_with(&self, tape: &mut Tape, bound: &Bound, batch: &[TrainingExample]) -> Result<Var, DecoderError> {
        let inputs: Vec<FusionExample> = batch.iter().map(|e| e.fusion.clone()).collect();
        let fv = fusion::forward_on_tape(tape, bound, &self.fusion, &inputs, self.ablation)?;
        let targets: Vec<Vec<usize>> = batch.iter().map(|e| e.target.clone()).collect();
        loss_on_tape(tape, bound, &self.decoder, fv.y_cross, &targets)
    }

    /// Token-weighted mean loss over `examples`.
    pub fn loss(&self, examples: &[TrainingExample]) -> Result<f64, DecoderError> {
        if examples.is_empty() {
            return Err(DecoderError::Domain("loss of an empty example set".into()));
        }
        let mut total = 0.0;
        let mut tokens = 0usize;
        for chunk in examples.chunks(EVAL_BATCH) {
            let mut tape = Tape::new();
            let l = self.loss_on_tape(&mut tape, chunk)?;
            let n: usize = chunk.iter().map(|e| e.target.len() + 1).sum();
            total += tape.value(l).data()[0] * n as f64;
            tokens += n;
        }
        Ok(total / tokens as f64)
    }

    /// Conditioning vectors, one row per example.
    pub fn y_cross(&self, examples: &[FusionExample]) -> Result<Matrix, DecoderError> {
        let mut out = Matrix::zeros(examples.len(), self.decoder.config.d);
        for (c, chunk) in examples.chunks(EVAL_BATCH).enumerate() {
            let mut tape = Tape::new();
            let bound = tape.bind(&self.store);
            let fv = fusion::forward_on_tape(&mut tape, &bound, &self.fusion, chunk, self.ablation)?;
            for i in 0..chunk.len() {
                out.row_mut(c * EVAL_BATCH + i).copy_from_slice(tape.value(fv.y_cross).row(i));
            }
        }
        Ok(out)
    }

    /// Every fusion intermediate for one example, attention trace included.
    pub fn trace(&self, example: &FusionExample) -> Result<FusionOutput, DecoderError> {
        Ok(fusion::fuse_example(example, &self.store, &self.fusion, self.ablation)?)
    }

    /// Greedy decoding for each example.
    pub fn generate(&self, examples: &[FusionExample], max_len: usize) -> Result<Vec<Generation>, DecoderError> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_BATCH) {
            let y = self.y_cross(chunk)?;
            out.extend(generate_batch(&self.store, &self.decoder, &self.vocab, &y, max_len)?);
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self, extras: &[(String, String)]) -> Checkpoint {
        let c = self.decoder.config;
        let mut all = vec![
            ("vocab".to_string(), self.vocab.to_json()),
            ("layers".to_string(), c.layers.to_string()),
            ("ffn_mult".to_string(), c.ffn_mult.to_string()),
            ("max_len".to_string(), c.max_len.to_string()),
            ("r".to_string(), self.fusion.dims.r.to_string()),
            ("ablation".to_string(), serde_json::to_string(&self.ablation).expect("flags serialize")),
        ];
        all.extend(extras.iter().cloned());
        Checkpoint {
            header: CheckpointHeader {
                d: c.d as u64,
                heads: c.heads as u64,
                head_dim: c.head_dim as u64,
                vocab_size: self.vocab.len() as u64,
            },
            params: self.store.clone(),
            extras: all,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DecoderError> {
        let get = |k: &str| ck.extra(k).ok_or_else(|| DecoderError::Checkpoint(format!("missing extra `{k}`")));
        let num = |k: &str| -> Result<usize, DecoderError> {
            get(k)?.parse().map_err(|_| DecoderError::Checkpoint(format!("extra `{k}` is not a count")))
        };
        let vocab = Vocab::from_json(get("vocab")?).map_err(DecoderError::Checkpoint)?;
        if vocab.len() as u64 != ck.header.vocab_size {
            return Err(DecoderError::Checkpoint(format!(
                "header vocabulary size {} does not match stored vocabulary of {}",
                ck.header.vocab_size,
                vocab.len()
            )));
        }
        let ablation: Ablation =
            serde_json::from_str(get("ablation")?).map_err(|e| DecoderError::Checkpoint(e.to_string()))?;
        let config = DecoderConfig {
            d: ck.header.d as usize,
            heads: ck.header.heads as usize,
            head_dim: ck.header.head_dim as usize,
            layers: num("layers")?,
            ffn_mult: num("ffn_mult")?,
            max_len: num("max_len")?,
        };
        let dims = FusionDims::new(config.d, config.heads, config.head_dim, num("r")?, vocab.len())?;
        let fusion = FusionParams::attach(&ck.params, dims)?;
        let decoder = DecoderParams::attach(&ck.params, config, vocab.len())?;
        Ok(Self { store: ck.params.clone(), fusion, decoder, vocab, ablation })
    }

    pub fn save(&self, path: &Path, extras: &[(String, String)]) -> Result<(), DecoderError> {
        let bytes = self.to_checkpoint(extras).to_bytes();
        std::fs::write(path, bytes).map_err(|e| DecoderError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<(Self, Checkpoint), DecoderError> {
        let f = std::fs::File::open(path).map_err(|e| DecoderError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck = Checkpoint::read_from(std::io::BufReader::new(f))?;
        Ok((Self::from_checkpoint(&ck)?, ck))
    }
}
