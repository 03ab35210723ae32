use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::DecoderConfig;
use super::vocab::Vocab;
use super::{DecoderError, Model, TrainingExample};
use crate::fusion::{Ablation, FusionError};
use crate::numcore::{Adam, NumError, Tape};

/// Which loss drives LR halving, early stopping and best-model selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    Validation,
    /// Mean training loss of the epoch; for deliberate overfitting runs.
    Train,
}

impl std::str::FromStr for Monitor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "validation" | "val" => Ok(Monitor::Validation),
            "train" => Ok(Monitor::Train),
            _ => Err(format!("unknown monitor `{s}` (expected validation or train)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub d: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    pub lr: f64,
    /// Stagnant epochs before the learning rate halves.
    pub lr_patience: usize,
    /// Epochs without improvement before training stops.
    pub early_stop: usize,
    pub seed: u64,
    /// Candidate slots in the prediction embedding.
    pub r: usize,
    /// Demonstrations per prompt.
    pub k: usize,
    pub monitor: Monitor,
    /// Optional cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            d: 128,
            heads: 4,
            head_dim: 32,
            layers: 2,
            ffn_mult: 4,
            max_len: 160,
            lr: 1e-3,
            lr_patience: 10,
            early_stop: 25,
            seed: 0,
            r: 4,
            k: 16,
            monitor: Monitor::Validation,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        let counts = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("lr_patience", self.lr_patience),
            ("early_stop", self.early_stop),
            ("r", self.r),
            ("k", self.k),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(DecoderError::Config(format!("{name} must be positive")));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(DecoderError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        self.decoder_config().validate().map(|_| ())
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            d: self.d,
            heads: self.heads,
            head_dim: self.head_dim,
            layers: self.layers,
            ffn_mult: self.ffn_mult,
            max_len: self.max_len,
        }
    }
}

/// Halves the learning rate after `patience` consecutive epochs without a
/// new best loss, then starts counting again.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub lr: f64,
    patience: usize,
    best: f64,
    stagnant: usize,
}

impl Plateau {
    pub fn new(lr: f64, patience: usize) -> Self {
        Self { lr, patience, best: f64::INFINITY, stagnant: 0 }
    }

    /// Records one epoch's loss; true when the rate was just halved.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.stagnant = 0;
            return false;
        }
        self.stagnant += 1;
        if self.stagnant >= self.patience {
            self.lr *= 0.5;
            self.stagnant = 0;
            return true;
        }
        false
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best monitored loss.
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Index into `history` of the returned model.
    pub best_epoch: usize,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Numeric failures become [`DecoderError::Divergence`]; anything else
/// passes through.
fn diverged(e: DecoderError, epoch: usize, step: usize, best: &Model) -> DecoderError {
    match e {
        DecoderError::Num(NumError::Numeric(reason)) | DecoderError::Fusion(FusionError::Num(NumError::Numeric(reason))) => {
            DecoderError::Divergence { epoch, step, reason, last_finite: Box::new(best.clone()) }
        }
        e => e,
    }
}

/// Joint training of fusion and decoder with Adam.
///
/// Batches are drawn from a per-epoch shuffle seeded by `cfg.seed`. Each
/// epoch appends one JSON line `{epoch, train_loss, val_loss, lr}` to
/// `log` when given. A non-finite loss or gradient aborts with
/// [`DecoderError::Divergence`] carrying the best model so far.
pub fn train(
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    vocab: Vocab,
    cfg: &TrainConfig,
    ablation: Ablation,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, DecoderError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(DecoderError::Domain("training split is empty".into()));
    }
    if cfg.monitor == Monitor::Validation && val_set.is_empty() {
        return Err(DecoderError::Domain("validation split is empty".into()));
    }
    for ex in train_set.iter().chain(val_set) {
        if ex.target.len() + 1 > cfg.max_len {
            return Err(DecoderError::Domain(format!(
                "target of example {} has {} tokens, max_len is {}",
                ex.id,
                ex.target.len(),
                cfg.max_len
            )));
        }
    }
    let mut model = Model::new(vocab, cfg.r, cfg.decoder_config(), ablation, cfg.seed)?;
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut plateau = Plateau::new(cfg.lr, cfg.lr_patience);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);

    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut history = Vec::new();
    let mut steps = 0usize;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut tokens = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let batch: Vec<TrainingExample> = idx.iter().map(|&i| train_set[i].clone()).collect();
            let mut tape = Tape::new();
            let step = model.loss_on_tape(&mut tape, &batch).and_then(|loss| {
                let value = tape.value(loss).data()[0];
                let grads = tape.backward(loss, &model.store)?;
                if !value.is_finite() || !grads.is_finite() {
                    return Err(NumError::Numeric(format!("loss {value}")).into());
                }
                Ok((value, grads))
            });
            let (value, grads) = step.map_err(|e| diverged(e, epoch, steps, &best.1))?;
            adam.lr = plateau.lr;
            adam.update(&mut model.store, &grads);
            steps += 1;
            let n: usize = batch.iter().map(|e| e.target.len() + 1).sum();
            total += value * n as f64;
            tokens += n;
        }
        if tokens == 0 {
            break;
        }
        let train_loss = total / tokens as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(model.loss(val_set).map_err(|e| diverged(e, epoch, steps, &best.1))?)
        };
        let monitored = match cfg.monitor {
            Monitor::Train => train_loss,
            Monitor::Validation => val_loss.unwrap_or(train_loss),
        };
        if !monitored.is_finite() {
            return Err(DecoderError::Divergence {
                epoch,
                step: steps,
                reason: format!("monitored loss {monitored}"),
                last_finite: Box::new(best.1),
            });
        }
        let record = EpochRecord { epoch, train_loss, val_loss, lr: plateau.lr };
        if let Some(w) = log.as_deref_mut() {
            let line = serde_json::to_string(&record).expect("records serialize");
            writeln!(w, "{line}").map_err(|e| DecoderError::Checkpoint(format!("metrics log: {e}")))?;
        }
        log::info!(
            "epoch {epoch}: train {train_loss:.4}{} lr {:.2e}",
            val_loss.map(|v| format!(" val {v:.4}")).unwrap_or_default(),
            plateau.lr
        );
        history.push(record);
        if monitored < best.0 {
            best = (monitored, model.clone(), history.len() - 1);
            since_best = 0;
        } else {
            since_best += 1;
        }
        if plateau.observe(monitored) {
            log::info!("learning rate halved to {:.2e}", plateau.lr);
        }
        if since_best >= cfg.early_stop {
            stopped_early = true;
            break 'epochs;
        }
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
    }
    if history.is_empty() {
        return Err(DecoderError::Domain("no training epoch completed".into()));
    }
    Ok(TrainOutcome { model: best.1, history, best_epoch: best.2, steps, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::tests::toy_examples;
    use crate::decoder::VocabKind;

    #[test]
    fn plateau_halves_after_exact_patience() {
        let mut p = Plateau::new(1.0, 10);
        assert!(!p.observe(5.0));
        for i in 0..9 {
            assert!(!p.observe(5.0 + i as f64), "epoch {i}");
            assert_eq!(p.lr, 1.0);
        }
        assert!(p.observe(6.0));
        assert_eq!(p.lr, 0.5);
        // counter restarts
        for _ in 0..9 {
            assert!(!p.observe(7.0));
        }
        assert!(p.observe(7.0));
        assert_eq!(p.lr, 0.25);
        // improvement resets
        assert!(!p.observe(1.0));
        assert_eq!(p.lr, 0.25);
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            epochs: 6,
            d: 8,
            heads: 2,
            head_dim: 4,
            max_len: 24,
            lr: 5e-3,
            r: 2,
            seed: 9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_and_best_is_argmin() {
        let smiles = ["CCO", "CN", "C=O", "CCC", "OCO", "NCN"];
        let vocab = Vocab::build(VocabKind::Smiles, smiles);
        let ex = toy_examples(&vocab, 8, 2, &smiles, 3);
        let (tr, va) = ex.split_at(4);
        let mut log_a = Vec::new();
        let a = train(tr, va, vocab.clone(), &tiny_cfg(), Ablation::FULL, Some(&mut log_a)).unwrap();
        let mut log_b = Vec::new();
        let b = train(tr, va, vocab, &tiny_cfg(), Ablation::FULL, Some(&mut log_b)).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(log_a, log_b);
        assert_eq!(String::from_utf8(log_a).unwrap().lines().count(), a.history.len());
        let vals: Vec<f64> = a.history.iter().map(|r| r.val_loss.unwrap()).collect();
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(vals[a.best_epoch], min);
        assert_eq!(a.model.loss(va).unwrap(), min);
        assert_eq!(a.steps, 6);
    }

    #[test]
    fn divergence_is_reported() {
        let smiles = ["CCO", "CN"];
        let vocab = Vocab::build(VocabKind::Smiles, smiles);
        let ex = toy_examples(&vocab, 8, 2, &smiles, 3);
        let cfg = TrainConfig { lr: 1e200, epochs: 20, monitor: Monitor::Train, ..tiny_cfg() };
        match train(&ex, &[], vocab, &cfg, Ablation::FULL, None) {
            Err(DecoderError::Divergence { last_finite, .. }) => assert!(last_finite.store.is_finite()),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
        }
    }

    #[test]
    fn config_errors() {
        let cfg = TrainConfig { head_dim: 3, ..tiny_cfg() };
        assert!(matches!(cfg.validate(), Err(DecoderError::Config(_))));
        let cfg = TrainConfig { batch_size: 0, ..tiny_cfg() };
        assert!(cfg.validate().is_err());
    }
}
