//! Batch commands behind the `textmol` binary: corpus preparation, LLM
//! querying, training, evaluation, single-query generation and ablations.
//!
//! Every command reads a [`RunConfig`], writes the resolved settings to
//! `<out_dir>/run.config` and returns the text it would print. File outputs
//! carry no timestamps, so reruns with the same inputs are byte-identical.

mod config;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{EmbedMode, LlmMode, RunConfig};

use crate::dataset::{self, Corpus, DataError, Split, TextMoleculePair};
use crate::decoder::{self, DecoderError, Model, TrainingExample, Vocab, VocabKind};
use crate::embeddings::{
    embed_tokens, tokenize, EmbedError, EmbeddingProvider, FileProvider, StubProvider, Tokenization,
};
use crate::fusion::{prediction_indicator, Ablation, AttentionRecord, FusionExample};
use crate::llmclient::{
    parse_response, CandidateKind, ClientError, LlmClient, LlmProvider, ReplayLog, ReplayProvider, RetryPolicy, StubLlm,
};
use crate::metrics::{self, MetricError, MetricsReport, Pair, ReportFormat, TextMetricsReport};
use crate::prompting::{Direction, HashedTfIdf, PromptBuilder, PromptError};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("{0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl PipelineError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Data(_) | PipelineError::Io(_) => 3,
            PipelineError::Provider(_) => 4,
            PipelineError::Divergence(_) => 5,
        }
    }
}

impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<EmbedError> for PipelineError {
    fn from(e: EmbedError) -> Self {
        PipelineError::Data(format!("embedding: {e}"))
    }
}

impl From<PromptError> for PipelineError {
    fn from(e: PromptError) -> Self {
        PipelineError::Data(format!("prompting: {e}"))
    }
}

impl From<MetricError> for PipelineError {
    fn from(e: MetricError) -> Self {
        PipelineError::Data(format!("metrics: {e}"))
    }
}

impl From<ClientError> for PipelineError {
    fn from(e: ClientError) -> Self {
        PipelineError::Provider(e.to_string())
    }
}

impl From<DecoderError> for PipelineError {
    fn from(e: DecoderError) -> Self {
        match e {
            DecoderError::Config(m) => PipelineError::Config(m),
            d @ DecoderError::Divergence { .. } => PipelineError::Divergence(d.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// One line of `predictions/<split>.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub ranked_smiles: Vec<String>,
    pub explanation: String,
}

pub fn predictions_path(cfg: &RunConfig, split: Split) -> PathBuf {
    cfg.predictions_dir().join(format!("{}.jsonl", split.name()))
}

pub fn read_predictions(path: &Path) -> Result<HashMap<String, PredictionRecord>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e} (run `run-llm` first)", path.display())))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let r: PredictionRecord = serde_json::from_str(line)
            .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.insert(r.id.clone(), r);
    }
    Ok(out)
}

/// Setup shared by every command: validation, output directory and the
/// `run.config` echo.
fn begin(cfg: &RunConfig) -> Result<(), PipelineError> {
    cfg.validate()?;
    write_file(&cfg.out_dir().join("run.config"), cfg.render())
}

/// The prepared corpus under `corpus_dir`.
pub fn load_prepared(cfg: &RunConfig) -> Result<Corpus, PipelineError> {
    let dir = cfg.corpus_dir();
    let path = |s: Split| dir.join(format!("{}.txt", s.name()));
    let (corpus, quarantine) = dataset::load_corpus(&path(Split::Train), &path(Split::Validation), &path(Split::Test))
        .map_err(|e| PipelineError::Data(format!("{e} (run `prepare` first)")))?;
    if quarantine.total() > 0 {
        log::warn!("{} rows of the prepared corpus failed to parse", quarantine.total());
    }
    Ok(corpus)
}

/// Loads or synthesizes the corpus and writes its cleaned splits to
/// `corpus_dir`.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<String, PipelineError> {
    begin(cfg)?;
    let n = cfg.synthetic()?;
    let (corpus, quarantined) = if n > 0 {
        (dataset::make_synthetic_corpus(n, cfg.seed()?)?, 0)
    } else {
        let files: Vec<&str> = ["train_file", "validation_file", "test_file"].iter().map(|k| cfg.get(k)).collect();
        if files.iter().any(|f| f.is_empty()) {
            return Err(PipelineError::Config(
                "set `synthetic` or all of `train_file`, `validation_file`, `test_file`".into(),
            ));
        }
        let (corpus, q) = dataset::load_corpus(Path::new(files[0]), Path::new(files[1]), Path::new(files[2]))?;
        for p in q.write_reports()? {
            log::warn!("quarantine report written to {}", p.display());
        }
        (corpus, q.total())
    };
    corpus.check_disjoint()?;
    dataset::write_corpus(&corpus, &cfg.corpus_dir())?;
    let mut s = String::new();
    for split in Split::ALL {
        let _ = writeln!(s, "{:<12}{}", split.name(), corpus.split(split).len());
    }
    let _ = writeln!(s, "{:<12}{quarantined}", "quarantined");
    Ok(s)
}

/// The configured LLM provider. Live mode checks the credential variable
/// before anything else happens.
pub fn llm_provider(cfg: &RunConfig) -> Result<Arc<dyn LlmProvider>, PipelineError> {
    let r: usize = cfg.prompt_config()?.r;
    match cfg.llm_mode()? {
        LlmMode::Stub => Ok(Arc::new(StubLlm::new(r))),
        LlmMode::Replay => {
            let path = cfg.replay_log();
            if !path.is_file() {
                return Err(PipelineError::Config(format!("replay log {} does not exist", path.display())));
            }
            Ok(Arc::new(ReplayProvider::load(&path)?))
        }
        LlmMode::Live => {
            let pc = cfg.provider_config()?;
            if std::env::var(&pc.credential_env).map_or(true, |v| v.trim().is_empty()) {
                return Err(PipelineError::Config(format!(
                    "live mode needs the credential variable `{}` to be set",
                    pc.credential_env
                )));
            }
            if pc.endpoint.is_empty() {
                return Err(PipelineError::Config("live mode needs `endpoint`".into()));
            }
            live_provider(pc)
        }
    }
}

#[cfg(feature = "live")]
fn live_provider(pc: crate::llmclient::ProviderConfig) -> Result<Arc<dyn LlmProvider>, PipelineError> {
    Ok(Arc::new(crate::llmclient::HttpProvider::new(pc)))
}

#[cfg(not(feature = "live"))]
fn live_provider(_pc: crate::llmclient::ProviderConfig) -> Result<Arc<dyn LlmProvider>, PipelineError> {
    Err(PipelineError::Config("this build has no HTTP provider; rebuild with `--features live`".into()))
}

fn candidate_kind(direction: Direction) -> CandidateKind {
    match direction {
        Direction::Text2Mol => CandidateKind::Smiles,
        Direction::Mol2Text => CandidateKind::Text,
    }
}

fn text_embedder(corpus: &Corpus) -> HashedTfIdf {
    HashedTfIdf::fit(corpus.train.iter().map(|p| p.description.as_str()), 256)
}

/// Builds prompts for every pair of the configured splits, queries the
/// configured provider and writes `predictions/<split>.jsonl`.
pub fn cmd_run_llm(cfg: &RunConfig) -> Result<String, PipelineError> {
    begin(cfg)?;
    let provider = llm_provider(cfg)?;
    let log = match cfg.llm_mode()? {
        LlmMode::Replay => None,
        _ => {
            // a fresh log per run, so reruns do not accumulate records
            let path = cfg.replay_log();
            if path.is_file() {
                std::fs::remove_file(&path).map_err(|e| io_err(&path, e))?;
            }
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            Some(ReplayLog::create(&path)?)
        }
    };
    run_llm_with(cfg, provider, log)
}

/// [`cmd_run_llm`] with an explicit provider and optional replay log.
/// Unparseable or failed responses become records with no candidates and
/// count as warnings; a rejected credential aborts the run.
pub fn run_llm_with(
    cfg: &RunConfig,
    provider: Arc<dyn LlmProvider>,
    log: Option<ReplayLog>,
) -> Result<String, PipelineError> {
    cfg.validate()?;
    let corpus = load_prepared(cfg)?;
    let direction = cfg.direction()?;
    let pc = cfg.prompt_config()?;
    let r = pc.r;
    let embedder = text_embedder(&corpus);
    let builder = PromptBuilder::new(&corpus.train, direction, pc, &embedder)?;
    let mut client = LlmClient::new(provider, RetryPolicy::new(cfg.provider_config()?.max_retries));
    if let Some(l) = log {
        client = client.with_log(l);
    }
    let mut summary = String::new();
    for split in cfg.llm_splits()? {
        let pairs = corpus.split(split);
        let prompts = pairs
            .iter()
            .map(|p| builder.prompt(p).map(|ap| ap.rendered))
            .collect::<Result<Vec<_>, _>>()?;
        let results = client.query_all(&prompts, cfg.concurrency()?);
        let mut lines = String::new();
        let mut warnings = 0;
        for (pair, res) in pairs.iter().zip(results) {
            let parsed = match res {
                Err(ClientError::Credential(m)) => return Err(PipelineError::Provider(format!("credential rejected: {m}"))),
                Err(e @ ClientError::Log(_)) => return Err(e.into()),
                Err(e) => Err(e),
                Ok(out) => parse_response(&out.raw, r, candidate_kind(direction)),
            };
            let record = match parsed {
                Ok(p) => PredictionRecord { id: pair.id.clone(), ranked_smiles: p.ranked_smiles, explanation: p.explanation },
                Err(e) => {
                    log::warn!("{}: {e}", pair.id);
                    warnings += 1;
                    PredictionRecord { id: pair.id.clone(), ranked_smiles: Vec::new(), explanation: String::new() }
                }
            };
            lines.push_str(&serde_json::to_string(&record).expect("records serialize"));
            lines.push('\n');
        }
        write_file(&predictions_path(cfg, split), lines)?;
        let _ = writeln!(summary, "{}: {} queries, {warnings} warnings", split.name(), pairs.len());
    }
    Ok(summary)
}

/// Turns corpus pairs and LLM predictions into fusion inputs.
pub struct Featurizer {
    direction: Direction,
    org: Box<dyn EmbeddingProvider>,
    exp: Box<dyn EmbeddingProvider>,
    d: usize,
    r: usize,
}

/// Stands in for an empty explanation so the stream keeps one token.
const NO_EXPLANATION: &str = "no explanation given";

impl Featurizer {
    pub fn new(direction: Direction, mode: EmbedMode, dir: &Path, d: usize, seed: u64, r: usize) -> Self {
        let input_tokens = match direction {
            Direction::Text2Mol => Tokenization::Words,
            Direction::Mol2Text => Tokenization::SmilesSymbols,
        };
        let (org, exp): (Box<dyn EmbeddingProvider>, Box<dyn EmbeddingProvider>) = match mode {
            EmbedMode::Stub => (
                Box::new(StubProvider::new(d, seed, input_tokens)),
                Box::new(StubProvider::new(d, seed, Tokenization::Words)),
            ),
            EmbedMode::File => (Box::new(FileProvider::new(dir, d)), Box::new(FileProvider::new(dir, d))),
        };
        Self { direction, org, exp, d, r }
    }

    pub fn from_config(cfg: &RunConfig, d: usize, r: usize, seed: u64) -> Result<Self, PipelineError> {
        Ok(Self::new(cfg.direction()?, cfg.embed_mode()?, Path::new(cfg.get("embeddings_dir")), d, seed, r))
    }

    /// Fusion inputs for the query side of `pair`. The prediction stream is
    /// the candidate indicator for text2mol and all zeros for mol2text.
    pub fn example(
        &self,
        pair: &TextMoleculePair,
        pred: &PredictionRecord,
        vocab: &Vocab,
    ) -> Result<FusionExample, PipelineError> {
        let (input, _) = self.direction.io(pair);
        let org = embed_tokens(input, self.org.as_ref(), self.d)
            .map_err(|e| PipelineError::Data(format!("{}: query text: {e}", pair.id)))?;
        let explanation = if tokenize(&pred.explanation, Tokenization::Words).is_empty() {
            NO_EXPLANATION
        } else {
            pred.explanation.as_str()
        };
        let exp = embed_tokens(explanation, self.exp.as_ref(), self.d)?;
        let indicator = match self.direction {
            Direction::Text2Mol => prediction_indicator(&pred.ranked_smiles, vocab.symbols(), self.r).0,
            Direction::Mol2Text => vec![0.0; self.r * vocab.len()],
        };
        Ok(FusionExample::new(&org, &exp, indicator))
    }

    /// Fusion inputs for every pair; a pair with no prediction record gets
    /// an empty one.
    pub fn examples(
        &self,
        pairs: &[TextMoleculePair],
        preds: &HashMap<String, PredictionRecord>,
        vocab: &Vocab,
    ) -> Result<Vec<FusionExample>, PipelineError> {
        let mut missing = 0;
        let out = pairs
            .iter()
            .map(|p| {
                let pred = preds.get(&p.id).cloned().unwrap_or_else(|| {
                    missing += 1;
                    PredictionRecord { id: p.id.clone(), ranked_smiles: Vec::new(), explanation: String::new() }
                });
                self.example(p, &pred, vocab)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if missing > 0 {
            log::warn!("{missing} pairs have no LLM prediction record");
        }
        Ok(out)
    }
}

pub fn vocab_kind(direction: Direction) -> VocabKind {
    match direction {
        Direction::Text2Mol => VocabKind::Smiles,
        Direction::Mol2Text => VocabKind::Words,
    }
}

fn target_text(direction: Direction, pair: &TextMoleculePair) -> &str {
    direction.io(pair).1
}

/// Supervised examples; targets that do not fit `max_len` are skipped
/// with a warning.
fn training_examples(
    pairs: &[TextMoleculePair],
    features: Vec<FusionExample>,
    vocab: &Vocab,
    direction: Direction,
    max_len: usize,
) -> Vec<TrainingExample> {
    let mut skipped = 0;
    let out: Vec<TrainingExample> = pairs
        .iter()
        .zip(features)
        .filter_map(|(p, fusion)| {
            let target = vocab.encode(target_text(direction, p)).0;
            if target.len() + 1 > max_len {
                skipped += 1;
                return None;
            }
            Some(TrainingExample { id: p.id.clone(), fusion, target })
        })
        .collect();
    if skipped > 0 {
        log::warn!("{skipped} pairs skipped: target longer than max_len");
    }
    out
}

struct Prepared {
    corpus: Corpus,
    direction: Direction,
    vocab: Vocab,
    train: Vec<TrainingExample>,
    val: Vec<TrainingExample>,
}

fn prepare_training(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    let corpus = load_prepared(cfg)?;
    let direction = cfg.direction()?;
    let tc = cfg.train_config()?;
    let vocab = Vocab::build(vocab_kind(direction), corpus.train.iter().map(|p| target_text(direction, p)));
    let feat = Featurizer::from_config(cfg, tc.d, tc.r, cfg.seed()?)?;
    let mut sets = Vec::new();
    for split in [Split::Train, Split::Validation] {
        let pairs = corpus.split(split);
        let preds = read_predictions(&predictions_path(cfg, split))?;
        let features = feat.examples(pairs, &preds, &vocab)?;
        sets.push(training_examples(pairs, features, &vocab, direction, tc.max_len));
    }
    let val = sets.pop().expect("two splits");
    let train = sets.pop().expect("two splits");
    Ok(Prepared { corpus, direction, vocab, train, val })
}

/// Extras stored with every checkpoint so evaluation rebuilds the same
/// features. Only non-secret settings go here.
fn checkpoint_extras(cfg: &RunConfig) -> Result<Vec<(String, String)>, PipelineError> {
    Ok(vec![
        ("direction".into(), cfg.direction()?.name().into()),
        ("embed_seed".into(), cfg.seed()?.to_string()),
    ])
}

/// Trains fusion and decoder on the train split (validation split for
/// monitoring) and writes the best checkpoint and `metrics.jsonl`.
pub fn cmd_train(cfg: &RunConfig) -> Result<String, PipelineError> {
    begin(cfg)?;
    let tc = cfg.train_config()?;
    let ablation = cfg.ablation()?;
    let prep = prepare_training(cfg)?;
    let log_path = cfg.out_dir().join("metrics.jsonl");
    let file = std::fs::File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let result = decoder::train(&prep.train, &prep.val, prep.vocab.clone(), &tc, ablation, Some(&mut log));
    log.flush().map_err(|e| io_err(&log_path, e))?;
    let extras = checkpoint_extras(cfg)?;
    match result {
        Ok(outcome) => {
            let path = cfg.checkpoint_path();
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            outcome.model.save(&path, &extras)?;
            let best = &outcome.history[outcome.best_epoch];
            let mut s = String::new();
            let _ = writeln!(s, "examples   {} train, {} validation", prep.train.len(), prep.val.len());
            let _ = writeln!(s, "epochs     {}", outcome.history.len());
            let _ = writeln!(s, "steps      {}", outcome.steps);
            let _ = writeln!(s, "best epoch {} (train {:.4}{})", best.epoch, best.train_loss,
                best.val_loss.map(|v| format!(", validation {v:.4}")).unwrap_or_default());
            let _ = writeln!(s, "early stop {}", outcome.stopped_early);
            let _ = writeln!(s, "checkpoint {}", path.display());
            Ok(s)
        }
        Err(DecoderError::Divergence { epoch, step, reason, last_finite }) => {
            let path = cfg.out_dir().join("model.diverged.ckpt");
            last_finite.save(&path, &extras)?;
            Err(PipelineError::Divergence(format!(
                "training diverged at epoch {epoch}, step {step}: {reason}; last finite model saved to {}",
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

/// A checkpoint plus the settings needed to featurize for it.
pub struct LoadedModel {
    pub model: Model,
    pub direction: Direction,
    pub embed_seed: u64,
}

/// Loads the configured checkpoint and checks it against the config.
pub fn load_model(cfg: &RunConfig) -> Result<LoadedModel, PipelineError> {
    let path = cfg.checkpoint_path();
    let (model, ck) = Model::load(&path).map_err(|e| PipelineError::Data(e.to_string()))?;
    let direction: Direction = ck
        .extra("direction")
        .ok_or_else(|| PipelineError::Data(format!("{}: no direction recorded", path.display())))?
        .parse()
        .map_err(PipelineError::Data)?;
    if direction != cfg.direction()? {
        return Err(PipelineError::Config(format!(
            "checkpoint was trained for {}, config asks for {}",
            direction.name(),
            cfg.direction()?.name()
        )));
    }
    let embed_seed = ck
        .extra("embed_seed")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PipelineError::Data(format!("{}: no embedding seed recorded", path.display())))?;
    let tc = cfg.train_config()?;
    let mc = model.config();
    if (mc.d, mc.heads, mc.head_dim) != (tc.d, tc.heads, tc.head_dim) || model.fusion.dims.r != tc.r {
        return Err(PipelineError::Config(format!(
            "checkpoint dims d={} heads={} head_dim={} r={} do not match config d={} heads={} head_dim={} r={}",
            mc.d, mc.heads, mc.head_dim, model.fusion.dims.r, tc.d, tc.heads, tc.head_dim, tc.r
        )));
    }
    Ok(LoadedModel { model, direction, embed_seed })
}

/// A metrics table for either direction.
#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Molecules(MetricsReport),
    Text(TextMetricsReport),
}

impl Report {
    pub fn header(&self) -> String {
        match self {
            Report::Molecules(r) => r.text_header(),
            Report::Text(r) => r.text_header(),
        }
    }

    pub fn row(&self, label: &str) -> String {
        match self {
            Report::Molecules(r) => r.text_row(label),
            Report::Text(r) => r.text_row(label),
        }
    }

    pub fn jsonl(&self, label: &str) -> String {
        match self {
            Report::Molecules(r) => r.to_jsonl(label),
            Report::Text(r) => r.to_jsonl(label),
        }
    }

    pub fn render(&self, label: &str, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.header() + &self.row(label),
            ReportFormat::Jsonl => self.jsonl(label),
        }
    }
}

/// Scores `candidates` against the targets of `pairs`.
pub fn score(direction: Direction, pairs: &[TextMoleculePair], candidates: &[String]) -> Result<Report, PipelineError> {
    let scored: Vec<Pair> =
        pairs.iter().zip(candidates).map(|(p, c)| Pair::new(c.clone(), target_text(direction, p))).collect();
    Ok(match direction {
        Direction::Text2Mol => Report::Molecules(metrics::evaluate_text2mol(&scored)?),
        Direction::Mol2Text => Report::Text(metrics::evaluate_mol2text(&scored)?),
    })
}

#[derive(Serialize)]
struct GeneratedRecord<'a> {
    id: &'a str,
    reference: &'a str,
    generated: &'a str,
    truncated: bool,
}

#[derive(Serialize)]
struct AttentionDump<'a> {
    id: &'a str,
    y_cross: &'a [f64],
    attention: &'a [AttentionRecord],
}

/// Table with one row per ablation variant, evaluating `model` with each
/// set of switches applied at inference time.
fn ablation_rows(
    model: &Model,
    direction: Direction,
    pairs: &[TextMoleculePair],
    features: &[FusionExample],
    max_len: usize,
) -> Result<(String, String), PipelineError> {
    let mut text = String::new();
    let mut jsonl = String::new();
    for variant in Ablation::variants() {
        let mut m = model.clone();
        m.ablation = variant_for(variant, direction);
        let gens = m.generate(features, max_len)?;
        let candidates: Vec<String> = gens.into_iter().map(|g| g.text).collect();
        let report = score(direction, pairs, &candidates)?;
        if text.is_empty() {
            text.push_str(&report.header());
        }
        text.push_str(&report.row(&variant.label()));
        jsonl.push_str(&report.jsonl(&variant.label()));
    }
    Ok((text, jsonl))
}

/// mol2text never uses the prediction stream.
fn variant_for(variant: Ablation, direction: Direction) -> Ablation {
    Ablation { drop_pred: variant.drop_pred || direction == Direction::Mol2Text, ..variant }
}

/// Generates for every pair of `split`, scores the output and writes
/// `report_<split>.{txt,jsonl}` and `generated_<split>.jsonl`.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<String, PipelineError> {
    begin(cfg)?;
    let loaded = load_model(cfg)?;
    let corpus = load_prepared(cfg)?;
    let split = cfg.split()?;
    let pairs = corpus.split(split);
    if pairs.is_empty() {
        return Err(PipelineError::Data(format!("split {} is empty", split.name())));
    }
    let model = &loaded.model;
    let d = model.config().d;
    let feat = Featurizer::from_config(cfg, d, model.fusion.dims.r, loaded.embed_seed)?;
    let preds = read_predictions(&predictions_path(cfg, split))?;
    let features = feat.examples(pairs, &preds, &model.vocab)?;
    let max_len = cfg.gen_max_len()?;
    let gens = model.generate(&features, max_len)?;

    let mut generated = String::new();
    for (p, g) in pairs.iter().zip(&gens) {
        let rec = GeneratedRecord {
            id: &p.id,
            reference: target_text(loaded.direction, p),
            generated: &g.text,
            truncated: g.truncated,
        };
        generated.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        generated.push('\n');
    }
    let out = cfg.out_dir();
    write_file(&out.join(format!("generated_{}.jsonl", split.name())), generated)?;

    let candidates: Vec<String> = gens.iter().map(|g| g.text.clone()).collect();
    let report = score(loaded.direction, pairs, &candidates)?;
    let label = model.ablation.label();
    write_file(&out.join(format!("report_{}.txt", split.name())), report.render(&label, ReportFormat::Text))?;
    write_file(&out.join(format!("report_{}.jsonl", split.name())), report.jsonl(&label))?;
    let format = cfg.report_format()?;
    let mut shown = report.render(&label, format);

    if cfg.dump_attention()? {
        let mut dump = String::new();
        for (p, f) in pairs.iter().zip(&features) {
            let t = model.trace(f)?;
            let rec = AttentionDump { id: &p.id, y_cross: &t.y_cross, attention: &t.attention_trace };
            dump.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            dump.push('\n');
        }
        write_file(&out.join(format!("attention_{}.jsonl", split.name())), dump)?;
    }

    if cfg.ablate()? {
        let (text, jsonl) = ablation_rows(model, loaded.direction, pairs, &features, max_len)?;
        write_file(&out.join(format!("ablation_{}.txt", split.name())), &text)?;
        write_file(&out.join(format!("ablation_{}.jsonl", split.name())), &jsonl)?;
        shown = match format {
            ReportFormat::Text => text,
            ReportFormat::Jsonl => jsonl,
        };
    }
    Ok(shown)
}

/// Answers the single `query`: builds a prompt from the training split,
/// asks the configured LLM (without recording), fuses and decodes.
pub fn cmd_generate(cfg: &RunConfig) -> Result<String, PipelineError> {
    begin(cfg)?;
    let query = cfg.get("query").trim().to_string();
    if query.is_empty() {
        return Err(PipelineError::Config("`generate` needs `--query`".into()));
    }
    let loaded = load_model(cfg)?;
    let corpus = load_prepared(cfg)?;
    let direction = loaded.direction;
    let pair = match direction {
        Direction::Text2Mol => TextMoleculePair { id: "query".into(), smiles: String::new(), description: query },
        Direction::Mol2Text => TextMoleculePair { id: "query".into(), smiles: query, description: String::new() },
    };
    let pc = cfg.prompt_config()?;
    let r = pc.r;
    let embedder = text_embedder(&corpus);
    let builder = PromptBuilder::new(&corpus.train, direction, pc, &embedder)?;
    let prompt = builder.prompt(&pair)?;
    let client = LlmClient::new(llm_provider(cfg)?, RetryPolicy::new(cfg.provider_config()?.max_retries));
    let pred = match client.query_unlogged(&prompt.rendered).and_then(|o| parse_response(&o.raw, r, candidate_kind(direction))) {
        Ok(p) => PredictionRecord { id: pair.id.clone(), ranked_smiles: p.ranked_smiles, explanation: p.explanation },
        Err(e @ ClientError::Credential(_)) => return Err(e.into()),
        Err(e) => {
            log::warn!("LLM answer unusable, continuing without it: {e}");
            PredictionRecord { id: pair.id.clone(), ranked_smiles: Vec::new(), explanation: String::new() }
        }
    };
    log::info!("LLM candidates: {:?}", pred.ranked_smiles);
    let model = &loaded.model;
    let feat = Featurizer::from_config(cfg, model.config().d, model.fusion.dims.r, loaded.embed_seed)?;
    let example = feat.example(&pair, &pred, &model.vocab)?;
    let gen = model.generate(&[example], cfg.gen_max_len()?)?.remove(0);
    if gen.truncated {
        log::warn!("generation hit the length limit before the end token");
    }
    Ok(format!("{}\n", gen.text))
}

/// Trains one model per ablation variant and scores each on `split`;
/// writes `ablation.txt` and `ablation.jsonl` with five rows.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<String, PipelineError> {
    begin(cfg)?;
    let tc = cfg.train_config()?;
    let prep = prepare_training(cfg)?;
    let split = cfg.split()?;
    let pairs = prep.corpus.split(split);
    if pairs.is_empty() {
        return Err(PipelineError::Data(format!("split {} is empty", split.name())));
    }
    let feat = Featurizer::from_config(cfg, tc.d, tc.r, cfg.seed()?)?;
    let features = feat.examples(pairs, &read_predictions(&predictions_path(cfg, split))?, &prep.vocab)?;
    let max_len = cfg.gen_max_len()?;
    let mut text = String::new();
    let mut jsonl = String::new();
    for variant in Ablation::variants() {
        let ablation = variant_for(variant, prep.direction);
        log::info!("training variant {}", variant.label());
        let outcome = decoder::train(&prep.train, &prep.val, prep.vocab.clone(), &tc, ablation, None)?;
        let candidates: Vec<String> =
            outcome.model.generate(&features, max_len)?.into_iter().map(|g| g.text).collect();
        let report = score(prep.direction, pairs, &candidates)?;
        if text.is_empty() {
            text.push_str(&report.header());
        }
        text.push_str(&report.row(&variant.label()));
        jsonl.push_str(&report.jsonl(&variant.label()));
    }
    write_file(&cfg.out_dir().join("ablation.txt"), &text)?;
    write_file(&cfg.out_dir().join("ablation.jsonl"), &jsonl)?;
    Ok(match cfg.report_format()? {
        ReportFormat::Text => text,
        ReportFormat::Jsonl => jsonl,
    })
}
