use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::PipelineError;
use crate::dataset::Split;
use crate::decoder::{Monitor, TrainConfig};
use crate::fusion::Ablation;
use crate::llmclient::ProviderConfig;
use crate::metrics::ReportFormat;
use crate::prompting::{Direction, PromptConfig, Sampling};

/// Where LLM responses come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LlmMode {
    /// Deterministic offline stand-in.
    Stub,
    /// Recorded responses only; never touches the network.
    Replay,
    /// HTTP endpoint (needs the `live` feature and a credential variable).
    Live,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedMode {
    Stub,
    /// Precomputed `<sha256>.emb` files.
    File,
}

/// Every key with its default, in the order `run.config` lists them.
const DEFAULTS: &[(&str, &str)] = &[
    ("direction", "text2mol"),
    ("out_dir", "runs/default"),
    ("corpus_dir", ""),
    ("synthetic", "0"),
    ("train_file", ""),
    ("validation_file", ""),
    ("test_file", ""),
    ("seed", "0"),
    ("sampling", "scaffold"),
    ("k", "16"),
    ("r", "4"),
    ("prompt_budget", "12000"),
    ("llm", "stub"),
    ("replay_log", ""),
    ("endpoint", ""),
    ("model", "stub"),
    ("credential_env", "LLM_API_KEY"),
    ("timeout_secs", "60"),
    ("max_retries", "3"),
    ("temperature", "0"),
    ("concurrency", "4"),
    ("llm_splits", "all"),
    ("embeddings", "stub"),
    ("embeddings_dir", ""),
    ("batch_size", "32"),
    ("epochs", "100"),
    ("d", "128"),
    ("heads", "4"),
    ("head_dim", "32"),
    ("layers", "2"),
    ("ffn_mult", "4"),
    ("max_len", "160"),
    ("lr", "0.001"),
    ("lr_patience", "10"),
    ("early_stop", "25"),
    ("monitor", "validation"),
    ("max_steps", "0"),
    ("drop_exp", "false"),
    ("drop_org", "false"),
    ("drop_pred", "false"),
    ("linear_fuse", "false"),
    ("split", "test"),
    ("checkpoint", ""),
    ("gen_max_len", "150"),
    ("report_format", "text"),
    ("ablate", "false"),
    ("dump_attention", "false"),
    ("query", ""),
];

/// Flat `key = value` settings with defaults for every key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

fn config_err(msg: impl Into<String>) -> PipelineError {
    let msg = msg.into();
    // module errors already carry their own prefix
    let msg = msg.strip_prefix("configuration error: ").map(str::to_string).unwrap_or(msg);
    PipelineError::Config(msg)
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(config_err(format!("unknown setting `{key}`"))),
        }
    }

    /// Applies `--key value` pairs; a `--flag` with no value means `true`.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), PipelineError> {
        let mut i = 0;
        while i < args.len() {
            let key = args[i]
                .strip_prefix("--")
                .ok_or_else(|| config_err(format!("expected --key, found `{}`", args[i])))?;
            let key = key.replace('-', "_");
            if let Some((k, v)) = key.split_once('=') {
                self.set(k, v)?;
                i += 1;
            } else if let Some(v) = args.get(i + 1).filter(|a| !a.starts_with("--")) {
                self.set(&key, v)?;
                i += 2;
            } else {
                self.set(&key, "true")?;
                i += 1;
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T, PipelineError> {
        self.get(key)
            .parse()
            .map_err(|_| config_err(format!("`{key}` has invalid value `{}`", self.get(key))))
    }

    fn flag(&self, key: &str) -> Result<bool, PipelineError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(config_err(format!("`{key}` must be true or false, got `{v}`"))),
        }
    }

    /// The resolved settings, one `key = value` per line in a fixed order.
    pub fn render(&self) -> String {
        let mut s = String::from("# resolved run configuration\n");
        for (k, _) in DEFAULTS {
            s.push_str(&format!("{k} = {}\n", self.get(k)));
        }
        s
    }

    pub fn direction(&self) -> Result<Direction, PipelineError> {
        self.get("direction").parse().map_err(|e: String| config_err(e))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        match self.get("corpus_dir") {
            "" => self.out_dir().join("corpus"),
            p => PathBuf::from(p),
        }
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.out_dir().join("predictions")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        match self.get("checkpoint") {
            "" => self.out_dir().join("model.ckpt"),
            p => PathBuf::from(p),
        }
    }

    pub fn replay_log(&self) -> PathBuf {
        match self.get("replay_log") {
            "" => self.out_dir().join("replay.jsonl"),
            p => PathBuf::from(p),
        }
    }

    pub fn seed(&self) -> Result<u64, PipelineError> {
        self.parsed("seed")
    }

    pub fn synthetic(&self) -> Result<usize, PipelineError> {
        self.parsed("synthetic")
    }

    pub fn concurrency(&self) -> Result<usize, PipelineError> {
        self.parsed("concurrency")
    }

    pub fn gen_max_len(&self) -> Result<usize, PipelineError> {
        self.parsed("gen_max_len")
    }

    /// Split evaluated or ablated.
    pub fn split(&self) -> Result<Split, PipelineError> {
        self.get("split").parse().map_err(|e: String| config_err(e))
    }

    /// Splits `run-llm` queries: `all` or a comma list.
    pub fn llm_splits(&self) -> Result<Vec<Split>, PipelineError> {
        match self.get("llm_splits") {
            "all" => Ok(Split::ALL.to_vec()),
            list => list
                .split(',')
                .map(|s| s.trim().parse().map_err(|e: String| config_err(e)))
                .collect(),
        }
    }

    pub fn report_format(&self) -> Result<ReportFormat, PipelineError> {
        ReportFormat::from_str(self.get("report_format")).map_err(|e| config_err(e.to_string()))
    }

    pub fn llm_mode(&self) -> Result<LlmMode, PipelineError> {
        match self.get("llm") {
            "stub" => Ok(LlmMode::Stub),
            "replay" => Ok(LlmMode::Replay),
            "live" => Ok(LlmMode::Live),
            v => Err(config_err(format!("`llm` must be stub, replay or live, got `{v}`"))),
        }
    }

    pub fn embed_mode(&self) -> Result<EmbedMode, PipelineError> {
        match self.get("embeddings") {
            "stub" => Ok(EmbedMode::Stub),
            "file" => Ok(EmbedMode::File),
            v => Err(config_err(format!("`embeddings` must be stub or file, got `{v}`"))),
        }
    }

    pub fn prompt_config(&self) -> Result<PromptConfig, PipelineError> {
        let sampling: Sampling = self.get("sampling").parse().map_err(|e: String| config_err(e))?;
        Ok(PromptConfig {
            k: self.parsed("k")?,
            r: self.parsed("r")?,
            sampling,
            seed: self.seed()?,
            budget: self.parsed("prompt_budget")?,
        })
    }

    pub fn provider_config(&self) -> Result<ProviderConfig, PipelineError> {
        Ok(ProviderConfig {
            endpoint: self.get("endpoint").to_string(),
            model: self.get("model").to_string(),
            timeout_secs: self.parsed("timeout_secs")?,
            max_retries: self.parsed("max_retries")?,
            temperature: self.parsed("temperature")?,
            credential_env: self.get("credential_env").to_string(),
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, PipelineError> {
        let max_steps: usize = self.parsed("max_steps")?;
        let monitor: Monitor = self.get("monitor").parse().map_err(|e: String| config_err(e))?;
        let cfg = TrainConfig {
            batch_size: self.parsed("batch_size")?,
            epochs: self.parsed("epochs")?,
            d: self.parsed("d")?,
            heads: self.parsed("heads")?,
            head_dim: self.parsed("head_dim")?,
            layers: self.parsed("layers")?,
            ffn_mult: self.parsed("ffn_mult")?,
            max_len: self.parsed("max_len")?,
            lr: self.parsed("lr")?,
            lr_patience: self.parsed("lr_patience")?,
            early_stop: self.parsed("early_stop")?,
            seed: self.seed()?,
            r: self.parsed("r")?,
            k: self.parsed("k")?,
            monitor,
            max_steps: (max_steps > 0).then_some(max_steps),
        };
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    /// Ablation switches; mol2text always runs without the prediction
    /// stream.
    pub fn ablation(&self) -> Result<Ablation, PipelineError> {
        let a = Ablation {
            drop_exp: self.flag("drop_exp")?,
            drop_org: self.flag("drop_org")?,
            drop_pred: self.flag("drop_pred")? || self.direction()? == Direction::Mol2Text,
            linear_fuse: self.flag("linear_fuse")?,
        };
        a.validate().map_err(|e| config_err(e.to_string()))
    }

    pub fn ablate(&self) -> Result<bool, PipelineError> {
        self.flag("ablate")
    }

    pub fn dump_attention(&self) -> Result<bool, PipelineError> {
        self.flag("dump_attention")
    }

    /// Every setting checked at once, before any command does work.
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.direction()?;
        self.seed()?;
        self.synthetic()?;
        self.concurrency()?;
        self.gen_max_len()?;
        self.llm_mode()?;
        self.embed_mode()?;
        self.prompt_config()?;
        self.provider_config()?;
        self.train_config()?;
        self.ablation()?;
        self.ablate()?;
        self.dump_attention()?;
        self.report_format()?;
        self.split()?;
        self.llm_splits()?;
        if self.embed_mode()? == EmbedMode::File && self.get("embeddings_dir").is_empty() {
            return Err(config_err("`embeddings = file` needs `embeddings_dir`"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_override_render() {
        let mut c = RunConfig::parse("# comment\nd = 8\nheads=2\n").unwrap();
        assert_eq!(c.get("d"), "8");
        c.apply_overrides(&["--head-dim".into(), "4".into(), "--ablate".into(), "--lr=0.01".into()]).unwrap();
        assert_eq!(c.get("head_dim"), "4");
        assert!(c.ablate().unwrap());
        assert_eq!(c.train_config().unwrap().lr, 0.01);
        let again = RunConfig::parse(&c.render()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn errors_are_config_errors() {
        assert!(matches!(RunConfig::parse("nope = 1"), Err(PipelineError::Config(_))));
        assert!(matches!(RunConfig::parse("d"), Err(PipelineError::Config(_))));
        let c = RunConfig::parse("heads = 3").unwrap();
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        let c = RunConfig::parse("drop_exp = true\ndrop_org = true").unwrap();
        assert!(matches!(c.ablation(), Err(PipelineError::Config(_))));
        let c = RunConfig::parse("llm = carrier-pigeon").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn mol2text_is_unimodal() {
        let c = RunConfig::parse("direction = mol2text").unwrap();
        assert!(c.ablation().unwrap().drop_pred);
        assert!(RunConfig::default().validate().is_ok());
    }
}
