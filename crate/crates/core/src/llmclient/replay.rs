use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{prompt_sha256, ClientError, LlmError, LlmProvider};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub prompt_sha256: String,
    pub raw_response: String,
    pub provider_id: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl ReplayRecord {
    pub fn new(prompt: &str, raw: &str, provider_id: &str) -> Self {
        Self {
            prompt_sha256: prompt_sha256(prompt),
            raw_response: raw.to_string(),
            provider_id: provider_id.to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }
}

/// Append-only JSONL log of responses.
#[derive(Debug)]
pub struct ReplayLog {
    path: PathBuf,
    file: File,
}

impl ReplayLog {
    /// Opens for appending, creating the file if needed.
    pub fn create(path: &Path) -> Result<Self, ClientError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ClientError::Log(format!("{}: {e}", path.display())))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &ReplayRecord) -> Result<(), ClientError> {
        let line = serde_json::to_string(record).map_err(|e| ClientError::Log(e.to_string()))?;
        writeln!(self.file, "{line}").map_err(|e| ClientError::Log(format!("{}: {e}", self.path.display())))
    }

    pub fn read(path: &Path) -> Result<Vec<ReplayRecord>, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::Log(format!("{}: {e}", path.display())))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| ClientError::Log(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }
}

/// Serves recorded responses by prompt hash and never touches the network.
/// When a prompt was recorded more than once the first response wins.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    responses: HashMap<String, String>,
}

impl ReplayProvider {
    pub fn from_records(records: Vec<ReplayRecord>) -> Self {
        let mut responses = HashMap::new();
        for r in records {
            responses.entry(r.prompt_sha256).or_insert(r.raw_response);
        }
        Self { responses }
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        Ok(Self::from_records(ReplayLog::read(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl LlmProvider for ReplayProvider {
    fn id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let h = prompt_sha256(prompt);
        self.responses
            .get(&h)
            .cloned()
            .ok_or_else(|| LlmError::Other(format!("no recorded response for prompt {h}")))
    }
}
