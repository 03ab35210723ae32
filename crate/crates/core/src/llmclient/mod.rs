//! Text-in/text-out LLM access: retrying client, record/replay log,
//! deterministic offline providers and response parsing.

#[cfg(feature = "live")]
mod live;
mod parse;
mod providers;
mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[cfg(feature = "live")]
pub use live::HttpProvider;
pub use parse::{parse_response, render_response, CandidateKind, LlmPrediction};
pub use providers::{FixedProvider, RefusingProvider, ScriptedProvider, StubLlm};
pub use replay::{ReplayLog, ReplayProvider, ReplayRecord};

/// Failure of a single provider call.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("provider error: {0}")]
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("transport error after {attempts} attempts: {last}")]
    Transport { attempts: usize, last: String },
    #[error("credential error: {0}")]
    Credential(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("no candidates found in response: {raw:?}")]
    ParseEmpty { raw: String },
    #[error("replay log error: {0}")]
    Log(String),
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &str) -> Result<String, LlmError>;
}

/// Connection settings. Only the *name* of the credential variable is
/// stored, never its value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub temperature: f64,
    pub credential_env: String,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "stub".into(),
            timeout_secs: 60,
            max_retries: 3,
            temperature: 0.0,
            credential_env: "LLM_API_KEY".into(),
        }
    }
}

pub fn prompt_sha256(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Exponential backoff: base · factor^attempt, stretched by up to 25%
/// seeded jitter.
#[derive(Clone)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_retries: usize,
    pub jitter_seed: u64,
    pub sleeper: Sleeper,
}

impl std::fmt::Debug for RetryPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RetryPolicy")
            .field("base", &self.base)
            .field("factor", &self.factor)
            .field("max_retries", &self.max_retries)
            .finish()
    }
}

impl RetryPolicy {
    pub fn new(max_retries: usize) -> Self {
        Self {
            base: Duration::from_secs(1),
            factor: 2.0,
            max_retries,
            jitter_seed: 0,
            sleeper: Arc::new(std::thread::sleep),
        }
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Delay before retry number `attempt` (0-based) of the prompt with
    /// this hash.
    pub fn delay(&self, attempt: usize, prompt_hash: &str) -> Duration {
        let mut rng = ChaCha8Rng::seed_from_u64(self.jitter_seed ^ crate::smiles::fnv1a64(prompt_hash.as_bytes()) ^ attempt as u64);
        let jitter: f64 = rng.gen_range(0.0..0.25);
        self.base.mul_f64(self.factor.powi(attempt as i32) * (1.0 + jitter))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryOutcome {
    pub raw: String,
    pub attempts: usize,
}

pub struct LlmClient {
    provider: Arc<dyn LlmProvider>,
    retry: RetryPolicy,
    log: Option<Mutex<ReplayLog>>,
    requests: AtomicUsize,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn LlmProvider>, retry: RetryPolicy) -> Self {
        Self {
            provider,
            retry,
            log: None,
            requests: AtomicUsize::new(0),
        }
    }

    pub fn with_log(mut self, log: ReplayLog) -> Self {
        self.log = Some(Mutex::new(log));
        self
    }

    pub fn provider_id(&self) -> String {
        self.provider.id()
    }

    /// Provider calls made so far, retries included.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Sends one prompt, retrying transient failures. Nothing is logged.
    pub fn query_unlogged(&self, prompt: &str) -> Result<QueryOutcome, ClientError> {
        let hash = prompt_sha256(prompt);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.provider.complete(prompt) {
                Ok(raw) => {
                    log::debug!("prompt {} answered after {attempt} attempt(s)", &hash[..12]);
                    return Ok(QueryOutcome { raw, attempts: attempt });
                }
                Err(LlmError::Auth(m)) => return Err(ClientError::Credential(m)),
                Err(LlmError::Other(m)) => return Err(ClientError::Provider(m)),
                Err(LlmError::Transient(m)) => {
                    log::info!("prompt {} attempt {attempt} failed: {m}", &hash[..12]);
                    if attempt > self.retry.max_retries {
                        return Err(ClientError::Transport { attempts: attempt, last: m });
                    }
                    (self.retry.sleeper)(self.retry.delay(attempt - 1, &hash));
                }
            }
        }
    }

    fn record(&self, prompt: &str, raw: &str) -> Result<(), ClientError> {
        if let Some(log) = &self.log {
            let mut log = log.lock().map_err(|_| ClientError::Log("log lock poisoned".into()))?;
            log.append(&ReplayRecord::new(prompt, raw, &self.provider.id()))?;
        }
        Ok(())
    }

    /// Sends one prompt and appends the response to the replay log.
    pub fn query(&self, prompt: &str) -> Result<QueryOutcome, ClientError> {
        let out = self.query_unlogged(prompt)?;
        self.record(prompt, &out.raw)?;
        Ok(out)
    }

    /// Runs prompts with at most `concurrency` in flight. Results and log
    /// records keep input order.
    pub fn query_all(&self, prompts: &[String], concurrency: usize) -> Vec<Result<QueryOutcome, ClientError>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<QueryOutcome, ClientError>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..concurrency.clamp(1, prompts.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = self.query_unlogged(&prompts[i]);
                    if let Ok(mut slot) = slots[i].lock() {
                        *slot = Some(r);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(prompts.len());
        for (prompt, slot) in prompts.iter().zip(slots) {
            let r = slot
                .into_inner()
                .ok()
                .flatten()
                .unwrap_or_else(|| Err(ClientError::Provider("worker did not finish".into())));
            let r = match r {
                Ok(o) => self.record(prompt, &o.raw).map(|_| o),
                Err(e) => Err(e),
            };
            out.push(r);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_sleep() -> (Sleeper, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s2 = slept.clone();
        (Arc::new(move |d| s2.lock().unwrap().push(d)), slept)
    }

    #[test]
    fn fixed_passthrough() {
        let c = LlmClient::new(Arc::new(FixedProvider::new("1. CCO")), RetryPolicy::new(0));
        assert_eq!(c.query("p").unwrap().raw, "1. CCO");
    }

    #[test]
    fn retries_then_succeeds() {
        let p = ScriptedProvider::new(vec![
            Err(LlmError::Transient("503".into())),
            Err(LlmError::Transient("timeout".into())),
            Ok("1. C".into()),
        ]);
        let (sleeper, slept) = no_sleep();
        let c = LlmClient::new(Arc::new(p), RetryPolicy::new(3).with_sleeper(sleeper));
        let out = c.query("p").unwrap();
        assert_eq!(out.attempts, 3);
        assert_eq!(c.request_count(), 3);
        let slept = slept.lock().unwrap();
        assert_eq!(slept.len(), 2);
        assert!(slept[0] >= Duration::from_secs(1) && slept[0] < Duration::from_millis(1250));
        assert!(slept[1] >= Duration::from_secs(2) && slept[1] < Duration::from_millis(2500));
    }

    #[test]
    fn exhausted_retries_and_auth() {
        let p = ScriptedProvider::new(vec![Err(LlmError::Transient("x".into())); 5]);
        let (sleeper, _) = no_sleep();
        let c = LlmClient::new(Arc::new(p), RetryPolicy::new(2).with_sleeper(sleeper));
        assert_eq!(c.query("p").unwrap_err(), ClientError::Transport { attempts: 3, last: "x".into() });
        let c = LlmClient::new(Arc::new(RefusingProvider), RetryPolicy::new(5));
        assert!(matches!(c.query("p"), Err(ClientError::Credential(_))));
        assert_eq!(c.request_count(), 1);
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.jsonl");
        let prompts: Vec<String> = (0..6).map(|i| format!("prompt {i}")).collect();
        let live = LlmClient::new(Arc::new(StubLlm::new(4)), RetryPolicy::new(0)).with_log(ReplayLog::create(&path).unwrap());
        let first: Vec<String> = live.query_all(&prompts, 3).into_iter().map(|r| r.unwrap().raw).collect();
        let replay = ReplayProvider::load(&path).unwrap();
        let c = LlmClient::new(Arc::new(replay), RetryPolicy::new(0));
        let second: Vec<String> = c.query_all(&prompts, 2).into_iter().map(|r| r.unwrap().raw).collect();
        assert_eq!(first, second);
        assert!(c.query("never recorded").is_err());
    }
}
