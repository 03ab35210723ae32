//! Adapter for chat-completion style HTTP endpoints.
//!
//! Request: `{"model", "temperature", "messages": [{"role": "user", "content": prompt}]}`
//! with `Authorization: Bearer <value of credential_env>`.
//! Response: text at `choices[0].message.content`.

use std::time::Duration;

use serde_json::json;

use super::{LlmError, LlmProvider, ProviderConfig};

pub struct HttpProvider {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { config, agent }
    }
}

impl LlmProvider for HttpProvider {
    fn id(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let key = std::env::var(&self.config.credential_env)
            .map_err(|_| LlmError::Auth(format!("environment variable {} is not set", self.config.credential_env)))?;
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {key}"))
            .send_json(&body)
            .map_err(|e| LlmError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(format!("HTTP {status}"))),
            408 | 429 | 500..=599 => return Err(LlmError::Transient(format!("HTTP {status}"))),
            _ => return Err(LlmError::Other(format!("HTTP {status}"))),
        }
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Other(format!("bad response body: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Other("response has no choices[0].message.content".into()))
    }
}
