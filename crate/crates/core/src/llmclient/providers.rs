use std::sync::Mutex;

use super::{render_response, LlmError, LlmProvider};

/// Returns the same text for every prompt.
#[derive(Debug, Clone)]
pub struct FixedProvider {
    text: String,
}

impl FixedProvider {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl LlmProvider for FixedProvider {
    fn id(&self) -> String {
        "fixed".into()
    }

    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Ok(self.text.clone())
    }
}

/// Plays back a script of outcomes, one per call; repeats the last one
/// once the script runs out.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Vec<Result<String, LlmError>>,
    next: Mutex<usize>,
}

impl ScriptedProvider {
    pub fn new(script: Vec<Result<String, LlmError>>) -> Self {
        Self { script, next: Mutex::new(0) }
    }
}

impl LlmProvider for ScriptedProvider {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        let mut i = self.next.lock().map_err(|_| LlmError::Other("script lock poisoned".into()))?;
        let out = self
            .script
            .get(*i)
            .or(self.script.last())
            .cloned()
            .unwrap_or_else(|| Err(LlmError::Other("empty script".into())));
        *i += 1;
        out
    }
}

/// Always fails authentication.
#[derive(Debug, Clone, Copy)]
pub struct RefusingProvider;

impl LlmProvider for RefusingProvider {
    fn id(&self) -> String {
        "refusing".into()
    }

    fn complete(&self, _prompt: &str) -> Result<String, LlmError> {
        Err(LlmError::Auth("credential rejected".into()))
    }
}

/// Offline stand-in for a hosted model. It answers with the targets of
/// the prompt's demonstrations, most similar (last rendered) first, and
/// explains the choice in terms of the query.
#[derive(Debug, Clone)]
pub struct StubLlm {
    r: usize,
}

impl StubLlm {
    pub fn new(r: usize) -> Self {
        Self { r: r.max(1) }
    }
}

fn field<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    line.strip_prefix(label).map(str::trim)
}

impl LlmProvider for StubLlm {
    fn id(&self) -> String {
        format!("stub-llm(r={})", self.r)
    }

    fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let lines: Vec<&str> = prompt.lines().collect();
        // the query block is the last input line followed by an empty target label
        let target_label = lines
            .iter()
            .rposition(|l| *l == "SMILES:" || *l == "Description:");
        let (input_label, output_label) = match target_label.map(|i| lines[i]) {
            Some("SMILES:") => ("Description:", "SMILES:"),
            Some(_) => ("SMILES:", "Description:"),
            None => {
                return Ok(render_response(&["C".to_string()], "no demonstrations were given"));
            }
        };
        let query = target_label
            .and_then(|i| i.checked_sub(1))
            .and_then(|i| field(lines[i], input_label))
            .unwrap_or("");
        let mut pairs: Vec<(&str, &str)> = Vec::new();
        for w in lines.windows(2) {
            if let (Some(i), Some(o)) = (field(w[0], input_label), field(w[1], output_label)) {
                if !o.is_empty() {
                    pairs.push((i, o));
                }
            }
        }
        if pairs.is_empty() {
            return Ok(render_response(&["C".to_string()], &format!("no demonstrations resemble {query}")));
        }
        let mut candidates: Vec<String> = Vec::new();
        for (_, o) in pairs.iter().rev() {
            if !candidates.iter().any(|c| c == o) {
                candidates.push(o.to_string());
            }
            if candidates.len() == self.r {
                break;
            }
        }
        let (best_in, best_out) = pairs[pairs.len() - 1];
        let explanation = format!(
            "The query reads {query}. The closest demonstration reads {best_in} and maps to {best_out}, so the candidates follow the most similar examples."
        );
        Ok(render_response(&candidates, &explanation))
    }
}
