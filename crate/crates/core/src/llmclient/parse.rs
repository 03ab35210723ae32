use serde::{Deserialize, Serialize};

use super::ClientError;

/// What the candidates in a response are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateKind {
    /// First whitespace-separated token of each candidate line.
    Smiles,
    /// The whole candidate line.
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmPrediction {
    pub ranked_smiles: Vec<String>,
    pub explanation: String,
    pub raw: String,
    pub provider_id: String,
}

fn numbered(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    if rest.is_empty() || rest.starts_with(char::is_whitespace) {
        Some(rest.trim())
    } else {
        None
    }
}

fn labelled(line: &str) -> Option<&str> {
    let lower = line.to_ascii_lowercase();
    lower.starts_with("smiles:").then(|| line["smiles:".len()..].trim())
}

fn clean(candidate: &str, kind: CandidateKind) -> String {
    let c = candidate.trim();
    let c = match kind {
        CandidateKind::Smiles => c.split_whitespace().next().unwrap_or(""),
        CandidateKind::Text => c,
    };
    c.trim_matches(|ch| ch == '`' || ch == '"' || ch == '\'').trim().to_string()
}

/// Extracts up to `r_max` ranked candidates and the explanation.
///
/// Candidates come from numbered lines (`1. X`, `2) X`), `SMILES:` lines
/// and lines inside fenced code blocks, in response order; everything
/// after a line starting with "Explanation" is the explanation.
pub fn parse_response(raw: &str, r_max: usize, kind: CandidateKind) -> Result<LlmPrediction, ClientError> {
    let mut candidates: Vec<String> = Vec::new();
    let mut explanation = Vec::new();
    let mut in_explanation = false;
    let mut in_fence = false;
    for line in raw.lines() {
        let t = line.trim();
        if in_explanation {
            explanation.push(line);
            continue;
        }
        if t.to_ascii_lowercase().starts_with("explanation") {
            in_explanation = true;
            let rest = t["explanation".len()..].trim_start();
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            explanation.push(rest.trim_start());
            continue;
        }
        if t.starts_with("```") {
            in_fence = !in_fence;
            continue;
        }
        let found = if in_fence && !t.is_empty() {
            Some(numbered(t).or_else(|| labelled(t)).unwrap_or(t))
        } else {
            numbered(t).or_else(|| labelled(t))
        };
        if let Some(c) = found {
            let c = clean(c, kind);
            if !c.is_empty() && !candidates.contains(&c) && candidates.len() < r_max {
                candidates.push(c);
            }
        }
    }
    if candidates.is_empty() {
        return Err(ClientError::ParseEmpty { raw: raw.to_string() });
    }
    Ok(LlmPrediction {
        ranked_smiles: candidates,
        explanation: explanation.join("\n").trim().to_string(),
        raw: raw.to_string(),
        provider_id: String::new(),
    })
}

/// The response layout the prompts ask for.
pub fn render_response(candidates: &[String], explanation: &str) -> String {
    let mut s = String::new();
    for (i, c) in candidates.iter().enumerate() {
        s.push_str(&format!("{}. {}\n", i + 1, c));
    }
    s.push_str("Explanation: ");
    s.push_str(explanation);
    s.push('\n');
    s
}
