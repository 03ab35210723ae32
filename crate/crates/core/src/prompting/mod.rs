//! Demonstration sampling and few-shot prompt assembly.

mod tfidf;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TextMoleculePair;
use crate::smiles::{morgan_fingerprint, parse_smiles, BitFingerprint, SmilesError};

pub use tfidf::HashedTfIdf;

pub const TEXT2MOL_TEMPLATE: &str = include_str!("../../assets/prompts/text2mol_v1.txt");
pub const MOL2TEXT_TEMPLATE: &str = include_str!("../../assets/prompts/mol2text_v1.txt");
pub const TEMPLATE_VERSION: &str = "v1";
pub const DEFAULT_K: usize = 16;
pub const DEFAULT_R: usize = 4;
pub const DEFAULT_BUDGET: usize = 12_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "text2mol")]
    Text2Mol,
    #[serde(rename = "mol2text")]
    Mol2Text,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Text2Mol => "text2mol",
            Direction::Mol2Text => "mol2text",
        }
    }

    /// (input, target) of a pair in this direction.
    pub fn io<'a>(self, p: &'a TextMoleculePair) -> (&'a str, &'a str) {
        match self {
            Direction::Text2Mol => (&p.description, &p.smiles),
            Direction::Mol2Text => (&p.smiles, &p.description),
        }
    }

    pub fn template(self) -> &'static str {
        match self {
            Direction::Text2Mol => TEXT2MOL_TEMPLATE,
            Direction::Mol2Text => MOL2TEXT_TEMPLATE,
        }
    }

    pub fn instruction(self) -> &'static str {
        self.template().lines().next().unwrap_or("")
    }
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text2mol" => Ok(Direction::Text2Mol),
            "mol2text" => Ok(Direction::Mol2Text),
            other => Err(format!("unknown direction '{other}' (expected text2mol or mol2text)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "scaffold")]
    Scaffold,
}

impl std::str::FromStr for Sampling {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Sampling::Random),
            "scaffold" => Ok(Sampling::Scaffold),
            other => Err(format!("unknown sampling '{other}' (expected random or scaffold)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub description: String,
    pub smiles: String,
    /// Score against the query; 0 for random sampling.
    pub similarity: f64,
}

impl Demonstration {
    fn from_pair(p: &TextMoleculePair, similarity: f64) -> Self {
        Self {
            id: p.id.clone(),
            description: p.description.clone(),
            smiles: p.smiles.clone(),
            similarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    pub direction: Direction,
    pub instruction: String,
    /// In rendering order.
    pub demonstrations: Vec<Demonstration>,
    pub query: String,
    pub rendered: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("prompt domain error: {0}")]
    Domain(String),
    #[error("embedding provider failed on {id}: {reason}")]
    Provider { id: String, reason: String },
    #[error("invalid query SMILES: {0}")]
    Smiles(#[from] SmilesError),
    #[error("rendered prompt has {len} characters, budget is {budget}")]
    Budget { len: usize, budget: usize },
    #[error("leakage: demonstration {0} is the query itself")]
    Leakage(String),
}

/// Fixed-length sentence vectors for text scaffold sampling.
pub trait TextEmbedder: Send + Sync {
    fn id(&self) -> String;
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, String>;
}

fn check_k(k: usize, n: usize) -> Result<(), PromptError> {
    if k > n {
        return Err(PromptError::Domain(format!("k = {k} exceeds the {n} training pairs")));
    }
    Ok(())
}

/// `k` distinct pairs drawn uniformly without replacement.
pub fn sample_random(train: &[TextMoleculePair], k: usize, seed: u64) -> Result<Vec<Demonstration>, PromptError> {
    check_k(k, train.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, train.len(), k)
        .into_iter()
        .map(|i| Demonstration::from_pair(&train[i], 0.0))
        .collect())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Indices of the `k` highest scores, descending, ties by position.
fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Precomputed description embeddings of the training split.
pub struct TextIndex<'a> {
    train: &'a [TextMoleculePair],
    vectors: Vec<Vec<f64>>,
    embedder: &'a dyn TextEmbedder,
}

impl<'a> TextIndex<'a> {
    pub fn new(train: &'a [TextMoleculePair], embedder: &'a dyn TextEmbedder) -> Result<Self, PromptError> {
        let vectors = train
            .iter()
            .map(|p| {
                embedder.embed_text(&p.description).map_err(|reason| PromptError::Provider {
                    id: p.id.clone(),
                    reason,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { train, vectors, embedder })
    }

    /// Cosine ranking of all training pairs against `query`.
    pub fn scores(&self, query: &str) -> Result<Vec<f64>, PromptError> {
        let q = self.embedder.embed_text(query).map_err(|reason| PromptError::Provider {
            id: "query".into(),
            reason,
        })?;
        Ok(self.vectors.iter().map(|v| cosine(&q, v)).collect())
    }

    pub fn top_k(&self, query: &str, k: usize, exclude: Option<&str>) -> Result<Vec<Demonstration>, PromptError> {
        let pool = self.train.len() - usize::from(exclude.is_some_and(|id| self.train.iter().any(|p| p.id == id)));
        check_k(k, pool)?;
        let scores = self.scores(query)?;
        Ok(top_k(&scores, self.train.len())
            .into_iter()
            .filter(|&i| Some(self.train[i].id.as_str()) != exclude)
            .take(k)
            .map(|i| Demonstration::from_pair(&self.train[i], scores[i]))
            .collect())
    }
}

pub fn sample_scaffold_text(
    train: &[TextMoleculePair],
    query_description: &str,
    k: usize,
    embedder: &dyn TextEmbedder,
) -> Result<Vec<Demonstration>, PromptError> {
    check_k(k, train.len())?;
    TextIndex::new(train, embedder)?.top_k(query_description, k, None)
}

pub const SCAFFOLD_RADIUS: u32 = 2;
pub const SCAFFOLD_BITS: usize = 2048;

/// Precomputed Morgan fingerprints of the training split.
pub struct MolIndex<'a> {
    train: &'a [TextMoleculePair],
    fps: Vec<BitFingerprint>,
}

impl<'a> MolIndex<'a> {
    pub fn new(train: &'a [TextMoleculePair]) -> Result<Self, PromptError> {
        let fps = train
            .iter()
            .map(|p| Ok(morgan_fingerprint(&parse_smiles(&p.smiles)?, SCAFFOLD_RADIUS, SCAFFOLD_BITS).map_err(|e| PromptError::Domain(e.to_string()))?))
            .collect::<Result<Vec<_>, PromptError>>()?;
        Ok(Self { train, fps })
    }

    pub fn scores(&self, query_smiles: &str) -> Result<Vec<f64>, PromptError> {
        let q = morgan_fingerprint(&parse_smiles(query_smiles)?, SCAFFOLD_RADIUS, SCAFFOLD_BITS)
            .map_err(|e| PromptError::Domain(e.to_string()))?;
        self.fps
            .iter()
            .map(|f| q.tanimoto(f).map_err(|e| PromptError::Domain(e.to_string())))
            .collect()
    }

    pub fn top_k(&self, query_smiles: &str, k: usize, exclude: Option<&str>) -> Result<Vec<Demonstration>, PromptError> {
        let pool = self.train.len() - usize::from(exclude.is_some_and(|id| self.train.iter().any(|p| p.id == id)));
        check_k(k, pool)?;
        let scores = self.scores(query_smiles)?;
        Ok(top_k(&scores, self.train.len())
            .into_iter()
            .filter(|&i| Some(self.train[i].id.as_str()) != exclude)
            .take(k)
            .map(|i| Demonstration::from_pair(&self.train[i], scores[i]))
            .collect())
    }
}

pub fn sample_scaffold_mol(train: &[TextMoleculePair], query_smiles: &str, k: usize) -> Result<Vec<Demonstration>, PromptError> {
    check_k(k, train.len())?;
    MolIndex::new(train)?.top_k(query_smiles, k, None)
}

/// Single-pass `{name}` substitution; substituted text is not rescanned.
fn fill(template: &str, values: &HashMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if values.contains_key(&after[..close]) => {
                out.push_str(&values[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Renders the few-shot prompt. Demonstrations keep the given order; an
/// empty list gives the zero-shot prompt.
pub fn build_prompt(
    demos: &[Demonstration],
    query: &str,
    direction: Direction,
    r: usize,
    budget: usize,
) -> Result<AugmentedPrompt, PromptError> {
    let mut block = String::new();
    for d in demos {
        let (desc, smi) = (one_line(&d.description), one_line(&d.smiles));
        match direction {
            Direction::Text2Mol => block.push_str(&format!("Description: {desc}\nSMILES: {smi}\n\n")),
            Direction::Mol2Text => block.push_str(&format!("SMILES: {smi}\nDescription: {desc}\n\n")),
        }
    }
    let values = HashMap::from([
        ("demonstrations", block),
        ("query", one_line(query)),
        ("r", r.to_string()),
    ]);
    let rendered = fill(direction.template(), &values);
    let len = rendered.chars().count();
    if len > budget {
        return Err(PromptError::Budget { len, budget });
    }
    Ok(AugmentedPrompt {
        direction,
        instruction: direction.instruction().to_string(),
        demonstrations: demos.to_vec(),
        query: one_line(query),
        rendered,
    })
}

/// Sorts demonstrations so the most similar one sits next to the query.
pub fn ascending_similarity(mut demos: Vec<Demonstration>) -> Vec<Demonstration> {
    demos.reverse();
    demos.sort_by(|a, b| a.similarity.total_cmp(&b.similarity));
    demos
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub k: usize,
    pub r: usize,
    pub sampling: Sampling,
    pub seed: u64,
    pub budget: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            r: DEFAULT_R,
            sampling: Sampling::Scaffold,
            seed: 0,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Builds prompts for queries drawn from any split, never using the query
/// pair itself as a demonstration.
pub struct PromptBuilder<'a> {
    train: &'a [TextMoleculePair],
    config: PromptConfig,
    direction: Direction,
    text_index: Option<TextIndex<'a>>,
    mol_index: Option<MolIndex<'a>>,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(
        train: &'a [TextMoleculePair],
        direction: Direction,
        config: PromptConfig,
        embedder: &'a dyn TextEmbedder,
    ) -> Result<Self, PromptError> {
        let (text_index, mol_index) = match (config.sampling, direction) {
            (Sampling::Random, _) => (None, None),
            (Sampling::Scaffold, Direction::Text2Mol) => (Some(TextIndex::new(train, embedder)?), None),
            (Sampling::Scaffold, Direction::Mol2Text) => (None, Some(MolIndex::new(train)?)),
        };
        Ok(Self {
            train,
            config,
            direction,
            text_index,
            mol_index,
        })
    }

    pub fn config(&self) -> &PromptConfig {
        &self.config
    }

    pub fn demonstrations(&self, query: &TextMoleculePair) -> Result<Vec<Demonstration>, PromptError> {
        let k = self.config.k;
        let exclude = Some(query.id.as_str());
        let demos = match (&self.text_index, &self.mol_index) {
            (Some(t), _) => ascending_similarity(t.top_k(&query.description, k, exclude)?),
            (_, Some(m)) => ascending_similarity(m.top_k(&query.smiles, k, exclude)?),
            _ => {
                let pool: Vec<TextMoleculePair> = self.train.iter().filter(|p| p.id != query.id).cloned().collect();
                let seed = self.config.seed ^ crate::smiles::fnv1a64(query.id.as_bytes());
                sample_random(&pool, k, seed)?
            }
        };
        if let Some(d) = demos.iter().find(|d| d.id == query.id) {
            return Err(PromptError::Leakage(d.id.clone()));
        }
        Ok(demos)
    }

    pub fn prompt(&self, query: &TextMoleculePair) -> Result<AugmentedPrompt, PromptError> {
        let demos = self.demonstrations(query)?;
        let (input, _) = self.direction.io(query);
        build_prompt(&demos, input, self.direction, self.config.r, self.config.budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(id: &str, smiles: &str, description: &str) -> TextMoleculePair {
        TextMoleculePair { id: id.into(), smiles: smiles.into(), description: description.into() }
    }

    fn demo(s: &str, d: &str, sim: f64) -> Demonstration {
        Demonstration { id: s.into(), description: d.into(), smiles: s.into(), similarity: sim }
    }

    #[test]
    fn template_placeholders() {
        for t in [TEXT2MOL_TEMPLATE, MOL2TEXT_TEMPLATE] {
            for p in ["{demonstrations}", "{query}", "{r}"] {
                assert_eq!(t.matches(p).count(), 1, "{p}");
            }
        }
        assert_eq!(
            Direction::Text2Mol.instruction(),
            "Below are the textual descriptions -- chemical SMILES representation pairs. Generate the chemical SMILES representation for the textual description provided below."
        );
    }

    #[test]
    fn two_demos_rendered() {
        let demos = [demo("CCO", "ethanol", 0.2), demo("CC=O", "acetaldehyde", 0.5)];
        let p = build_prompt(&demos, "an alcohol {query}", Direction::Text2Mol, 4, DEFAULT_BUDGET).unwrap();
        assert!(p.rendered.contains("SMILES: CCO\n"));
        assert!(p.rendered.contains("SMILES: CC=O\n"));
        assert_eq!(p.rendered.matches("an alcohol {query}").count(), 1);
        assert!(p.rendered.find("ethanol").unwrap() < p.rendered.find("acetaldehyde").unwrap());
        assert!(p.rendered.contains("top 4"));
    }

    #[test]
    fn zero_shot() {
        let p = build_prompt(&[], "a gas", Direction::Text2Mol, 4, DEFAULT_BUDGET).unwrap();
        assert!(p.rendered.starts_with(Direction::Text2Mol.instruction()));
        assert!(!p.rendered.contains("SMILES: C"));
        assert!(p.rendered.contains("Description: a gas\nSMILES:"));
    }

    #[test]
    fn budget_enforced() {
        let long = "x".repeat(DEFAULT_BUDGET);
        assert!(matches!(
            build_prompt(&[], &long, Direction::Text2Mol, 4, DEFAULT_BUDGET),
            Err(PromptError::Budget { .. })
        ));
    }

    #[test]
    fn random_sampling() {
        let train: Vec<_> = (0..4).map(|i| pair(&i.to_string(), "C", &format!("d{i}"))).collect();
        let all = sample_random(&train, 4, 3).unwrap();
        let mut ids: Vec<_> = all.iter().map(|d| d.id.clone()).collect();
        ids.sort();
        assert_eq!(ids, ["0", "1", "2", "3"]);
        assert_eq!(sample_random(&train, 2, 9).unwrap(), sample_random(&train, 2, 9).unwrap());
        assert!(sample_random(&train, 5, 0).is_err());
    }

    #[test]
    fn mol_scaffold_self_first() {
        let train = vec![pair("a", "CCO", "x"), pair("b", "c1ccccc1", "y"), pair("c", "CCN", "z")];
        let d = sample_scaffold_mol(&train, "c1ccccc1", 3).unwrap();
        assert_eq!(d[0].id, "b");
        assert_eq!(d[0].similarity, 1.0);
        assert!(d.windows(2).all(|w| w[0].similarity >= w[1].similarity));
        assert!(sample_scaffold_mol(&train, "C(", 1).is_err());
    }

    #[test]
    fn builder_excludes_query() {
        let train: Vec<_> = (0..6).map(|i| pair(&i.to_string(), "CC", &format!("alkane number {i}"))).collect();
        let emb = HashedTfIdf::fit(train.iter().map(|p| p.description.as_str()), 256);
        for sampling in [Sampling::Random, Sampling::Scaffold] {
            let cfg = PromptConfig { k: 5, sampling, ..PromptConfig::default() };
            for dir in [Direction::Text2Mol, Direction::Mol2Text] {
                let b = PromptBuilder::new(&train, dir, cfg.clone(), &emb).unwrap();
                let demos = b.demonstrations(&train[2]).unwrap();
                assert_eq!(demos.len(), 5);
                assert!(demos.iter().all(|d| d.id != "2"));
            }
        }
    }
}
