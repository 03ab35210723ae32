//! Evaluation metrics for generated SMILES and generated descriptions.

mod text;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::smiles::{canonical_smiles, morgan_fingerprint, parse_smiles, path_fingerprint, BitFingerprint, MoleculeGraph};

pub use crate::smiles::FingerprintError;
pub use text::{lcs_len, levenshtein, meteor_simplified, rouge_l, rouge_n, word_tokens, Bleu, BLEU_SMOOTHING};

pub const MORGAN_RADIUS: u32 = 2;
pub const MORGAN_BITS: usize = 2048;
pub const PATH_MAX_LEN: u32 = 7;
pub const PATH_BITS: usize = 2048;
pub const FCD_NOTE: &str = "n/a (requires pretrained activity model)";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("domain error: {0}")]
    Domain(String),
}

impl From<FingerprintError> for MetricError {
    fn from(e: FingerprintError) -> Self {
        MetricError::Domain(e.to_string())
    }
}

/// |A ∩ B| / |A ∪ B| of two fingerprints of the same size.
pub fn tanimoto(a: &BitFingerprint, b: &BitFingerprint) -> Result<f64, MetricError> {
    Ok(a.tanimoto(b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub total: usize,
    pub valid_candidates: usize,
    /// Pairs where candidate and reference both parse; denominator of the
    /// fingerprint similarity means.
    pub both_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu: f64,
    pub exact: f64,
    pub canonical_match: f64,
    pub levenshtein_mean: f64,
    pub validity: f64,
    pub morgan_fts_mean: f64,
    pub path_fts_mean: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextMetricsReport {
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub meteor_simplified: f64,
    pub total: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Jsonl,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "jsonl" | "json" => Ok(ReportFormat::Jsonl),
            other => Err(format!("unknown report format '{other}' (expected text or jsonl)")),
        }
    }
}

/// A candidate/reference pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pair {
    pub candidate: String,
    pub reference: String,
}

impl Pair {
    pub fn new(candidate: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            candidate: candidate.into(),
            reference: reference.into(),
        }
    }
}

fn parse_nonempty(s: &str) -> Option<MoleculeGraph> {
    if s.trim().is_empty() {
        return None;
    }
    parse_smiles(s).ok()
}

/// Per-pair values before averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMetrics {
    pub bleu: f64,
    pub exact: bool,
    pub canonical_match: bool,
    pub levenshtein: usize,
    pub candidate_valid: bool,
    /// (morgan, path) when both sides parse.
    pub fts: Option<(f64, f64)>,
}

pub fn score_pair(pair: &Pair, bleu: &Bleu) -> Result<PairMetrics, MetricError> {
    let c: Vec<char> = pair.candidate.chars().collect();
    let r: Vec<char> = pair.reference.chars().collect();
    let cg = parse_nonempty(&pair.candidate);
    let rg = parse_nonempty(&pair.reference);
    let (canonical_match, fts) = match (&cg, &rg) {
        (Some(a), Some(b)) => {
            let m = tanimoto(
                &morgan_fingerprint(a, MORGAN_RADIUS, MORGAN_BITS)?,
                &morgan_fingerprint(b, MORGAN_RADIUS, MORGAN_BITS)?,
            )?;
            let p = tanimoto(
                &path_fingerprint(a, PATH_MAX_LEN, PATH_BITS)?,
                &path_fingerprint(b, PATH_MAX_LEN, PATH_BITS)?,
            )?;
            (canonical_smiles(a) == canonical_smiles(b), Some((m, p)))
        }
        _ => (false, None),
    };
    Ok(PairMetrics {
        bleu: bleu.score(&c, &r),
        exact: pair.candidate == pair.reference,
        canonical_match,
        levenshtein: levenshtein(&pair.candidate, &pair.reference),
        candidate_valid: cg.is_some(),
        fts,
    })
}

/// Text-to-molecule report. Rates are over all pairs; the fingerprint
/// means are over pairs where both sides parse (0 when there are none).
pub fn evaluate_text2mol(pairs: &[Pair]) -> Result<MetricsReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Domain("no pairs to evaluate".into()));
    }
    let bleu = Bleu::uniform(4)?;
    let per = pairs
        .iter()
        .map(|p| score_pair(p, &bleu))
        .collect::<Result<Vec<_>, _>>()?;
    let n = pairs.len() as f64;
    let rate = |f: &dyn Fn(&PairMetrics) -> bool| per.iter().filter(|m| f(m)).count() as f64 / n;
    let both: Vec<(f64, f64)> = per.iter().filter_map(|m| m.fts).collect();
    let mean_of = |xs: &mut dyn Iterator<Item = f64>, k: usize| {
        if k == 0 {
            0.0
        } else {
            xs.sum::<f64>() / k as f64
        }
    };
    Ok(MetricsReport {
        bleu: per.iter().map(|m| m.bleu).sum::<f64>() / n,
        exact: rate(&|m| m.exact),
        canonical_match: rate(&|m| m.canonical_match),
        levenshtein_mean: per.iter().map(|m| m.levenshtein as f64).sum::<f64>() / n,
        validity: rate(&|m| m.candidate_valid),
        morgan_fts_mean: mean_of(&mut both.iter().map(|x| x.0), both.len()),
        path_fts_mean: mean_of(&mut both.iter().map(|x| x.1), both.len()),
        counts: Counts {
            total: pairs.len(),
            valid_candidates: per.iter().filter(|m| m.candidate_valid).count(),
            both_valid: both.len(),
        },
    })
}

/// Molecule-to-text report over word tokens.
pub fn evaluate_mol2text(pairs: &[Pair]) -> Result<TextMetricsReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::Domain("no pairs to evaluate".into()));
    }
    let b2 = Bleu::uniform(2)?;
    let b4 = Bleu::uniform(4)?;
    let mut acc = [0.0f64; 6];
    for p in pairs {
        let c = word_tokens(&p.candidate);
        let r = word_tokens(&p.reference);
        acc[0] += b2.score(&c, &r);
        acc[1] += b4.score(&c, &r);
        acc[2] += rouge_n(&c, &r, 1);
        acc[3] += rouge_n(&c, &r, 2);
        acc[4] += rouge_l(&c, &r);
        acc[5] += meteor_simplified(&c, &r);
    }
    let n = pairs.len() as f64;
    Ok(TextMetricsReport {
        bleu2: acc[0] / n,
        bleu4: acc[1] / n,
        rouge1: acc[2] / n,
        rouge2: acc[3] / n,
        rouge_l: acc[4] / n,
        meteor_simplified: acc[5] / n,
        total: pairs.len(),
    })
}

impl MetricsReport {
    /// `#` notes and the column header of the text table.
    pub fn text_header(&self) -> String {
        let mut s = String::new();
        s.push_str("# BLEU: character-level, 4-gram, uniform weights\n");
        s.push_str("# Exact: raw string equality; Canonical: equal canonical SMILES\n");
        let _ = writeln!(
            s,
            "# FTS over {} of {} pairs where both sides parse; FCD: {FCD_NOTE}",
            self.counts.both_valid, self.counts.total
        );
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>10} {:>12} {:>9} {:>10} {:>11} {:>6}",
            "Model", "BLEU", "Exact", "Canonical", "Levenshtein", "Validity", "Path FTS", "Morgan FTS", "FCD"
        );
        s
    }

    pub fn text_row(&self, label: &str) -> String {
        format!(
            "{:<16} {:>8.4} {:>8.4} {:>10.4} {:>12.4} {:>9.4} {:>10.4} {:>11.4} {:>6}\n",
            label,
            self.bleu,
            self.exact,
            self.canonical_match,
            self.levenshtein_mean,
            self.validity,
            self.path_fts_mean,
            self.morgan_fts_mean,
            "n/a"
        )
    }

    /// Aligned table in the usual column order, with `#` header lines.
    pub fn to_text(&self, label: &str) -> String {
        self.text_header() + &self.text_row(label)
    }

    pub fn to_jsonl(&self, label: &str) -> String {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        if let Some(o) = v.as_object_mut() {
            o.insert("model".into(), label.into());
            o.insert("fcd".into(), FCD_NOTE.into());
        }
        format!("{v}\n")
    }

    pub fn render(&self, label: &str, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.to_text(label),
            ReportFormat::Jsonl => self.to_jsonl(label),
        }
    }
}

impl TextMetricsReport {
    pub fn text_header(&self) -> String {
        let mut s = String::new();
        s.push_str("# BLEU/ROUGE/METEOR on lowercase word and punctuation tokens; METEOR without synonymy\n");
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>18}",
            "Model", "BLEU-2", "BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L", "METEOR(simplified)"
        );
        s
    }

    pub fn text_row(&self, label: &str) -> String {
        format!(
            "{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>18.4}\n",
            label, self.bleu2, self.bleu4, self.rouge1, self.rouge2, self.rouge_l, self.meteor_simplified
        )
    }

    pub fn to_text(&self, label: &str) -> String {
        self.text_header() + &self.text_row(label)
    }

    pub fn to_jsonl(&self, label: &str) -> String {
        let mut v = serde_json::to_value(self).unwrap_or_default();
        if let Some(o) = v.as_object_mut() {
            o.insert("model".into(), label.into());
        }
        format!("{v}\n")
    }

    pub fn render(&self, label: &str, format: ReportFormat) -> String {
        match format {
            ReportFormat::Text => self.to_text(label),
            ReportFormat::Jsonl => self.to_jsonl(label),
        }
    }
}
