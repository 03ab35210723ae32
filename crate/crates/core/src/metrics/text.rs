use std::collections::HashMap;
use std::hash::Hash;

use rust_stemmers::{Algorithm, Stemmer};

use super::MetricError;

/// Numerator used for an n-gram order with zero matches.
pub const BLEU_SMOOTHING: f64 = 1e-9;

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n == 0 || tokens.len() < n {
        return m;
    }
    for w in tokens.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// Sentence BLEU with fixed order and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Bleu {
    weights: Vec<f64>,
}

impl Bleu {
    pub fn new(max_n: usize, weights: Vec<f64>) -> Result<Self, MetricError> {
        if max_n == 0 {
            return Err(MetricError::Domain("BLEU order must be at least 1".into()));
        }
        if weights.len() != max_n {
            return Err(MetricError::Domain(format!(
                "BLEU needs {max_n} weights, got {}",
                weights.len()
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(MetricError::Domain("BLEU weights must be non-negative and sum to 1".into()));
        }
        Ok(Self { weights })
    }

    pub fn uniform(max_n: usize) -> Result<Self, MetricError> {
        Self::new(max_n, vec![1.0 / max_n.max(1) as f64; max_n])
    }

    pub fn max_n(&self) -> usize {
        self.weights.len()
    }

    /// Orders that neither sequence is long enough to contain are left out
    /// and the remaining weights renormalized, so a short string still
    /// scores 1 against itself.
    pub fn score<T: Eq + Hash>(&self, candidate: &[T], reference: &[T]) -> f64 {
        if candidate.is_empty() || reference.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut weight_sum = 0.0;
        for (k, &w) in self.weights.iter().enumerate() {
            let n = k + 1;
            if candidate.len() < n && reference.len() < n {
                continue;
            }
            let cand = ngram_counts(candidate, n);
            let refc = ngram_counts(reference, n);
            let total: usize = cand.values().sum();
            let matched: usize = cand
                .iter()
                .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
                .sum();
            let p = if total == 0 {
                BLEU_SMOOTHING
            } else if matched == 0 {
                BLEU_SMOOTHING / total as f64
            } else {
                matched as f64 / total as f64
            };
            log_sum += w * p.ln();
            weight_sum += w;
        }
        if weight_sum == 0.0 {
            return 0.0;
        }
        let bp = if candidate.len() < reference.len() {
            (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
        } else {
            1.0
        };
        (bp * (log_sum / weight_sum).exp()).clamp(0.0, 1.0)
    }
}

/// ROUGE-N recall. When the reference has no n-grams of this order the
/// score is 1 for an identical nonempty candidate and 0 otherwise.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> f64 {
    if reference.is_empty() {
        return 0.0;
    }
    let refc = ngram_counts(reference, n);
    let total: usize = refc.values().sum();
    if total == 0 {
        return if candidate == reference { 1.0 } else { 0.0 };
    }
    let cand = ngram_counts(candidate, n);
    let matched: usize = refc
        .iter()
        .map(|(g, &c)| c.min(cand.get(g).copied().unwrap_or(0)))
        .sum();
    matched as f64 / total as f64
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L: F1 of LCS precision and recall.
pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    if reference.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// METEOR without synonymy: exact then stemmed unigram alignment,
/// F_mean with alpha 0.9 and the fragmentation penalty.
pub fn meteor_simplified(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let stemmer = Stemmer::create(Algorithm::English);
    let mut ref_used = vec![false; reference.len()];
    let mut align: Vec<Option<usize>> = vec![None; candidate.len()];
    for (i, c) in candidate.iter().enumerate() {
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && reference[j] == *c) {
            ref_used[j] = true;
            align[i] = Some(j);
        }
    }
    let ref_stems: Vec<String> = reference.iter().map(|w| stemmer.stem(w).into_owned()).collect();
    for (i, c) in candidate.iter().enumerate() {
        if align[i].is_some() {
            continue;
        }
        let s = stemmer.stem(c);
        if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && ref_stems[j] == s) {
            ref_used[j] = true;
            align[i] = Some(j);
        }
    }
    let pairs: Vec<(usize, usize)> = align
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect();
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let mut chunks = 1;
    for w in pairs.windows(2) {
        if !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1) {
            chunks += 1;
        }
    }
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = p * r / (0.9 * p + 0.1 * r);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    fmean * (1.0 - penalty)
}

/// Word tokens for description metrics: lowercase alphanumeric runs, with
/// every other non-space character as its own token.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chars(s: &str) -> Vec<char> {
        s.chars().collect()
    }

    fn words(s: &str) -> Vec<String> {
        word_tokens(s)
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("CCO", "CCO"), 0);
        assert_eq!(levenshtein("CCO", "CC=O"), 1);
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
    }

    #[test]
    fn bleu_examples() {
        let b2 = Bleu::uniform(2).unwrap();
        let s = b2.score(&chars("CC"), &chars("CCO"));
        assert!((s - (-0.5f64).exp()).abs() < 1e-12, "{s}");
        let b4 = Bleu::uniform(4).unwrap();
        assert_eq!(b4.score(&chars("CCO"), &chars("CCO")), 1.0);
        assert!(b4.score(&chars("CCCC"), &chars("OOOO")) <= 1e-4);
        assert_eq!(b4.score(&chars(""), &chars("C")), 0.0);
        assert!(Bleu::new(2, vec![0.5, 0.6]).is_err());
        assert!(Bleu::new(0, vec![]).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_n(&words("a b c"), &words("a c"), 1), 1.0);
        assert_eq!(rouge_n(&words("a b c"), &words("a c"), 2), 0.0);
        let l = rouge_l(&words("a b d c"), &words("a b c"));
        assert!((l - 2.0 * 0.75 / 1.75).abs() < 1e-12);
        assert_eq!(rouge_n(&words("a"), &words(""), 1), 0.0);
        assert_eq!(rouge_n(&words("word"), &words("word"), 2), 1.0);
    }

    #[test]
    fn meteor_examples() {
        let t = words("the cat sat on the mat");
        let m = t.len() as f64;
        let s = meteor_simplified(&t, &t);
        assert!((s - (1.0 - 0.5 / m.powi(3))).abs() < 1e-12);
        assert_eq!(meteor_simplified(&words("dog"), &words("cat")), 0.0);
        assert!(meteor_simplified(&words("cats"), &words("cat")) > 0.0);
    }

    #[test]
    fn tokenizer_splits_punctuation() {
        assert_eq!(word_tokens("An acid, (pH<7)."), vec!["an", "acid", ",", "(", "ph", "<", "7", ")", "."]);
    }
}
