use std::collections::{HashMap, HashSet};

use super::TextEmbedder;
use crate::embeddings::word_tokens;
use crate::smiles::fnv1a64;

/// Offline sentence embedder: TF-IDF weights over word tokens hashed into
/// `d` signed buckets, L2-normalized.
#[derive(Debug, Clone)]
pub struct HashedTfIdf {
    d: usize,
    docs: usize,
    df: HashMap<String, usize>,
}

impl HashedTfIdf {
    pub fn fit<'a>(corpus: impl IntoIterator<Item = &'a str>, d: usize) -> Self {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut docs = 0;
        for text in corpus {
            docs += 1;
            let uniq: HashSet<String> = word_tokens(text).into_iter().collect();
            for t in uniq {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        Self { d: d.max(1), docs, df }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn idf(&self, token: &str) -> f64 {
        let df = self.df.get(token).copied().unwrap_or(0);
        ((1 + self.docs) as f64 / (1 + df) as f64).ln() + 1.0
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut tf: HashMap<String, usize> = HashMap::new();
        for t in word_tokens(text) {
            *tf.entry(t).or_insert(0) += 1;
        }
        let mut tokens: Vec<(&String, &usize)> = tf.iter().collect();
        tokens.sort();
        let mut v = vec![0.0; self.d];
        for (t, &c) in tokens {
            let h = fnv1a64(t.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.d as u64) as usize] += sign * c as f64 * self.idf(t);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl TextEmbedder for HashedTfIdf {
    fn id(&self) -> String {
        format!("hashed-tfidf(d={})", self.d)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>, String> {
        Ok(self.vector(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::cosine;

    #[test]
    fn self_similarity_is_one() {
        let docs = ["an alcohol with two carbons", "an aromatic ring", "a ketone"];
        let e = HashedTfIdf::fit(docs, 256);
        let v = e.vector(docs[1]);
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-12);
        assert!(cosine(&v, &e.vector(docs[2])) < 0.99);
        assert_eq!(e.vector("").iter().sum::<f64>(), 0.0);
    }
}
