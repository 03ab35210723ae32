use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::metrics::word_tokens;
use crate::smiles::symbol_tokens;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Symbols every SMILES vocabulary carries regardless of the training data.
const CHEMISTRY_BASE: &[&str] = &[
    "C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "c", "n", "o", "s", "p", "b", "H", "[", "]", "(", ")", "=",
    "#", "+", "-", "1", "2", "3", "4", "5", "6", "7", "8", "9", "%", "0", ".",
];

/// How target strings split into decoder tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VocabKind {
    /// Single characters plus `Cl` and `Br`.
    Smiles,
    /// Lowercase words and punctuation, for descriptions.
    Words,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    kind: VocabKind,
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct VocabRecord {
    kind: VocabKind,
    symbols: Vec<String>,
}

impl Vocab {
    /// Reserved tokens first, then (for SMILES) the chemistry base set, then
    /// any other token seen in `texts` in sorted order.
    pub fn build<'a>(kind: VocabKind, texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut symbols: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        if kind == VocabKind::Smiles {
            symbols.extend(CHEMISTRY_BASE.iter().map(|s| s.to_string()));
        }
        let mut extra = BTreeSet::new();
        for t in texts {
            for tok in split(kind, t) {
                if !symbols.contains(&tok) {
                    extra.insert(tok);
                }
            }
        }
        symbols.extend(extra);
        Self::from_symbols(kind, symbols).expect("built vocabularies are well formed")
    }

    /// Rebuilds a vocabulary from its full ordered symbol list.
    pub fn from_symbols(kind: VocabKind, symbols: Vec<String>) -> Result<Self, String> {
        if symbols.len() < SPECIALS.len() || symbols[..SPECIALS.len()] != SPECIALS {
            return Err("vocabulary must start with the reserved tokens".into());
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(format!("duplicate vocabulary symbol {s:?}"));
            }
        }
        Ok(Self { kind, symbols, index })
    }

    pub fn kind(&self) -> VocabKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Every symbol in index order, reserved tokens included.
    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Token ids of `text` without BOS/EOS, and how many tokens became UNK.
    pub fn encode(&self, text: &str) -> (Vec<usize>, usize) {
        let mut unk = 0;
        let ids = split(self.kind, text)
            .into_iter()
            .map(|t| {
                self.id(&t).unwrap_or_else(|| {
                    unk += 1;
                    UNK
                })
            })
            .collect();
        (ids, unk)
    }

    /// Joins tokens back into text, skipping reserved ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        let toks = ids.iter().filter(|&&i| i >= SPECIALS.len()).filter_map(|&i| self.symbols.get(i));
        match self.kind {
            VocabKind::Smiles => toks.map(String::as_str).collect(),
            VocabKind::Words => {
                let mut s = String::new();
                for t in toks {
                    let glue = t.chars().all(|c| !c.is_alphanumeric() && c != '(');
                    if !s.is_empty() && !glue && !s.ends_with('(') {
                        s.push(' ');
                    }
                    s.push_str(t);
                }
                s
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabRecord { kind: self.kind, symbols: self.symbols.clone() })
            .expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let r: VocabRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::from_symbols(r.kind, r.symbols)
    }
}

fn split(kind: VocabKind, text: &str) -> Vec<String> {
    match kind {
        VocabKind::Smiles => symbol_tokens(text).into_iter().map(str::to_string).collect(),
        VocabKind::Words => word_tokens(text),
    }
}
