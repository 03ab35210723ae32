//! Token embeddings for the explanation and original-input streams.
//!
//! Providers own their tokenization. The stub provider is deterministic
//! and offline; the file provider reads externally computed embeddings.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::numcore::Matrix;
use crate::smiles::fnv1a64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("embedding domain error: {0}")]
    Domain(String),
    #[error("embedding shape error: {0}")]
    Shape(String),
    #[error("embedding file {path}: {reason}")]
    File { path: String, reason: String },
}

/// One row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    tokens: Vec<String>,
    matrix: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(tokens: Vec<String>, matrix: Matrix) -> Result<Self, EmbedError> {
        if tokens.is_empty() {
            return Err(EmbedError::Domain("no tokens".into()));
        }
        if matrix.rows() != tokens.len() {
            return Err(EmbedError::Shape(format!(
                "{} tokens but {} rows",
                tokens.len(),
                matrix.rows()
            )));
        }
        if !matrix.is_finite() {
            return Err(EmbedError::Domain("non-finite embedding entry".into()));
        }
        Ok(Self { tokens, matrix })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tokenization {
    /// Lowercase alphanumeric runs; whitespace and punctuation separate.
    Words,
    /// One token per SMILES symbol (two-letter halogens and bracket atoms
    /// kept whole).
    SmilesSymbols,
}

pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn smiles_symbols(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '[' {
            let end = chars[i..].iter().position(|&x| x == ']').map_or(chars.len(), |p| i + p + 1);
            out.push(chars[i..end].iter().collect());
            i = end;
        } else if (c == 'C' && chars.get(i + 1) == Some(&'l')) || (c == 'B' && chars.get(i + 1) == Some(&'r')) {
            out.push(chars[i..i + 2].iter().collect());
            i += 2;
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

pub fn tokenize(text: &str, mode: Tokenization) -> Vec<String> {
    match mode {
        Tokenization::Words => word_tokens(text),
        Tokenization::SmilesSymbols => smiles_symbols(text),
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EmbedError>;
}

/// Embeds `text` and checks the provider's dimension against `d`.
pub fn embed_tokens(text: &str, provider: &dyn EmbeddingProvider, d: usize) -> Result<EmbeddingMatrix, EmbedError> {
    let m = provider.embed(text)?;
    if m.dim() != d {
        return Err(EmbedError::Shape(format!(
            "provider {} yields dimension {}, model expects {d}",
            provider.id(),
            m.dim()
        )));
    }
    Ok(m)
}

/// Seeded hash base vector per surface form plus a positional sinusoid,
/// L2-normalized per row.
pub fn stub_embed_tokens(tokens: &[String], d: usize, seed: u64) -> Result<EmbeddingMatrix, EmbedError> {
    if d < 2 {
        return Err(EmbedError::Domain(format!("stub dimension must be at least 2, got {d}")));
    }
    if tokens.is_empty() {
        return Err(EmbedError::Domain("text has no tokens".into()));
    }
    let mut m = Matrix::zeros(tokens.len(), d);
    for (pos, tok) in tokens.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(tok.as_bytes()) ^ seed);
        let row = m.row_mut(pos);
        for (j, x) in row.iter_mut().enumerate() {
            let base: f64 = rng.gen_range(-1.0..1.0);
            let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            let pe = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            *x = base + 0.5 * pe;
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
    EmbeddingMatrix::new(tokens.to_vec(), m)
}

pub fn stub_embed(text: &str, d: usize, seed: u64) -> Result<EmbeddingMatrix, EmbedError> {
    stub_embed_tokens(&word_tokens(text), d, seed)
}

#[derive(Debug, Clone)]
pub struct StubProvider {
    pub d: usize,
    pub seed: u64,
    pub tokenization: Tokenization,
}

impl StubProvider {
    pub fn new(d: usize, seed: u64, tokenization: Tokenization) -> Self {
        Self { d, seed, tokenization }
    }
}

impl EmbeddingProvider for StubProvider {
    fn id(&self) -> String {
        format!("stub(d={},seed={})", self.d, self.seed)
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EmbedError> {
        stub_embed_tokens(&tokenize(text, self.tokenization), self.d, self.seed)
    }
}

pub fn text_sha256(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Reads `<dir>/<sha256 hex of text>.emb`.
#[derive(Debug, Clone)]
pub struct FileProvider {
    dir: PathBuf,
    d: usize,
}

impl FileProvider {
    pub fn new(dir: impl Into<PathBuf>, d: usize) -> Self {
        Self { dir: dir.into(), d }
    }

    pub fn path_for(&self, text: &str) -> PathBuf {
        self.dir.join(format!("{}.emb", hex::encode(text_sha256(text))))
    }
}

fn file_err(path: &Path, reason: impl Into<String>) -> EmbedError {
    EmbedError::File {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Layout: 32-byte SHA-256 of the text, u64 m, u64 d, m·d f64 values,
/// then m tokens as (u32 length, UTF-8 bytes). Little-endian throughout.
pub fn encode_embedding(text: &str, e: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&text_sha256(text));
    out.extend_from_slice(&(e.len() as u64).to_le_bytes());
    out.extend_from_slice(&(e.dim() as u64).to_le_bytes());
    for x in e.matrix().data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for t in e.tokens() {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        out.extend_from_slice(t.as_bytes());
    }
    out
}

pub fn decode_embedding(bytes: &[u8], path: &Path) -> Result<([u8; 32], EmbeddingMatrix), EmbedError> {
    let mut at = 0usize;
    let mut take = |n: usize| -> Result<&[u8], EmbedError> {
        let s = bytes.get(at..at + n).ok_or_else(|| file_err(path, "truncated"))?;
        at += n;
        Ok(s)
    };
    let mut sha = [0u8; 32];
    sha.copy_from_slice(take(32)?);
    let m = u64::from_le_bytes(take(8)?.try_into().unwrap_or_default()) as usize;
    let d = u64::from_le_bytes(take(8)?.try_into().unwrap_or_default()) as usize;
    if m == 0 || d == 0 || m.saturating_mul(d) > bytes.len() / 8 {
        return Err(file_err(path, format!("implausible shape {m}x{d}")));
    }
    let mut data = Vec::with_capacity(m * d);
    for _ in 0..m * d {
        data.push(f64::from_le_bytes(take(8)?.try_into().unwrap_or_default()));
    }
    let mut tokens = Vec::with_capacity(m);
    for _ in 0..m {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap_or_default()) as usize;
        let t = std::str::from_utf8(take(len)?).map_err(|_| file_err(path, "token is not UTF-8"))?;
        tokens.push(t.to_string());
    }
    if at != bytes.len() {
        return Err(file_err(path, "trailing bytes"));
    }
    let matrix = Matrix::from_vec(m, d, data).map_err(|e| file_err(path, e.to_string()))?;
    let e = EmbeddingMatrix::new(tokens, matrix).map_err(|e| file_err(path, e.to_string()))?;
    Ok((sha, e))
}

pub fn write_embedding_file(dir: &Path, text: &str, e: &EmbeddingMatrix) -> Result<PathBuf, EmbedError> {
    std::fs::create_dir_all(dir).map_err(|err| file_err(dir, err.to_string()))?;
    let path = dir.join(format!("{}.emb", hex::encode(text_sha256(text))));
    std::fs::write(&path, encode_embedding(text, e)).map_err(|err| file_err(&path, err.to_string()))?;
    Ok(path)
}

impl EmbeddingProvider for FileProvider {
    fn id(&self) -> String {
        format!("file({})", self.dir.display())
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn embed(&self, text: &str) -> Result<EmbeddingMatrix, EmbedError> {
        let path = self.path_for(text);
        let bytes = std::fs::read(&path).map_err(|e| file_err(&path, e.to_string()))?;
        let (sha, e) = decode_embedding(&bytes, &path)?;
        if sha != text_sha256(text) {
            return Err(file_err(&path, "header hash does not match the text"));
        }
        Ok(e)
    }
}
