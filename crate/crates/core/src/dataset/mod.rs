//! Text/molecule pair corpora: TSV loading with quarantine, and a seeded
//! synthetic corpus for offline runs.

mod synthetic;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::smiles::parse_smiles;

pub use synthetic::{describe, make_synthetic_corpus, random_molecule};

pub const HEADER: &str = "CID\tSMILES\tdescription";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextMoleculePair {
    pub id: String,
    pub smiles: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<TextMoleculePair>,
    pub validation: Vec<TextMoleculePair>,
    pub test: Vec<TextMoleculePair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split '{other}'")),
        }
    }
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[TextMoleculePair] {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fails on an id present in two splits.
    pub fn check_disjoint(&self) -> Result<(), DataError> {
        let mut seen: HashSet<&str> = HashSet::new();
        for s in Split::ALL {
            for p in self.split(s) {
                if !seen.insert(&p.id) {
                    return Err(DataError::SplitOverlap(p.id.clone()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantinedRow {
    pub line: usize,
    pub id: String,
    pub smiles: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Quarantine {
    /// (source file, rows set aside)
    pub files: Vec<(PathBuf, Vec<QuarantinedRow>)>,
}

impl Quarantine {
    pub fn total(&self) -> usize {
        self.files.iter().map(|(_, rows)| rows.len()).sum()
    }

    /// Writes `<file>.quarantine.txt` next to every source file that had
    /// quarantined rows.
    pub fn write_reports(&self) -> Result<Vec<PathBuf>, DataError> {
        let mut out = Vec::new();
        for (path, rows) in &self.files {
            if rows.is_empty() {
                continue;
            }
            let mut name = path.as_os_str().to_owned();
            name.push(".quarantine.txt");
            let target = PathBuf::from(name);
            let mut text = String::from("line\tCID\tSMILES\treason\n");
            for r in rows {
                let _ = writeln!(text, "{}\t{}\t{}\t{}", r.line, r.id, r.smiles, r.reason);
            }
            std::fs::write(&target, text).map_err(|e| DataError::io(&target, e))?;
            out.push(target);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: malformed header (expected \"CID<TAB>SMILES<TAB>description\", found {found:?})")]
    Header { path: String, found: String },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    FieldCount { path: String, line: usize, found: usize },
    #[error("{path}: duplicate CID {id}")]
    DuplicateId { path: String, id: String },
    #[error("CID {0} appears in more than one split")]
    SplitOverlap(String),
    #[error("dataset domain error: {0}")]
    Domain(String),
}

impl DataError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }
}

/// Parses one TSV file. Rows whose SMILES fail to parse are returned
/// separately instead of failing the load.
pub fn parse_tsv(text: &str, path: &Path) -> Result<(Vec<TextMoleculePair>, Vec<QuarantinedRow>), DataError> {
    let shown = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    if cols != ["CID", "SMILES", "description"] {
        return Err(DataError::Header {
            path: shown,
            found: header.to_string(),
        });
    }
    let mut ids = HashSet::new();
    let mut rows = Vec::new();
    let mut quarantined = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(DataError::FieldCount {
                path: shown,
                line: line_no,
                found: fields.len(),
            });
        }
        let (id, smiles, description) = (fields[0], fields[1], fields[2]);
        if !ids.insert(id.to_string()) {
            return Err(DataError::DuplicateId {
                path: shown,
                id: id.to_string(),
            });
        }
        match parse_smiles(smiles) {
            Ok(_) => rows.push(TextMoleculePair {
                id: id.to_string(),
                smiles: smiles.to_string(),
                description: description.to_string(),
            }),
            Err(e) => quarantined.push(QuarantinedRow {
                line: line_no,
                id: id.to_string(),
                smiles: smiles.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    Ok((rows, quarantined))
}

pub fn load_split(path: &Path) -> Result<(Vec<TextMoleculePair>, Vec<QuarantinedRow>), DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_tsv(&text, path)
}

pub fn load_corpus(train: &Path, validation: &Path, test: &Path) -> Result<(Corpus, Quarantine), DataError> {
    let mut corpus = Corpus::default();
    let mut quarantine = Quarantine::default();
    for (split, path) in [(Split::Train, train), (Split::Validation, validation), (Split::Test, test)] {
        let (rows, bad) = load_split(path)?;
        if !bad.is_empty() {
            log::warn!("{}: {} rows quarantined", path.display(), bad.len());
        }
        quarantine.files.push((path.to_path_buf(), bad));
        match split {
            Split::Train => corpus.train = rows,
            Split::Validation => corpus.validation = rows,
            Split::Test => corpus.test = rows,
        }
    }
    corpus.check_disjoint()?;
    Ok((corpus, quarantine))
}

fn clean_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ").trim().to_string()
}

pub fn to_tsv(rows: &[TextMoleculePair]) -> String {
    let mut s = format!("{HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{}", clean_field(&r.id), clean_field(&r.smiles), clean_field(&r.description));
    }
    s
}

/// Writes `train.txt`, `validation.txt` and `test.txt` into `dir`.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<[PathBuf; 3], DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let paths = Split::ALL.map(|s| dir.join(format!("{}.txt", s.name())));
    for (s, p) in Split::ALL.iter().zip(paths.iter()) {
        std::fs::write(p, to_tsv(corpus.split(*s))).map_err(|e| DataError::io(p, e))?;
    }
    Ok(paths)
}
