//! SMILES parsing, valence validation, canonical emission and fingerprints.
//!
//! Supported grammar: organic-subset atoms, bracket atoms (isotope accepted
//! and ignored, H count, charge, atom class), bonds `- = # :`, branches,
//! ring closures `1-9` and `%nn`, aromatic lowercase atoms and
//! dot-separated components. Stereochemistry (`@ / \`) and wildcard atoms
//! are rejected with a dedicated error. No aromaticity perception is done:
//! lowercase input is trusted and Kekulé input stays Kekulé.

mod canonical;
mod elements;
mod fingerprint;
mod parser;

use std::fmt;

pub use canonical::{canonical_smiles, write_smiles_with_priority};
pub use fingerprint::{fnv1a64, morgan_fingerprint, path_fingerprint, BitFingerprint, FingerprintError};
pub use parser::parse_smiles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence; aromatic bonds count as one and
    /// the extra pi electron is handled per element.
    pub fn valence(self) -> u32 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub(crate) fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    /// Element symbol with standard capitalization ("C", "Cl"), also for
    /// aromatic atoms.
    pub element: String,
    pub charge: i8,
    /// Total attached hydrogens: explicit for bracket atoms, implicit
    /// (from the valence table) otherwise.
    pub hydrogens: u8,
    pub aromatic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Atoms and bonds of a parsed molecule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoleculeGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    /// Per atom: (neighbor, bond index).
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl MoleculeGraph {
    /// Builds a graph, enforcing the structural invariants (valid
    /// endpoints, no self loops or duplicate bonds, aromatic bonds only
    /// between aromatic atoms). Valences are not checked here.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Result<Self, String> {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            if b.a >= atoms.len() || b.b >= atoms.len() {
                return Err(format!("bond {i} references a missing atom"));
            }
            if b.a == b.b {
                return Err(format!("bond {i} joins atom {} to itself", b.a));
            }
            if adjacency[b.a].iter().any(|&(n, _)| n == b.b) {
                return Err(format!("duplicate bond between atoms {} and {}", b.a, b.b));
            }
            if b.order == BondOrder::Aromatic && !(atoms[b.a].aromatic && atoms[b.b].aromatic) {
                return Err(format!(
                    "aromatic bond between atoms {} and {} requires two aromatic atoms",
                    b.a, b.b
                ));
            }
            adjacency[b.a].push((b.b, i));
            adjacency[b.b].push((b.a, i));
        }
        Ok(Self {
            atoms,
            bonds,
            adjacency,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    /// Sum of bond valence contributions at `atom`.
    pub fn bond_valence(&self, atom: usize) -> u32 {
        self.adjacency[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].order.valence())
            .sum()
    }

    /// Connected components as sorted atom lists, ordered by first atom.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut i = 0;
            while i < comp.len() {
                for &(n, _) in &self.adjacency[comp[i]] {
                    if !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Marks bonds that lie on at least one cycle (i.e. are not bridges).
    pub fn ring_bonds(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut is_bridge = vec![false; self.bonds.len()];
        let mut timer = 0;
        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // iterative DFS: (atom, parent bond, next neighbor index)
            let mut stack: Vec<(usize, Option<usize>, usize)> = vec![(root, None, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(top) = stack.last_mut() {
                let (u, pbond) = (top.0, top.1);
                if top.2 < self.adjacency[u].len() {
                    let (v, bi) = self.adjacency[u][top.2];
                    top.2 += 1;
                    if Some(bi) == pbond {
                        continue;
                    }
                    if disc[v] == usize::MAX {
                        disc[v] = timer;
                        low[v] = timer;
                        timer += 1;
                        stack.push((v, Some(bi), 0));
                    } else {
                        low[u] = low[u].min(disc[v]);
                    }
                } else {
                    stack.pop();
                    if let (Some(&(p, _, _)), Some(bi)) = (stack.last(), pbond) {
                        low[p] = low[p].min(low[u]);
                        if low[u] > disc[p] {
                            is_bridge[bi] = true;
                        }
                    }
                }
            }
        }
        is_bridge.into_iter().map(|b| !b).collect()
    }

    /// Atoms that belong to at least one ring.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let ring = self.ring_bonds();
        let mut out = vec![false; self.atoms.len()];
        for (b, r) in self.bonds.iter().zip(ring) {
            if r {
                out[b.a] = true;
                out[b.b] = true;
            }
        }
        out
    }

    /// Number of independent cycles (bonds − atoms + components).
    pub fn ring_count(&self) -> usize {
        (self.bonds.len() + self.components().len()).saturating_sub(self.atoms.len())
    }

    /// Relabels atoms: new index of old atom `i` is `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![None; self.atoms.len()];
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = Some(self.atoms[old].clone());
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                order: b.order,
            })
            .collect();
        Self::new(atoms.into_iter().map(Option::unwrap).collect(), bonds)
            .expect("a permutation preserves graph invariants")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SmilesError {
    Syntax { position: usize, reason: String },
    UnclosedRing { label: u32, position: usize },
    Valence { atom: usize, element: String, valence: u32 },
}

impl fmt::Display for SmilesError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmilesError::Syntax { position, reason } => {
                write!(f, "syntax error at position {position}: {reason}")
            }
            SmilesError::UnclosedRing { label, position } => {
                write!(f, "unclosed ring bond {label} opened at position {position}")
            }
            SmilesError::Valence { atom, element, valence } => {
                write!(f, "valence violation on atom {atom} ({element}): valence {valence}")
            }
        }
    }
}

impl std::error::Error for SmilesError {}

/// True when `text` parses into a valid molecule.
pub fn is_valid(text: &str) -> bool {
    parse_smiles(text).is_ok()
}

/// Splits SMILES text into decoder symbols: single characters, except that
/// `Cl` and `Br` stay together. Whitespace is dropped.
pub fn symbol_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if c.is_whitespace() {
            continue;
        }
        let pair = matches!((c, it.peek()), ('C', Some((_, 'l'))) | ('B', Some((_, 'r'))));
        if pair {
            it.next();
            out.push(&text[i..i + 2]);
        } else {
            out.push(&text[i..i + c.len_utf8()]);
        }
    }
    out
}

#[cfg(test)]
mod symbol_tests {
    use super::symbol_tokens;

    #[test]
    fn halogens_stay_whole() {
        assert_eq!(symbol_tokens("ClCBr[C@H]"), ["Cl", "C", "Br", "[", "C", "@", "H", "]"]);
        assert_eq!(symbol_tokens("C l"), ["C", "l"]);
        assert!(symbol_tokens("").is_empty());
    }
}
