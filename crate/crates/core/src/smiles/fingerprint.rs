use std::collections::BTreeSet;

use super::elements::atomic_number;
use super::MoleculeGraph;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FingerprintError {
    #[error("bit count {0} must be a power of two and at least {1}")]
    BitCount(usize, usize),
    #[error("radius {0} exceeds the maximum of 10")]
    Radius(u32),
    #[error("path length {0} must be in 1..=7")]
    PathLength(u32),
    #[error("fingerprints of different sizes: {0} and {1} bits")]
    SizeMismatch(usize, usize),
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A sparse bit vector: sorted, unique set-bit indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitFingerprint {
    nbits: usize,
    bits: Vec<usize>,
}

impl BitFingerprint {
    pub fn from_bits(nbits: usize, bits: impl IntoIterator<Item = usize>) -> Self {
        let set: BTreeSet<usize> = bits.into_iter().map(|b| b % nbits.max(1)).collect();
        Self {
            nbits,
            bits: set.into_iter().collect(),
        }
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn bits(&self) -> &[usize] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.len()
    }

    pub fn contains(&self, bit: usize) -> bool {
        self.bits.binary_search(&bit).is_ok()
    }

    pub fn intersection_count(&self, other: &Self) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.bits.len() && j < other.bits.len() {
            match self.bits[i].cmp(&other.bits[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    /// |A ∩ B| / |A ∪ B|, defined as 0 when both are empty.
    pub fn tanimoto(&self, other: &Self) -> Result<f64, FingerprintError> {
        if self.nbits != other.nbits {
            return Err(FingerprintError::SizeMismatch(self.nbits, other.nbits));
        }
        let inter = self.intersection_count(other);
        let union = self.count() + other.count() - inter;
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }
}

fn check_bits(nbits: usize, min: usize) -> Result<(), FingerprintError> {
    if nbits < min || !nbits.is_power_of_two() {
        return Err(FingerprintError::BitCount(nbits, min));
    }
    Ok(())
}

/// Circular (Morgan-style) fingerprint: every atom environment up to
/// `radius` bonds sets one bit.
pub fn morgan_fingerprint(g: &MoleculeGraph, radius: u32, nbits: usize) -> Result<BitFingerprint, FingerprintError> {
    check_bits(nbits, 64)?;
    if radius > 10 {
        return Err(FingerprintError::Radius(radius));
    }
    let ring = g.ring_atoms();
    let mut ids: Vec<u64> = (0..g.atom_count())
        .map(|i| {
            let a = &g.atoms()[i];
            fnv1a64(&[
                atomic_number(&a.element).unwrap_or(0),
                0,
                g.degree(i) as u8,
                a.hydrogens,
                a.charge as u8,
                ring[i] as u8,
                a.aromatic as u8,
            ])
        })
        .collect();
    let mut bits: Vec<usize> = ids.iter().map(|&id| (id % nbits as u64) as usize).collect();
    for _ in 0..radius {
        let next: Vec<u64> = (0..g.atom_count())
            .map(|i| {
                let mut env: Vec<(u8, u64)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(n, b)| (g.bonds()[b].order.code(), ids[n]))
                    .collect();
                env.sort_unstable();
                let mut bytes = ids[i].to_le_bytes().to_vec();
                for (code, id) in env {
                    bytes.push(code);
                    bytes.extend_from_slice(&id.to_le_bytes());
                }
                fnv1a64(&bytes)
            })
            .collect();
        ids = next;
        bits.extend(ids.iter().map(|&id| (id % nbits as u64) as usize));
    }
    Ok(BitFingerprint::from_bits(nbits, bits))
}

/// Linear-path fingerprint over simple paths of 1..=`max_len` bonds. An
/// atom with no bonds contributes its own label, so salts and single
/// atoms still get bits.
pub fn path_fingerprint(g: &MoleculeGraph, max_len: u32, nbits: usize) -> Result<BitFingerprint, FingerprintError> {
    check_bits(nbits, 1)?;
    if !(1..=7).contains(&max_len) {
        return Err(FingerprintError::PathLength(max_len));
    }
    let label = |i: usize| {
        let a = &g.atoms()[i];
        if a.aromatic {
            a.element.to_ascii_lowercase()
        } else {
            a.element.clone()
        }
    };
    let mut bits = Vec::new();
    let mut path: Vec<usize> = Vec::new();
    let mut bonds: Vec<usize> = Vec::new();
    for start in 0..g.atom_count() {
        if g.degree(start) == 0 {
            bits.push((fnv1a64(label(start).as_bytes()) % nbits as u64) as usize);
        }
        path.push(start);
        extend(g, max_len as usize, &mut path, &mut bonds, &mut |p, b| {
            let fwd = render(p, b, &label, g, false);
            let rev = render(p, b, &label, g, true);
            let key = fwd.min(rev);
            bits.push((fnv1a64(key.as_bytes()) % nbits as u64) as usize);
        });
        path.pop();
    }
    Ok(BitFingerprint::from_bits(nbits, bits))
}

fn render(path: &[usize], bonds: &[usize], label: &dyn Fn(usize) -> String, g: &MoleculeGraph, reverse: bool) -> String {
    let n = path.len();
    let idx = |k: usize| if reverse { n - 1 - k } else { k };
    let mut s = label(path[idx(0)]);
    for k in 1..n {
        let b = if reverse { bonds[n - 1 - k] } else { bonds[k - 1] };
        s.push(g.bonds()[b].order.symbol());
        s.push_str(&label(path[idx(k)]));
    }
    s
}

fn extend(
    g: &MoleculeGraph,
    max_len: usize,
    path: &mut Vec<usize>,
    bonds: &mut Vec<usize>,
    sink: &mut dyn FnMut(&[usize], &[usize]),
) {
    if bonds.len() == max_len {
        return;
    }
    let last = *path.last().unwrap_or(&0);
    for &(n, b) in g.neighbors(last) {
        if path.contains(&n) {
            continue;
        }
        path.push(n);
        bonds.push(b);
        // each undirected path is found from both ends; keep one
        if path[0] < n {
            sink(path, bonds);
        }
        extend(g, max_len, path, bonds, sink);
        path.pop();
        bonds.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tanimoto_basics() {
        let a = BitFingerprint::from_bits(64, [1, 2, 3]);
        let b = BitFingerprint::from_bits(64, [2, 3, 4]);
        assert!((a.tanimoto(&b).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(a.tanimoto(&a).unwrap(), 1.0);
        let e = BitFingerprint::from_bits(64, []);
        assert_eq!(e.tanimoto(&e).unwrap(), 0.0);
        let c = BitFingerprint::from_bits(128, [1]);
        assert!(a.tanimoto(&c).is_err());
    }

    #[test]
    fn fingerprints_ignore_atom_order() {
        let a = parse_smiles("OCC(=O)c1ccccc1").unwrap();
        let b = parse_smiles("c1ccc(cc1)C(=O)CO").unwrap();
        assert_eq!(morgan_fingerprint(&a, 2, 2048).unwrap(), morgan_fingerprint(&b, 2, 2048).unwrap());
        assert_eq!(path_fingerprint(&a, 7, 2048).unwrap(), path_fingerprint(&b, 7, 2048).unwrap());
    }

    #[test]
    fn preconditions() {
        let g = parse_smiles("CCO").unwrap();
        assert!(morgan_fingerprint(&g, 2, 100).is_err());
        assert!(morgan_fingerprint(&g, 2, 32).is_err());
        assert!(morgan_fingerprint(&g, 11, 2048).is_err());
        assert!(path_fingerprint(&g, 0, 2048).is_err());
        assert!(path_fingerprint(&g, 8, 2048).is_err());
    }

    #[test]
    fn path_counts_for_propane() {
        // C-C-C: paths C-C (x2, same string) and C-C-C
        let g = parse_smiles("CCC").unwrap();
        let fp = path_fingerprint(&g, 7, 1 << 20).unwrap();
        assert_eq!(fp.count(), 2);
    }

    #[test]
    fn bondless_atoms_have_path_bits() {
        let g = parse_smiles("[Na+].[Cl-]").unwrap();
        let fp = path_fingerprint(&g, 7, 2048).unwrap();
        assert_eq!(fp.count(), 2);
        assert_eq!(fp.tanimoto(&fp).unwrap(), 1.0);
    }
}
