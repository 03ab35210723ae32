use std::collections::BTreeMap;

use super::elements::{allowed_valences, atomic_number, AROMATIC_BRACKET, AROMATIC_ORGANIC, ORGANIC};
use super::{Atom, Bond, BondOrder, MoleculeGraph, SmilesError};

/// Parses and validates a SMILES string.
///
/// Never panics: every input yields either a graph or a [`SmilesError`].
pub fn parse_smiles(text: &str) -> Result<MoleculeGraph, SmilesError> {
    let raw = Parser::new(text).run()?;
    finish(raw)
}

struct RawAtom {
    atom: Atom,
    bracket: bool,
    position: usize,
}

struct RawMolecule {
    atoms: Vec<RawAtom>,
    bonds: Vec<Bond>,
}

struct RingOpen {
    atom: usize,
    order: Option<BondOrder>,
    position: usize,
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    text: &'a str,
    atoms: Vec<RawAtom>,
    bonds: Vec<Bond>,
    prev: Option<usize>,
    branches: Vec<usize>,
    pending: Option<(BondOrder, usize)>,
    rings: BTreeMap<u32, RingOpen>,
    /// Set right after '(' until an atom or bond is read.
    branch_just_opened: Option<usize>,
}

fn syntax(position: usize, reason: impl Into<String>) -> SmilesError {
    SmilesError::Syntax {
        position,
        reason: reason.into(),
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().collect(),
            pos: 0,
            text,
            atoms: Vec::new(),
            bonds: Vec::new(),
            prev: None,
            branches: Vec::new(),
            pending: None,
            rings: BTreeMap::new(),
            branch_just_opened: None,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn run(mut self) -> Result<RawMolecule, SmilesError> {
        if self.text.trim().is_empty() {
            return Err(syntax(0, "empty SMILES"));
        }
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                '(' => {
                    let Some(prev) = self.prev else {
                        return Err(syntax(at, "branch opened before any atom"));
                    };
                    if self.pending.is_some() {
                        return Err(syntax(at, "bond symbol before '('"));
                    }
                    self.branches.push(prev);
                    self.branch_just_opened = Some(at);
                    self.pos += 1;
                }
                ')' => {
                    if self.branch_just_opened.is_some() {
                        return Err(syntax(at, "empty branch"));
                    }
                    if self.pending.is_some() {
                        return Err(syntax(at, "bond symbol before ')'"));
                    }
                    let Some(top) = self.branches.pop() else {
                        return Err(syntax(at, "unmatched ')'"));
                    };
                    self.prev = Some(top);
                    self.pos += 1;
                }
                '-' | '=' | '#' | ':' => {
                    if self.pending.is_some() {
                        return Err(syntax(at, "two consecutive bond symbols"));
                    }
                    if self.prev.is_none() {
                        return Err(syntax(at, "bond symbol before any atom"));
                    }
                    let order = match c {
                        '-' => BondOrder::Single,
                        '=' => BondOrder::Double,
                        '#' => BondOrder::Triple,
                        _ => BondOrder::Aromatic,
                    };
                    self.pending = Some((order, at));
                    self.branch_just_opened = None;
                    self.pos += 1;
                }
                '/' | '\\' => {
                    return Err(syntax(at, format!("stereochemistry '{c}' is not supported")));
                }
                '$' => return Err(syntax(at, "quadruple bonds are not supported")),
                '.' => {
                    if self.pending.is_some() {
                        return Err(syntax(at, "bond symbol before '.'"));
                    }
                    if self.prev.is_none() {
                        return Err(syntax(at, "'.' before any atom"));
                    }
                    if !self.branches.is_empty() {
                        return Err(syntax(at, "'.' inside a branch"));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                '0'..='9' | '%' => self.ring_closure()?,
                '[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, true, at)?;
                }
                '*' => return Err(syntax(at, "wildcard atoms are not supported")),
                _ => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, false, at)?;
                }
            }
        }
        let end = self.chars.len();
        if self.prev.is_none() {
            return Err(syntax(end, "'.' at end of input"));
        }
        if let Some((_, p)) = self.pending {
            return Err(syntax(p, "bond symbol at end of input"));
        }
        if let Some(p) = self.branch_just_opened {
            return Err(syntax(p, "unclosed branch"));
        }
        if !self.branches.is_empty() {
            return Err(syntax(end, "unclosed branch"));
        }
        if let Some((&label, open)) = self.rings.iter().min_by_key(|(_, o)| o.position) {
            return Err(SmilesError::UnclosedRing {
                label,
                position: open.position,
            });
        }
        Ok(RawMolecule {
            atoms: self.atoms,
            bonds: self.bonds,
        })
    }

    fn default_order(&self, a: usize, b: usize) -> BondOrder {
        if self.atoms[a].atom.aromatic && self.atoms[b].atom.aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder, position: usize) -> Result<(), SmilesError> {
        if a == b {
            return Err(syntax(position, "ring bond joins an atom to itself"));
        }
        if self
            .bonds
            .iter()
            .any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a))
        {
            return Err(syntax(position, format!("duplicate bond between atoms {a} and {b}")));
        }
        if order == BondOrder::Aromatic && !(self.atoms[a].atom.aromatic && self.atoms[b].atom.aromatic) {
            return Err(syntax(position, "aromatic bond between non-aromatic atoms"));
        }
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }

    fn add_atom(&mut self, atom: Atom, bracket: bool, position: usize) -> Result<(), SmilesError> {
        let idx = self.atoms.len();
        self.atoms.push(RawAtom {
            atom,
            bracket,
            position,
        });
        if let Some(prev) = self.prev {
            let (order, bpos) = match self.pending.take() {
                Some((o, p)) => (o, p),
                None => (self.default_order(prev, idx), position),
            };
            self.add_bond(prev, idx, order, bpos)?;
        }
        self.prev = Some(idx);
        self.branch_just_opened = None;
        Ok(())
    }

    fn ring_closure(&mut self) -> Result<(), SmilesError> {
        let at = self.pos;
        let label = if self.chars[at] == '%' {
            let d: Option<u32> = self
                .chars
                .get(at + 1..at + 3)
                .filter(|s| s.iter().all(char::is_ascii_digit))
                .map(|s| s.iter().collect::<String>().parse().unwrap_or(0));
            let Some(label) = d else {
                return Err(syntax(at, "'%' must be followed by two digits"));
            };
            self.pos += 3;
            label
        } else {
            self.pos += 1;
            self.chars[at].to_digit(10).unwrap_or(0)
        };
        let Some(prev) = self.prev else {
            return Err(syntax(at, "ring bond digit before any atom"));
        };
        if self.branch_just_opened.is_some() {
            return Err(syntax(at, "ring bond digit directly after '('"));
        }
        let pending = self.pending.take();
        match self.rings.remove(&label) {
            Some(open) => {
                let order = match (open.order, pending.map(|p| p.0)) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(syntax(at, format!("conflicting bond orders on ring bond {label}")));
                    }
                    (Some(a), _) => a,
                    (None, Some(b)) => b,
                    (None, None) => self.default_order(open.atom, prev),
                };
                self.add_bond(open.atom, prev, order, at)?;
            }
            None => {
                self.rings.insert(
                    label,
                    RingOpen {
                        atom: prev,
                        order: pending.map(|p| p.0),
                        position: at,
                    },
                );
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let at = self.pos;
        let c = self.chars[at];
        let next = self.chars.get(at + 1).copied();
        let (symbol, aromatic, width) = match (c, next) {
            ('C', Some('l')) => ("Cl".to_string(), false, 2),
            ('B', Some('r')) => ("Br".to_string(), false, 2),
            (c, _) if c.is_ascii_uppercase() && ORGANIC.contains(&c.to_string().as_str()) => {
                (c.to_string(), false, 1)
            }
            (c, _) if c.is_ascii_lowercase() => {
                let up = c.to_ascii_uppercase().to_string();
                if AROMATIC_ORGANIC.contains(&up.as_str()) {
                    (up, true, 1)
                } else {
                    return Err(syntax(at, format!("unexpected character '{c}'")));
                }
            }
            (c, _) if c.is_ascii_uppercase() => {
                return Err(syntax(at, format!("element '{c}' must be written in brackets")));
            }
            (c, _) => return Err(syntax(at, format!("unexpected character '{c}'"))),
        };
        self.pos += width;
        Ok(Atom {
            element: symbol,
            charge: 0,
            hydrogens: 0,
            aromatic,
        })
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let open = self.pos;
        self.pos += 1;
        // isotope, accepted and ignored
        let iso_start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos - iso_start > 3 {
            return Err(syntax(iso_start, "isotope too long"));
        }
        let at = self.pos;
        let (element, aromatic) = match self.peek() {
            Some('*') => return Err(syntax(at, "wildcard atoms are not supported")),
            Some(c) if c.is_ascii_uppercase() => {
                let two: Option<String> = self
                    .chars
                    .get(at + 1)
                    .filter(|n| n.is_ascii_lowercase())
                    .map(|n| format!("{c}{n}"));
                match two.filter(|s| atomic_number(s).is_some()) {
                    Some(s) => {
                        self.pos += 2;
                        (s, false)
                    }
                    None if atomic_number(&c.to_string()).is_some() => {
                        self.pos += 1;
                        (c.to_string(), false)
                    }
                    None => return Err(syntax(at, format!("unknown element '{c}'"))),
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let two: Option<String> = self.chars.get(at + 1).map(|n| format!("{}{n}", c.to_ascii_uppercase()));
                match two.filter(|s| AROMATIC_BRACKET.contains(&s.as_str())) {
                    Some(s) => {
                        self.pos += 2;
                        (s, true)
                    }
                    None => {
                        let up = c.to_ascii_uppercase().to_string();
                        if AROMATIC_BRACKET.contains(&up.as_str()) {
                            self.pos += 1;
                            (up, true)
                        } else {
                            return Err(syntax(at, format!("'{c}' is not an aromatic element")));
                        }
                    }
                }
            }
            _ => return Err(syntax(at, "missing element symbol in bracket atom")),
        };
        if self.peek() == Some('@') {
            return Err(syntax(self.pos, "stereochemistry '@' is not supported"));
        }
        let mut hydrogens = 0u8;
        if self.peek() == Some('H') {
            self.pos += 1;
            hydrogens = 1;
            if let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
                hydrogens = d as u8;
                self.pos += 1;
            }
        }
        let mut charge: i32 = 0;
        if let Some(sign @ ('+' | '-')) = self.peek() {
            let unit = if sign == '+' { 1 } else { -1 };
            self.pos += 1;
            charge = unit;
            if let Some(d) = self.peek().and_then(|c| c.to_digit(10)) {
                self.pos += 1;
                charge = unit * d as i32;
                if let Some(d2) = self.peek().and_then(|c| c.to_digit(10)) {
                    self.pos += 1;
                    charge = unit * (d as i32 * 10 + d2 as i32);
                }
            } else {
                while self.peek() == Some(sign) {
                    self.pos += 1;
                    charge += unit;
                }
            }
            if charge.abs() > 15 {
                return Err(syntax(at, "formal charge out of range"));
            }
        }
        if self.peek() == Some(':') {
            self.pos += 1;
            let s = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == s {
                return Err(syntax(s, "atom class requires digits"));
            }
        }
        match self.peek() {
            Some(']') => self.pos += 1,
            Some(c) => return Err(syntax(self.pos, format!("unexpected '{c}' in bracket atom"))),
            None => return Err(syntax(open, "unterminated bracket atom")),
        }
        Ok(Atom {
            element,
            charge: charge as i8,
            hydrogens,
            aromatic,
        })
    }
}

/// Implicit hydrogens of an organic-subset atom with the given summed bond
/// valence, or the offending valence.
pub(crate) fn implicit_hydrogens(element: &str, aromatic: bool, bond_valence: u32) -> Result<u8, u32> {
    let s = bond_valence;
    if aromatic {
        // One valence unit goes to the pi system for atoms that need it;
        // O and S donate a lone pair and never carry implicit H.
        return match element {
            "C" if s <= 3 => Ok((3 - s) as u8),
            // exocyclic double bond, as in c(=O)
            "C" if s == 4 => Ok(0),
            "C" => Err(s),
            "B" if s <= 2 => Ok((2 - s) as u8),
            "N" | "P" | "B" if s <= 3 => Ok(0),
            "O" if s <= 2 => Ok(0),
            "S" if s <= 4 => Ok(0),
            _ => Err(s),
        };
    }
    let allowed = allowed_valences(element, 0).unwrap_or(&[]);
    allowed
        .iter()
        .find(|&&v| v >= s)
        .map(|&v| (v - s) as u8)
        .ok_or(s)
}

fn finish(raw: RawMolecule) -> Result<MoleculeGraph, SmilesError> {
    let RawMolecule { atoms, bonds } = raw;
    let mut valence = vec![0u32; atoms.len()];
    for b in &bonds {
        valence[b.a] += b.order.valence();
        valence[b.b] += b.order.valence();
    }
    let mut out = Vec::with_capacity(atoms.len());
    for (i, ra) in atoms.iter().enumerate() {
        let mut atom = ra.atom.clone();
        if ra.bracket {
            let total = valence[i] + atom.hydrogens as u32;
            if let Some(allowed) = allowed_valences(&atom.element, atom.charge) {
                let max = allowed.iter().copied().max().unwrap_or(0);
                if total > max {
                    return Err(SmilesError::Valence {
                        atom: i,
                        element: atom.element.clone(),
                        valence: total,
                    });
                }
            }
        } else {
            atom.hydrogens = implicit_hydrogens(&atom.element, atom.aromatic, valence[i]).map_err(|v| {
                SmilesError::Valence {
                    atom: i,
                    element: atom.element.clone(),
                    valence: v,
                }
            })?;
        }
        out.push(atom);
    }
    let graph = MoleculeGraph::new(out, bonds).map_err(|reason| syntax(0, reason))?;
    check_aromatic_systems(&graph, &atoms)?;
    Ok(graph)
}

/// Aromatic atoms must sit in rings, and the atoms that need a pi bond must
/// admit a perfect pairing over aromatic bonds (a Kekulé assignment).
fn check_aromatic_systems(g: &MoleculeGraph, raw: &[RawAtom]) -> Result<(), SmilesError> {
    let ring = g.ring_atoms();
    for (i, a) in g.atoms().iter().enumerate() {
        if a.aromatic && !ring[i] {
            return Err(syntax(raw[i].position, format!("aromatic atom {i} is not in a ring")));
        }
    }
    let needs: Vec<bool> = g
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| a.aromatic && needs_pi_bond(g, i))
        .collect();
    if !needs.iter().any(|&x| x) {
        return Ok(());
    }
    let adj: Vec<Vec<usize>> = (0..g.atom_count())
        .map(|i| {
            g.neighbors(i)
                .iter()
                .filter(|&&(n, b)| needs[n] && g.bonds()[b].order == BondOrder::Aromatic)
                .map(|&(n, _)| n)
                .collect()
        })
        .collect();
    let mut mate = vec![usize::MAX; g.atom_count()];
    let mut budget = 200_000u32;
    match pair_up(&needs, &adj, &mut mate, &mut budget) {
        Some(true) | None => Ok(()),
        Some(false) => {
            let atom = (0..needs.len()).find(|&i| needs[i]).unwrap_or(0);
            Err(syntax(
                raw[atom].position,
                "cannot assign alternating bonds to the aromatic system",
            ))
        }
    }
}

fn needs_pi_bond(g: &MoleculeGraph, i: usize) -> bool {
    let a = &g.atoms()[i];
    // an explicit double bond to the atom already supplies the pi bond
    if g.neighbors(i)
        .iter()
        .any(|&(_, b)| g.bonds()[b].order == BondOrder::Double)
    {
        return false;
    }
    let total = g.bond_valence(i) + a.hydrogens as u32;
    match allowed_valences(&a.element, a.charge) {
        Some(allowed) => !allowed.contains(&total) && allowed.contains(&(total + 1)),
        None => false,
    }
}

/// Backtracking perfect matching of the atoms flagged in `needs`.
/// `None` when the search budget runs out (treated as acceptable).
fn pair_up(needs: &[bool], adj: &[Vec<usize>], mate: &mut [usize], budget: &mut u32) -> Option<bool> {
    if *budget == 0 {
        return None;
    }
    *budget -= 1;
    let mut best: Option<(usize, usize)> = None;
    for i in 0..needs.len() {
        if needs[i] && mate[i] == usize::MAX {
            let options = adj[i].iter().filter(|&&n| mate[n] == usize::MAX).count();
            if best.is_none_or(|(_, o)| options < o) {
                best = Some((i, options));
            }
        }
    }
    let Some((i, options)) = best else {
        return Some(true);
    };
    if options == 0 {
        return Some(false);
    }
    for k in 0..adj[i].len() {
        let n = adj[i][k];
        if mate[n] != usize::MAX {
            continue;
        }
        mate[i] = n;
        mate[n] = i;
        match pair_up(needs, adj, mate, budget) {
            Some(false) => {}
            other => return other,
        }
        mate[i] = usize::MAX;
        mate[n] = usize::MAX;
    }
    Some(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclopropane() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!(g.atom_count(), 3);
        assert_eq!(g.bonds().len(), 3);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Single));
        assert!(g.atoms().iter().all(|a| a.hydrogens == 2));
    }

    #[test]
    fn benzene_is_aromatic_ring() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.atom_count(), 6);
        assert!(g.atoms().iter().all(|a| a.aromatic && a.hydrogens == 1));
        assert_eq!(g.bonds().len(), 6);
        assert!(g.bonds().iter().all(|b| b.order == BondOrder::Aromatic));
    }

    #[test]
    fn unclosed_ring() {
        assert_eq!(
            parse_smiles("C1CC").unwrap_err(),
            SmilesError::UnclosedRing { label: 1, position: 1 }
        );
        assert_eq!(
            parse_smiles("C1CC").unwrap_err().to_string(),
            "unclosed ring bond 1 opened at position 1"
        );
    }

    #[test]
    fn pentavalent_carbon() {
        let err = parse_smiles("C(C)(C)(C)(C)C").unwrap_err();
        assert_eq!(
            err,
            SmilesError::Valence { atom: 0, element: "C".into(), valence: 5 }
        );
        assert_eq!(err.to_string(), "valence violation on atom 0 (C): valence 5");
    }

    #[test]
    fn stable_error_messages() {
        let cases = [
            ("", "syntax error at position 0: empty SMILES"),
            ("C(C", "syntax error at position 3: unclosed branch"),
            ("CC)", "syntax error at position 2: unmatched ')'"),
            ("C()C", "syntax error at position 2: empty branch"),
            ("C=", "syntax error at position 1: bond symbol at end of input"),
            ("F/C=C/F", "syntax error at position 1: stereochemistry '/' is not supported"),
            ("N[C@H](C)O", "syntax error at position 3: stereochemistry '@' is not supported"),
            ("C*", "syntax error at position 1: wildcard atoms are not supported"),
            ("CX", "syntax error at position 1: element 'X' must be written in brackets"),
            ("C[Xy]", "syntax error at position 2: unknown element 'X'"),
            ("C:C", "syntax error at position 1: aromatic bond between non-aromatic atoms"),
            ("c1cccc1", "syntax error at position 0: cannot assign alternating bonds to the aromatic system"),
            ("cC", "syntax error at position 0: aromatic atom 0 is not in a ring"),
        ];
        for (s, msg) in cases {
            assert_eq!(parse_smiles(s).unwrap_err().to_string(), msg, "input {s:?}");
        }
    }

    #[test]
    fn grammar_features() {
        for s in [
            "CC(=O)O",
            "C#N",
            "[NH4+]",
            "[O-]C(=O)C",
            "[13CH4]",
            "C%10CC%10",
            "c1ccc2ccccc2c1",
            "c1cc[nH]c1",
            "c1ccncc1",
            "c1ccoc1",
            "c1ccsc1",
            "[Na+].[Cl-]",
            "ClCCBr",
            "OS(=O)(=O)O",
            "CP(=O)(O)O",
            "C[n+]1ccccc1",
            "[CH3:1]C",
        ] {
            assert!(parse_smiles(s).is_ok(), "{s} should parse: {:?}", parse_smiles(s));
        }
        for s in ["[CH5]", "O=O=O", "C1CC11", "C12CC12", "c1ccnc1", "N(=O)=O", "Cc", "((C))", "C.", ".C"] {
            assert!(parse_smiles(s).is_err(), "{s} should fail");
        }
    }

    #[test]
    fn hydrogens_from_valence() {
        let g = parse_smiles("CC(=O)O").unwrap();
        let h: Vec<u8> = g.atoms().iter().map(|a| a.hydrogens).collect();
        assert_eq!(h, vec![3, 0, 0, 1]);
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        assert_eq!(g.atoms()[3].hydrogens, 1);
    }

    #[test]
    fn fuzz_never_panics() {
        let alphabet: Vec<char> = "CNOcno()=#[]123%+-H.@/*Xl".chars().collect();
        let mut state = 12345u64;
        for _ in 0..5000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let len = (state >> 60) as usize + 1;
            let s: String = (0..len)
                .map(|k| {
                    let h = state.rotate_left(k as u32 * 7) >> 33;
                    alphabet[(h as usize) % alphabet.len()]
                })
                .collect();
            let _ = parse_smiles(&s);
        }
    }
}
