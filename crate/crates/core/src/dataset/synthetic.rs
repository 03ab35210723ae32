use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, DataError, TextMoleculePair};
use crate::smiles::{canonical_smiles, parse_smiles, Atom, Bond, BondOrder, MoleculeGraph};

fn cap(element: &str) -> u32 {
    match element {
        "C" => 4,
        "N" => 3,
        _ => 2,
    }
}

/// A random valence-respecting molecule over C, N and O with at most two
/// rings. Hydrogens fill the remaining valence.
pub fn random_molecule<R: Rng>(rng: &mut R, min_atoms: usize, max_atoms: usize) -> MoleculeGraph {
    let n = rng.gen_range(min_atoms.max(1)..=max_atoms.max(min_atoms.max(1)));
    let mut elements: Vec<&'static str> = vec!["C"];
    let mut used = vec![0u32];
    let mut bonds: Vec<Bond> = Vec::new();
    for i in 1..n {
        let open: Vec<usize> = (0..i).filter(|&j| used[j] < cap(elements[j])).collect();
        if open.is_empty() {
            break;
        }
        let parent = open[rng.gen_range(0..open.len())];
        let roll: f64 = rng.gen();
        let mut el = if roll < 0.7 {
            "C"
        } else if roll < 0.85 {
            "N"
        } else {
            "O"
        };
        // no O-O, N-N or N-O bonds
        if elements[parent] != "C" {
            el = "C";
        }
        elements.push(el);
        used.push(1);
        used[parent] += 1;
        bonds.push(Bond { a: parent, b: i, order: BondOrder::Single });
    }
    let n = elements.len();
    let adjacent = |bonds: &[Bond], a: usize, b: usize| bonds.iter().any(|x| (x.a == a && x.b == b) || (x.a == b && x.b == a));
    let rings = if rng.gen_bool(0.4) { rng.gen_range(1..=2) } else { 0 };
    for _ in 0..rings {
        for _ in 0..20 {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a == b
                || adjacent(&bonds, a, b)
                || used[a] >= cap(elements[a])
                || used[b] >= cap(elements[b])
                || (elements[a] != "C" && elements[b] != "C")
            {
                continue;
            }
            used[a] += 1;
            used[b] += 1;
            bonds.push(Bond { a: a.min(b), b: a.max(b), order: BondOrder::Single });
            break;
        }
    }
    let graph = MoleculeGraph::new(
        elements.iter().map(|e| Atom { element: e.to_string(), charge: 0, hydrogens: 0, aromatic: false }).collect(),
        bonds.clone(),
    )
    .expect("construction keeps graph invariants");
    let ring_bonds = graph.ring_bonds();
    for k in 0..bonds.len() {
        let (a, b) = (bonds[k].a, bonds[k].b);
        let free = |x: usize, used: &[u32]| cap(elements[x]) - used[x];
        if !ring_bonds[k] && free(a, &used) >= 2 && free(b, &used) >= 2 && rng.gen_bool(0.06) {
            bonds[k].order = BondOrder::Triple;
            used[a] += 2;
            used[b] += 2;
        } else if free(a, &used) >= 1 && free(b, &used) >= 1 && rng.gen_bool(0.18) {
            bonds[k].order = BondOrder::Double;
            used[a] += 1;
            used[b] += 1;
        }
    }
    let atoms = (0..n)
        .map(|i| Atom {
            element: elements[i].to_string(),
            charge: 0,
            hydrogens: (cap(elements[i]) - used[i]) as u8,
            aromatic: false,
        })
        .collect();
    MoleculeGraph::new(atoms, bonds).expect("construction keeps graph invariants")
}

fn bond_between(g: &MoleculeGraph, a: usize, b: usize) -> Option<BondOrder> {
    g.neighbors(a).iter().find(|&&(n, _)| n == b).map(|&(_, k)| g.bonds()[k].order)
}

fn is_carbonyl_carbon(g: &MoleculeGraph, c: usize) -> bool {
    g.atoms()[c].element == "C"
        && g.neighbors(c)
            .iter()
            .any(|&(n, k)| g.atoms()[n].element == "O" && g.bonds()[k].order == BondOrder::Double)
}

fn functional_groups(g: &MoleculeGraph) -> Vec<&'static str> {
    let atoms = g.atoms();
    let el = |i: usize| atoms[i].element.as_str();
    let mut found: Vec<&'static str> = Vec::new();
    let mut add = |name: &'static str| {
        if !found.contains(&name) {
            found.push(name);
        }
    };
    for c in 0..g.atom_count() {
        if !is_carbonyl_carbon(g, c) {
            continue;
        }
        let singles: Vec<usize> = g
            .neighbors(c)
            .iter()
            .filter(|&&(_, k)| g.bonds()[k].order == BondOrder::Single)
            .map(|&(n, _)| n)
            .collect();
        let oh = singles.iter().any(|&n| el(n) == "O" && atoms[n].hydrogens == 1);
        let or = singles.iter().any(|&n| el(n) == "O" && atoms[n].hydrogens == 0);
        let n_ = singles.iter().any(|&n| el(n) == "N");
        let carbons = singles.iter().filter(|&&n| el(n) == "C").count();
        if oh {
            add("a carboxylic acid group");
        } else if or {
            add("an ester group");
        } else if n_ {
            add("an amide group");
        } else if atoms[c].hydrogens >= 1 {
            add("an aldehyde group");
        } else if carbons == 2 {
            add("a ketone group");
        }
    }
    for i in 0..g.atom_count() {
        let nb = g.neighbors(i);
        match el(i) {
            "O" if nb.len() == 1 && bond_between(g, i, nb[0].0) == Some(BondOrder::Single) => {
                if !is_carbonyl_carbon(g, nb[0].0) {
                    add("a hydroxy group");
                }
            }
            "O" if nb.len() == 2 && nb.iter().all(|&(n, _)| !is_carbonyl_carbon(g, n)) => add("an ether linkage"),
            "N" => {
                let all_single = nb.iter().all(|&(_, k)| g.bonds()[k].order == BondOrder::Single);
                let amide = nb.iter().any(|&(n, _)| is_carbonyl_carbon(g, n));
                if nb.iter().any(|&(_, k)| g.bonds()[k].order == BondOrder::Triple) {
                    add("a nitrile group");
                } else if nb.iter().any(|&(_, k)| g.bonds()[k].order == BondOrder::Double) {
                    add("an imine group");
                } else if all_single && !amide {
                    add(match nb.len() {
                        1 => "a primary amine",
                        2 => "a secondary amine",
                        _ => "a tertiary amine",
                    });
                }
            }
            _ => {}
        }
    }
    for b in g.bonds() {
        if el(b.a) == "C" && el(b.b) == "C" {
            match b.order {
                BondOrder::Double => add("a carbon-carbon double bond"),
                BondOrder::Triple => add("a carbon-carbon triple bond"),
                _ => {}
            }
        }
    }
    found
}

fn join_list(items: &[String]) -> String {
    match items.len() {
        0 => String::new(),
        1 => items[0].clone(),
        n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
    }
}

fn plural(n: usize, word: &str) -> String {
    if n == 1 {
        format!("1 {word}")
    } else {
        format!("{n} {word}s")
    }
}

/// Templated description mentioning atom counts, rings, unsaturation and
/// functional groups.
pub fn describe(g: &MoleculeGraph) -> String {
    let count = |e: &str| g.atoms().iter().filter(|a| a.element == e).count();
    let mut parts = Vec::new();
    for (e, name) in [("C", "carbon atom"), ("N", "nitrogen atom"), ("O", "oxygen atom")] {
        let k = count(e);
        if k > 0 {
            parts.push(plural(k, name));
        }
    }
    let rings = g.ring_count();
    let ring_atoms = g.ring_atoms().iter().filter(|&&r| r).count();
    let shape = match rings {
        0 => "an acyclic compound".to_string(),
        1 => format!("a monocyclic compound with a {ring_atoms}-membered ring"),
        k => format!("a compound with {k} rings sharing {ring_atoms} ring atoms"),
    };
    let branches = (0..g.atom_count()).filter(|&i| g.degree(i) >= 3).count();
    let hydrogens: usize = g.atoms().iter().map(|a| a.hydrogens as usize).sum();
    if hydrogens > 0 {
        parts.push(plural(hydrogens, "hydrogen atom"));
    }
    let mut text = format!("The molecule is {shape} built from {}.", join_list(&parts));
    let groups: Vec<String> = functional_groups(g).into_iter().map(String::from).collect();
    if groups.is_empty() {
        text.push_str(" It has no functional groups.");
    } else {
        text.push_str(&format!(" It contains {}.", join_list(&groups)));
    }
    match branches {
        0 => text.push_str(" Its skeleton is unbranched."),
        k => text.push_str(&format!(" Its skeleton has {}.", plural(k, "branch point"))),
    }
    text
}

/// `n` unique molecules with unique descriptions, split 80/10/10
/// (validation and test get at least one pair each).
pub fn make_synthetic_corpus(n: usize, seed: u64) -> Result<Corpus, DataError> {
    if n < 4 {
        return Err(DataError::Domain(format!("synthetic corpus needs at least 4 pairs, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut smiles_seen = HashSet::new();
    let mut text_seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while pairs.len() < n {
        attempts += 1;
        if attempts > 500 * n + 1000 {
            return Err(DataError::Domain(format!("could not generate {n} distinct molecules")));
        }
        let g = random_molecule(&mut rng, 2, 12);
        let smiles = canonical_smiles(&g);
        match parse_smiles(&smiles) {
            Ok(back) if canonical_smiles(&back) == smiles => {}
            _ => continue,
        }
        let description = describe(&g);
        if smiles_seen.contains(&smiles) || text_seen.contains(&description) {
            continue;
        }
        smiles_seen.insert(smiles.clone());
        text_seen.insert(description.clone());
        pairs.push(TextMoleculePair {
            id: format!("{:06}", pairs.len() + 1),
            smiles,
            description,
        });
    }
    let held = (n / 10).max(1);
    let test = pairs.split_off(n - held);
    let validation = pairs.split_off(n - 2 * held);
    Ok(Corpus { train: pairs, validation, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::is_valid;

    #[test]
    fn deterministic_per_seed() {
        let a = make_synthetic_corpus(10, 7).unwrap();
        let b = make_synthetic_corpus(10, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, make_synthetic_corpus(10, 8).unwrap());
    }

    #[test]
    fn split_sizes() {
        let c = make_synthetic_corpus(100, 1).unwrap();
        assert_eq!((c.train.len(), c.validation.len(), c.test.len()), (80, 10, 10));
        let c = make_synthetic_corpus(4, 1).unwrap();
        assert_eq!((c.train.len(), c.validation.len(), c.test.len()), (2, 1, 1));
        assert!(make_synthetic_corpus(3, 1).is_err());
    }

    #[test]
    fn all_valid_and_disjoint() {
        let c = make_synthetic_corpus(300, 3).unwrap();
        c.check_disjoint().unwrap();
        for p in c.train.iter().chain(&c.validation).chain(&c.test) {
            assert!(is_valid(&p.smiles), "{}", p.smiles);
        }
    }

    #[test]
    fn groups_detected() {
        let g = parse_smiles("CC(=O)O").unwrap();
        assert!(describe(&g).contains("carboxylic acid"));
        let g = parse_smiles("CCOCC").unwrap();
        assert!(describe(&g).contains("ether"));
        let g = parse_smiles("CC#N").unwrap();
        assert!(describe(&g).contains("nitrile"));
        let g = parse_smiles("C1CCCCC1").unwrap();
        assert!(describe(&g).contains("6-membered ring"));
    }
}
