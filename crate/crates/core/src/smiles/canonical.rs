use super::elements::{atomic_number, AROMATIC_ORGANIC, ORGANIC};
use super::parser::implicit_hydrogens;
use super::{BondOrder, MoleculeGraph};

/// Number of complete emissions tried while resolving symmetric ties before
/// falling back to the first candidate.
const TIE_BUDGET: usize = 64;

/// Canonical SMILES: identical for every atom ordering of the same graph.
pub fn canonical_smiles(g: &MoleculeGraph) -> String {
    if g.atom_count() == 0 {
        return String::new();
    }
    let ranks = refine(g, initial_ranks(g));
    let mut budget = TIE_BUDGET;
    search(g, ranks, &mut budget)
}

/// Writes a SMILES string visiting atoms by ascending `priority` (ties by
/// index). Any priority yields a string that parses back to the same graph.
pub fn write_smiles_with_priority(g: &MoleculeGraph, priority: &[usize]) -> String {
    assert_eq!(priority.len(), g.atom_count(), "one priority per atom");
    let mut order: Vec<usize> = (0..g.atom_count()).collect();
    order.sort_by_key(|&i| (priority[i], i));
    let mut rank = vec![0; g.atom_count()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    emit(g, &rank)
}

fn dense_ranks<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).unwrap_or(0))
        .collect()
}

fn initial_ranks(g: &MoleculeGraph) -> Vec<usize> {
    let keys: Vec<(u8, bool, i8, u8, usize)> = (0..g.atom_count())
        .map(|i| {
            let a = &g.atoms()[i];
            (
                atomic_number(&a.element).unwrap_or(0),
                a.aromatic,
                a.charge,
                a.hydrogens,
                g.degree(i),
            )
        })
        .collect();
    dense_ranks(&keys)
}

fn class_count(ranks: &[usize]) -> usize {
    ranks.iter().copied().max().map_or(0, |m| m + 1)
}

fn refine(g: &MoleculeGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    loop {
        let before = class_count(&ranks);
        let keys: Vec<(usize, Vec<(u8, usize)>)> = (0..g.atom_count())
            .map(|i| {
                let mut env: Vec<(u8, usize)> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(n, b)| (g.bonds()[b].order.code(), ranks[n]))
                    .collect();
                env.sort_unstable();
                (ranks[i], env)
            })
            .collect();
        ranks = dense_ranks(&keys);
        if class_count(&ranks) == before {
            return ranks;
        }
    }
}

fn search(g: &MoleculeGraph, ranks: Vec<usize>, budget: &mut usize) -> String {
    let n = ranks.len();
    if class_count(&ranks) == n {
        *budget = budget.saturating_sub(1);
        return emit(g, &ranks);
    }
    let mut counts = vec![0usize; n];
    for &r in &ranks {
        counts[r] += 1;
    }
    let tied = counts.iter().position(|&c| c > 1).unwrap_or(0);
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied).collect();
    let mut best: Option<String> = None;
    for (k, &m) in members.iter().enumerate() {
        if k > 0 && *budget == 0 {
            break;
        }
        let keys: Vec<(usize, bool)> = (0..n).map(|i| (ranks[i], i != m)).collect();
        let broken = refine(g, dense_ranks(&keys));
        let s = search(g, broken, budget);
        if best.as_ref().is_none_or(|b| s < *b) {
            best = Some(s);
        }
    }
    best.unwrap_or_default()
}

fn bond_text(g: &MoleculeGraph, bond: usize) -> &'static str {
    let b = &g.bonds()[bond];
    match b.order {
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => "",
        BondOrder::Single => {
            if g.atoms()[b.a].aromatic && g.atoms()[b.b].aromatic {
                "-"
            } else {
                ""
            }
        }
    }
}

fn atom_text(g: &MoleculeGraph, i: usize) -> String {
    let a = &g.atoms()[i];
    let shorthand_set = if a.aromatic { AROMATIC_ORGANIC } else { ORGANIC };
    if a.charge == 0
        && shorthand_set.contains(&a.element.as_str())
        && implicit_hydrogens(&a.element, a.aromatic, g.bond_valence(i)) == Ok(a.hydrogens)
    {
        return if a.aromatic {
            a.element.to_ascii_lowercase()
        } else {
            a.element.clone()
        };
    }
    let mut s = String::from("[");
    if a.aromatic {
        s.push_str(&a.element.to_ascii_lowercase());
    } else {
        s.push_str(&a.element);
    }
    match a.hydrogens {
        0 => {}
        1 => s.push('H'),
        h => s.push_str(&format!("H{h}")),
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

fn label_text(label: usize) -> String {
    if label < 10 {
        label.to_string()
    } else {
        format!("%{label:02}")
    }
}

struct Tree {
    children: Vec<Vec<(usize, usize)>>,
    /// Per atom: (bond, partner, opens here).
    rings: Vec<Vec<(usize, usize, bool)>>,
    visit: Vec<usize>,
}

fn emit(g: &MoleculeGraph, rank: &[usize]) -> String {
    let n = g.atom_count();
    let mut tree = Tree {
        children: vec![Vec::new(); n],
        rings: vec![Vec::new(); n],
        visit: vec![usize::MAX; n],
    };
    let mut edge_seen = vec![false; g.bonds().len()];
    let mut counter = 0;
    let mut comps = g.components();
    comps.sort_by_key(|c| rank[start_atom(g, c, rank)]);
    let mut parts = Vec::new();
    for comp in &comps {
        let start = start_atom(g, comp, rank);
        discover(g, rank, start, None, &mut tree, &mut edge_seen, &mut counter);
    }
    // closures first, then openings, each by partner visit order
    let visit = tree.visit.clone();
    for t in tree.rings.iter_mut() {
        t.sort_by_key(|&(_, p, open)| (open, visit[p]));
    }
    for comp in &comps {
        let start = start_atom(g, comp, rank);
        let mut out = String::new();
        let mut labels: Vec<Option<usize>> = vec![None; g.bonds().len()];
        let mut in_use: Vec<bool> = vec![false; 100];
        write_atom(g, start, &tree, &mut labels, &mut in_use, &mut out);
        parts.push(out);
    }
    parts.join(".")
}

/// Lowest-ranked atom among those of minimal degree.
fn start_atom(g: &MoleculeGraph, comp: &[usize], rank: &[usize]) -> usize {
    comp.iter().copied().min_by_key(|&i| (g.degree(i), rank[i])).unwrap_or(0)
}

fn discover(
    g: &MoleculeGraph,
    rank: &[usize],
    u: usize,
    parent_bond: Option<usize>,
    tree: &mut Tree,
    edge_seen: &mut [bool],
    counter: &mut usize,
) {
    tree.visit[u] = *counter;
    *counter += 1;
    let mut nbrs: Vec<(usize, usize)> = g.neighbors(u).to_vec();
    nbrs.sort_by_key(|&(v, _)| rank[v]);
    for (v, b) in nbrs {
        if Some(b) == parent_bond || edge_seen[b] {
            continue;
        }
        edge_seen[b] = true;
        if tree.visit[v] == usize::MAX {
            tree.children[u].push((v, b));
            discover(g, rank, v, Some(b), tree, edge_seen, counter);
        } else {
            tree.rings[v].push((b, u, true));
            tree.rings[u].push((b, v, false));
        }
    }
}

fn write_atom(
    g: &MoleculeGraph,
    u: usize,
    tree: &Tree,
    labels: &mut [Option<usize>],
    in_use: &mut [bool],
    out: &mut String,
) {
    out.push_str(&atom_text(g, u));
    let mut released = Vec::new();
    for &(b, _, open) in &tree.rings[u] {
        if open {
            let label = (1..in_use.len()).find(|&l| !in_use[l]).unwrap_or(99);
            in_use[label] = true;
            labels[b] = Some(label);
            out.push_str(bond_text(g, b));
            out.push_str(&label_text(label));
        } else if let Some(label) = labels[b] {
            out.push_str(&label_text(label));
            released.push(label);
        }
    }
    for l in released {
        in_use[l] = false;
    }
    let kids = &tree.children[u];
    for (k, &(v, b)) in kids.iter().enumerate() {
        let last = k + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_text(g, b));
        write_atom(g, v, tree, labels, in_use, out);
        if !last {
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::parse_smiles;

    fn canon(s: &str) -> String {
        canonical_smiles(&parse_smiles(s).unwrap())
    }

    #[test]
    fn equivalent_spellings_agree() {
        assert_eq!(canon("OCC"), canon("CCO"));
        assert_eq!(canon("C(C)O"), canon("CCO"));
        assert_eq!(canon("c1ccccc1O"), canon("Oc1ccccc1"));
        assert_eq!(canon("OC(=O)C"), canon("CC(O)=O"));
        assert_eq!(canon("[Na+].[Cl-]"), canon("[Cl-].[Na+]"));
    }

    #[test]
    fn distinct_molecules_differ() {
        assert_ne!(canon("CCO"), canon("COC"));
        assert_ne!(canon("c1ccncc1"), canon("c1ccccc1"));
        assert_ne!(canon("CC=O"), canon("C=CO"));
    }

    #[test]
    fn round_trip_is_stable() {
        for s in [
            "CCO",
            "c1ccc2ccccc2c1",
            "C1CC2CCC1C2",
            "OC(=O)c1ccccc1O",
            "[NH4+]",
            "C#N",
            "c1ccc(-c2ccccc2)cc1",
            "C12C3C4C1C5C2C3C45",
            "[O-][n+]1ccccc1",
        ] {
            let c = canon(s);
            assert_eq!(canon(&c), c, "{s} -> {c}");
            assert_eq!(parse_smiles(&c).unwrap().atom_count(), parse_smiles(s).unwrap().atom_count());
        }
    }

    #[test]
    fn priority_orderings_reparse_to_same_canonical() {
        let g = parse_smiles("CC(C)c1ccc(O)cc1C(=O)N").unwrap();
        let reference = canonical_smiles(&g);
        let n = g.atom_count();
        for shift in 0..n {
            let priority: Vec<usize> = (0..n).map(|i| (i * 7 + shift) % n).collect();
            let s = write_smiles_with_priority(&g, &priority);
            assert_eq!(canon(&s), reference, "via {s}");
        }
    }
}
