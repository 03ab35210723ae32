use textmol::smiles::is_valid;

fn fixture() -> Vec<(String, bool)> {
    include_str!("fixtures/validity_200.tsv")
        .lines()
        .filter(|l| !l.starts_with("# ") && !l.is_empty())
        .map(|l| {
            let (s, label) = l.rsplit_once('\t').expect("two columns");
            (s.to_string(), label == "1")
        })
        .collect()
}

#[test]
fn validity_fixture_agreement() {
    let rows = fixture();
    assert_eq!(rows.len(), 200);
    let disagreements: Vec<&(String, bool)> = rows.iter().filter(|(s, l)| is_valid(s) != *l).collect();
    for (s, l) in &disagreements {
        eprintln!("disagree: {s:?} reference={l}");
    }
    let agreement = 1.0 - disagreements.len() as f64 / rows.len() as f64;
    assert!(agreement >= 0.98, "agreement {agreement}");
}
