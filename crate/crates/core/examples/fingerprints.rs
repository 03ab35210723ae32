//! Morgan and path fingerprints and Tanimoto similarity between molecules.

use textmol::smiles::{morgan_fingerprint, parse_smiles, path_fingerprint};

fn main() {
    let mols = ["CCO", "CCCO", "c1ccccc1O", "c1ccccc1N", "CC(=O)O"];
    let graphs: Vec<_> = mols.iter().map(|s| parse_smiles(s).expect("valid SMILES")).collect();
    let morgan: Vec<_> = graphs.iter().map(|g| morgan_fingerprint(g, 2, 2048).unwrap()).collect();
    let path: Vec<_> = graphs.iter().map(|g| path_fingerprint(g, 7, 2048).unwrap()).collect();

    println!("Morgan (radius 2, 2048 bits) / path (<= 7 bonds) Tanimoto");
    print!("{:>11}", "");
    for m in &mols {
        print!("{m:>16}");
    }
    println!();
    for i in 0..mols.len() {
        print!("{:>11}", mols[i]);
        for j in 0..mols.len() {
            let a = morgan[i].tanimoto(&morgan[j]).unwrap();
            let b = path[i].tanimoto(&path[j]).unwrap();
            print!("{:>16}", format!("{a:.2}/{b:.2}"));
        }
        println!();
    }
}
