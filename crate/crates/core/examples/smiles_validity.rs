//! Parse SMILES strings, report validity and canonical forms.
//!
//!     cargo run --example smiles_validity -- "OCC" "c1ccccc1" "C1CC"

use textmol::smiles::{canonical_smiles, parse_smiles};

fn main() {
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = ["OCC", "C(O)C", "c1ccccc1O", "C1CC", "C(C)(C)(C)(C)C", "[Na+].[Cl-]", "c1cccc1"]
            .map(String::from)
            .to_vec();
    }
    for s in &inputs {
        match parse_smiles(s) {
            Ok(g) => println!("{s:<18} valid    {} atoms, {} rings, canonical {}", g.atom_count(), g.ring_count(), canonical_smiles(&g)),
            Err(e) => println!("{s:<18} invalid  {e}"),
        }
    }
}
