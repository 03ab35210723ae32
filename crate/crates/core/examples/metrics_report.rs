//! Score generated SMILES against references and print both report formats.

use textmol::metrics::{evaluate_mol2text, evaluate_text2mol, Pair, ReportFormat};

fn main() {
    let pairs = vec![
        Pair::new("CCO", "CCO"),
        Pair::new("OCC", "CCO"),
        Pair::new("c1ccccc1", "c1ccccc1O"),
        Pair::new("C1CC", "CC(=O)O"),
    ];
    let report = evaluate_text2mol(&pairs).expect("scorable pairs");
    print!("{}", report.render("example", ReportFormat::Text));
    print!("{}", report.render("example", ReportFormat::Jsonl));

    let captions = vec![
        Pair::new("The molecule is a primary alcohol.", "The molecule is a primary alcohol."),
        Pair::new("It is an aromatic amine.", "The molecule is an aromatic alcohol."),
    ];
    let text = evaluate_mol2text(&captions).expect("scorable pairs");
    print!("\n{}", text.render("example", ReportFormat::Text));
}
