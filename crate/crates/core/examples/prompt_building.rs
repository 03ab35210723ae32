//! Build a few-shot prompt for a text2mol query with scaffold sampling over
//! a synthetic corpus.

use textmol::dataset::make_synthetic_corpus;
use textmol::prompting::{Direction, HashedTfIdf, PromptBuilder, PromptConfig, Sampling};

fn main() {
    let corpus = make_synthetic_corpus(60, 1).expect("synthetic corpus");
    let embedder = HashedTfIdf::fit(corpus.train.iter().map(|p| p.description.as_str()), 256);
    let config = PromptConfig { k: 3, r: 3, sampling: Sampling::Scaffold, ..PromptConfig::default() };
    let builder = PromptBuilder::new(&corpus.train, Direction::Text2Mol, config, &embedder).expect("index builds");

    let query = &corpus.test[0];
    let prompt = builder.prompt(query).expect("prompt fits the budget");
    for d in &prompt.demonstrations {
        eprintln!("demo {} similarity {:.3}", d.id, d.similarity);
    }
    println!("{}", prompt.rendered);
    eprintln!("reference answer: {}", query.smiles);
}
