//! Run the two-layer attention fusion on one example and print pooled
//! vectors, attention weights and the effect of each ablation switch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use textmol::embeddings::{EmbeddingProvider, StubProvider, Tokenization};
use textmol::fusion::{fuse_example, prediction_indicator, Ablation, FusionDims, FusionExample, FusionParams};
use textmol::numcore::ParamStore;

fn main() {
    let d = 16;
    let vocab: Vec<String> = ["C", "N", "O", "c", "1", "(", ")", "="].map(String::from).to_vec();
    let dims = FusionDims::new(d, 4, 4, 2, vocab.len()).unwrap();
    let mut store = ParamStore::new();
    let params = FusionParams::init(&mut store, dims, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();

    let words = StubProvider::new(d, 0, Tokenization::Words);
    let org = words.embed("The molecule is a phenol with a short side chain.").unwrap();
    let exp = words.embed("A hydroxy group on a benzene ring suggests c1ccccc1O.").unwrap();
    let (pred, _) = prediction_indicator(&["c1ccccc1O".into(), "CCO".into()], &vocab, 2);
    let ex = FusionExample::new(&org, &exp, pred);

    let full = fuse_example(&ex, &store, &params, Ablation::FULL).unwrap();
    for rec in &full.attention_trace {
        println!("layer {} head {}  weights {:?}", rec.layer, rec.head, rec.weights.iter().map(|w| format!("{w:.3}")).collect::<Vec<_>>());
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("|y_org| {:.3}  |y_exp| {:.3}  |y_pred| {:.3}  |y_cross| {:.3}", norm(&full.y_org), norm(&full.y_exp), norm(&full.y_pred), norm(&full.y_cross));

    for variant in &Ablation::variants()[1..] {
        let out = fuse_example(&ex, &store, &params, *variant).unwrap();
        let dist = norm(&out.y_cross.iter().zip(&full.y_cross).map(|(a, b)| a - b).collect::<Vec<_>>());
        println!("{:<12} |y_cross - full| = {dist:.4}", variant.label());
    }
}
