//! Train the full model and each ablated variant on a small synthetic
//! corpus and print the comparison table.

use textmol::pipeline::{cmd_ablate, cmd_prepare, cmd_run_llm, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join(format!("textmol-ablation-{}", std::process::id()));
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("out_dir", out.to_str().unwrap()),
        ("synthetic", "60"),
        ("d", "32"),
        ("heads", "2"),
        ("head_dim", "16"),
        ("lr", "0.003"),
        ("epochs", "40"),
        ("k", "4"),
        ("r", "3"),
    ] {
        cfg.set(k, v)?;
    }
    cmd_prepare(&cfg)?;
    cmd_run_llm(&cfg)?;
    print!("{}", cmd_ablate(&cfg)?);
    Ok(())
}
