//! End-to-end pipeline on a 32-pair synthetic corpus: stub LLM, stub
//! embeddings, joint training at the default dimensions, then scoring on
//! the training split. Pass `--quick` for a small model.

use textmol::pipeline::{cmd_evaluate, cmd_prepare, cmd_run_llm, cmd_train, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join(format!("textmol-overfit-{}", std::process::id()));
    let mut cfg = RunConfig::default();
    let mut settings = vec![
        ("out_dir", out.to_str().unwrap().to_string()),
        ("synthetic", "40".into()),
        ("monitor", "train".into()),
        ("lr", "0.003".into()),
        ("epochs", "300".into()),
        ("early_stop", "1000".into()),
        ("lr_patience", "50".into()),
        ("split", "train".into()),
    ];
    if std::env::args().any(|a| a == "--quick") {
        for (k, v) in [("d", "32"), ("heads", "2"), ("head_dim", "16"), ("epochs", "150")] {
            settings.push((k, v.into()));
        }
    }
    for (k, v) in &settings {
        cfg.set(k, v)?;
    }
    print!("{}", cmd_prepare(&cfg)?);
    print!("{}", cmd_run_llm(&cfg)?);
    print!("{}", cmd_train(&cfg)?);
    print!("{}", cmd_evaluate(&cfg)?);
    println!("artifacts in {}", out.display());
    Ok(())
}
