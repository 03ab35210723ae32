//! Drives the `textmol` binary end to end on small synthetic corpora.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--synthetic", "20", "--seed", "3", "--k", "3", "--r", "3", "--d", "8", "--heads", "2", "--head-dim", "4",
    "--layers", "1", "--epochs", "3", "--gen-max-len", "20",
];

fn textmol(cmd: &str, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textmol"))
        .arg(cmd)
        .arg("--out-dir")
        .arg(out)
        .args(SMALL)
        .args(extra)
        .env_remove("LLM_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).to_str().unwrap().to_string()
}

#[test]
fn full_pipeline_is_rerunnable() {
    let runs: Vec<(tempfile::TempDir, Vec<String>)> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let mut out = Vec::new();
            for cmd in ["prepare", "run-llm", "train", "evaluate"] {
                out.push(ok(&textmol(cmd, dir.path(), &[])));
            }
            out.push(ok(&textmol("generate", dir.path(), &["--query", "The molecule is an acyclic alcohol."])));
            let shown = dir.path().to_str().unwrap().to_string();
            (dir, out.into_iter().map(|s| s.replace(&shown, "<out>")).collect())
        })
        .collect();
    assert_eq!(runs[0].1, runs[1].1);
    assert!(runs[0].1[0].contains("train       16"));
    for f in ["predictions/train.jsonl", "model.ckpt", "metrics.jsonl", "report_test.txt", "report_test.jsonl", "generated_test.jsonl", "run.config"] {
        let a = std::fs::read(runs[0].0.path().join(f)).unwrap();
        let b = std::fs::read(runs[1].0.path().join(f)).unwrap_or_default();
        // run.config records the out_dir, which differs
        if f == "run.config" {
            assert_eq!(a.len() - runs[0].0.path().to_str().unwrap().len(), b.len() - runs[1].0.path().to_str().unwrap().len());
        } else {
            assert_eq!(a, b, "{f} differs");
        }
    }
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.config");
    std::fs::write(&cfg, "synthetic = 12\nseed = 9\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_textmol"))
        .args(["prepare", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path())
        .args(["--seed", "4"])
        .output()
        .unwrap();
    ok(&o);
    let echoed = std::fs::read_to_string(dir.path().join("run.config")).unwrap();
    assert!(echoed.contains("synthetic = 12\n") && echoed.contains("seed = 4\n"), "{echoed}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(textmol("prepare", dir.path(), &["--no-such-key", "1"]).status.code(), Some(2));
    assert_eq!(textmol("train", dir.path(), &[]).status.code(), Some(3));
    ok(&textmol("prepare", dir.path(), &[]));
    assert_eq!(textmol("run-llm", dir.path(), &["--llm", "live", "--endpoint", "http://127.0.0.1:9"]).status.code(), Some(2));
    assert_eq!(textmol("run-llm", dir.path(), &["--llm", "replay", "--replay-log", "missing.jsonl"]).status.code(), Some(2));
    ok(&textmol("run-llm", dir.path(), &[]));
    let o = textmol("train", dir.path(), &["--lr", "1e200"]);
    assert_eq!(o.status.code(), Some(5), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("model.diverged.ckpt").is_file());
}

#[test]
fn replay_fixture_with_one_bad_response() {
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            ok(&textmol("prepare", dir.path(), &[]));
            let args = ["--llm", "replay", "--replay-log", &fixture("replay_test_split.jsonl"), "--llm-splits", "test"];
            let out = ok(&textmol("run-llm", dir.path(), &args));
            assert_eq!(out, "test: 2 queries, 1 warnings\n");
            std::fs::read(dir.path().join("predictions/test.jsonl")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("\"ranked_smiles\":[\"CC=C(O)O\""));
    assert!(lines[1].contains("\"ranked_smiles\":[]"));
}

#[test]
fn credential_value_never_written() {
    let dir = tempfile::tempdir().unwrap();
    let secret = "sk-test-7f3a9c-do-not-log";
    ok(&textmol("prepare", dir.path(), &[]));
    let o = Command::new(env!("CARGO_BIN_EXE_textmol"))
        .args(["run-llm", "--out-dir"])
        .arg(dir.path())
        .args(SMALL)
        .args(["--llm", "live", "--endpoint", "http://127.0.0.1:9", "--credential-env", "TEXTMOL_TEST_KEY"])
        .env("TEXTMOL_TEST_KEY", secret)
        .env("RUST_LOG", "debug")
        .output()
        .unwrap();
    // this build has no HTTP provider, so the run stops after the credential check
    assert_eq!(o.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&o.stderr).contains(secret));
    ok(&textmol("run-llm", dir.path(), &[]));
    ok(&textmol("train", dir.path(), &[]));
    for entry in walk(dir.path()) {
        let bytes = std::fs::read(&entry).unwrap();
        assert!(!bytes.windows(secret.len()).any(|w| w == secret.as_bytes()), "{}", entry.display());
    }
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
