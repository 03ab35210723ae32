//! Record responses from the offline stub LLM, then serve the same prompts
//! from the replay log and parse the ranked candidates.

use std::sync::Arc;

use textmol::dataset::make_synthetic_corpus;
use textmol::llmclient::{parse_response, CandidateKind, LlmClient, ReplayLog, ReplayProvider, RetryPolicy, StubLlm};
use textmol::prompting::{Direction, HashedTfIdf, PromptBuilder, PromptConfig};

fn main() {
    let corpus = make_synthetic_corpus(30, 2).expect("synthetic corpus");
    let embedder = HashedTfIdf::fit(corpus.train.iter().map(|p| p.description.as_str()), 256);
    let config = PromptConfig { k: 4, r: 3, ..PromptConfig::default() };
    let builder = PromptBuilder::new(&corpus.train, Direction::Text2Mol, config, &embedder).unwrap();
    let prompts: Vec<String> = corpus.test.iter().map(|p| builder.prompt(p).unwrap().rendered).collect();

    let dir = tempfile_dir();
    let log_path = dir.join("replay.jsonl");
    let recorder = LlmClient::new(Arc::new(StubLlm::new(3)), RetryPolicy::new(2))
        .with_log(ReplayLog::create(&log_path).unwrap());
    let recorded = recorder.query_all(&prompts, 2);

    let replay = LlmClient::new(Arc::new(ReplayProvider::load(&log_path).unwrap()), RetryPolicy::new(0));
    for ((pair, rec), prompt) in corpus.test.iter().zip(recorded).zip(&prompts) {
        let again = replay.query(prompt).unwrap();
        assert_eq!(rec.as_ref().unwrap().raw, again.raw);
        let parsed = parse_response(&again.raw, 3, CandidateKind::Smiles).unwrap();
        println!("{}  reference {}  candidates {:?}", pair.id, pair.smiles, parsed.ranked_smiles);
    }
    println!("replayed {} prompts from {}", prompts.len(), log_path.display());
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("textmol-llm-replay-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
