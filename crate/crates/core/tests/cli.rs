use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use evlink::cli::{run, Cli};
use evlink::pipeline::Layout;

fn conf() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200/run.conf").display().to_string()
}

fn evlink(out: &Path, args: &[&str]) -> ExitCode {
    let mut argv = vec!["evlink".to_string(), "--config".into(), conf(), "--out".into(), out.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(Cli::parse_from(argv)).unwrap_or_else(|e| panic!("{args:?}: {e}"))
}

#[test]
fn stages_one_command_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let l = Layout::new(out);
    assert_eq!(evlink(out, &["kb", "validate"]), ExitCode::SUCCESS);
    evlink(out, &["dataset", "build"]);
    assert!(l.splits().join("stats.txt").exists());
    evlink(out, &["train", "biencoder"]);
    evlink(out, &["index", "build"]);
    evlink(out, &["link", "retrieve"]);
    evlink(out, &["train", "reranker"]);
    evlink(out, &["link", "rank"]);
    for f in [l.biencoder(), l.index(), l.selected_k(), l.reranker(), l.predictions(evlink::dataset::SplitName::Test)] {
        assert!(f.exists(), "{}", f.display());
    }
    for system in ["prior", "bm25", "cosine"] {
        evlink(out, &["baseline", system]);
        assert!(l.baseline(system).exists());
    }
    evlink(out, &["eval", "--mode", "recall"]);
    evlink(out, &["eval", "--mode", "accuracy", "--at", "5", "--json"]);
    evlink(out, &["eval", "--mode", "nil", "--threshold", "0.3"]);
    evlink(out, &["repr", "dump", "--title", "1"]);
    evlink(out, &["repr", "dump", "--mention", "0"]);
    let cands = l.candidates(evlink::dataset::SplitName::Dev);
    evlink(out, &["link", "rank", "--candidates", &cands.display().to_string()]);
    // split validation runs once the split files exist
    assert_eq!(evlink(out, &["kb", "validate"]), ExitCode::SUCCESS);
}

#[test]
fn pipeline_run_and_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    evlink(out, &["pipeline", "run"]);
    assert!(Layout::new(out).report("summary.txt").exists());
    evlink(out, &["ablate", "--variants", "full,no-entities", "--k", "10", "--set", "encoder.epochs=20", "--set", "reranker.epochs=10"]);
    let table = std::fs::read_to_string(Layout::new(out).report("ablation.txt")).unwrap();
    assert!(table.contains("Full") && table.contains("- entities"), "{table}");
}

#[test]
fn flags_equal_config_keys() {
    let base = ["evlink", "--config", &conf()].map(String::from).to_vec();
    let with = |extra: &[&str]| {
        let mut v = base.clone();
        v.extend(extra.iter().map(|s| s.to_string()));
        v.extend(["pipeline".to_string(), "run".to_string()]);
        Cli::parse_from(v).common.config().unwrap()
    };
    let by_flags = with(&["--seed", "9", "--k", "30", "--nil-threshold", "0.25", "--out", "/tmp/x"]);
    let by_keys = with(&["--set", "seed=9", "--set", "k=30", "--set", "nil_threshold=0.25", "--set", "out=/tmp/x"]);
    assert_eq!(by_flags, by_keys);
    assert_eq!(by_flags.encoder.seed, 9);
}

#[test]
fn bad_input_is_an_error_not_a_panic() {
    let dir = tempfile::tempdir().unwrap();
    let argv = ["evlink", "--kb", "/nonexistent/kb.jsonl", "--out", &dir.path().display().to_string(), "dataset", "build"];
    assert!(run(Cli::parse_from(argv)).is_err());
    let argv = ["evlink", "--config", &conf(), "--set", "encoder.dim", "pipeline", "run"];
    assert!(run(Cli::parse_from(argv)).is_err());
    let argv = ["evlink", "--config", &conf(), "--set", "bm25.b=2", "pipeline", "run"];
    assert!(run(Cli::parse_from(argv)).is_err());
}

#[test]
fn invalid_kb_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb.jsonl");
    std::fs::write(&kb, "{\"id\":1,\"title\":\"A\",\"body\":\"a\",\"anchors\":[],\"types\":[]}\n{\"id\":1,\"title\":\"B\",\"body\":\"b\",\"anchors\":[],\"types\":[]}\n").unwrap();
    let argv = ["evlink", "--kb", &kb.display().to_string(), "--out", &dir.path().join("o").display().to_string(), "kb", "validate"];
    assert_eq!(run(Cli::parse_from(argv)).unwrap(), ExitCode::FAILURE);
}
