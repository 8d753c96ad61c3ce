use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use evlink::pipeline::{run_pipeline, Layout, Outcome, RunConfig, RunSummary, Stage};
use evlink::Error;

fn fixture_config(out: &Path) -> RunConfig {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200/run.conf");
    let mut cfg = RunConfig::load(&conf).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn ran(summary: &RunSummary) -> Vec<Stage> {
    summary.stages.iter().filter(|(_, o)| *o == Outcome::Ran).map(|(s, _)| *s).collect()
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, out);
            } else {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, &mut out);
    out
}

#[test]
fn full_run_writes_every_artifact_and_rerun_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    let first = run_pipeline(&cfg).unwrap();
    assert_eq!(ran(&first), Stage::ALL.to_vec());

    let l = Layout::new(dir.path());
    for p in [
        l.biencoder(),
        l.reranker(),
        l.index(),
        l.selected_k(),
        l.baseline("prior"),
        l.baseline("bm25"),
        l.baseline("cosine"),
        l.report("recall.txt"),
        l.report("accuracy.json"),
        l.report("nil.txt"),
        l.report("baselines.txt"),
        l.report("summary.txt"),
        l.manifest(),
    ] {
        assert!(p.exists(), "missing {}", p.display());
    }
    assert!(!l.lock().exists());

    let before = snapshot(dir.path());
    let second = run_pipeline(&cfg).unwrap();
    assert!(ran(&second).is_empty(), "reran {:?}", ran(&second));
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn deleting_an_artifact_reruns_its_stage_and_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    run_pipeline(&cfg).unwrap();
    let before = snapshot(dir.path());

    std::fs::remove_file(Layout::new(dir.path()).reranker()).unwrap();
    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(ran(&again), vec![Stage::TrainReranker, Stage::Rank, Stage::Eval]);
    // training is deterministic, so everything comes back byte for byte
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn changing_a_setting_reruns_from_the_first_stage_that_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    run_pipeline(&cfg).unwrap();
    cfg.set("nil_threshold", "0.8").unwrap();
    let again = run_pipeline(&cfg).unwrap();
    assert_eq!(ran(&again), vec![Stage::Rank, Stage::Eval]);
}

#[test]
fn corrupt_index_fails_retrieve_and_leaves_other_artifacts_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    run_pipeline(&cfg).unwrap();
    let l = Layout::new(dir.path());
    let mut bytes = std::fs::read(l.index()).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(l.index(), &bytes).unwrap();
    let before = snapshot(dir.path());

    let err = run_pipeline(&cfg).unwrap_err();
    match &err {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "retrieve");
            assert!(matches!(**source, Error::Format(_)), "{source}");
        }
        other => panic!("unexpected error {other}"),
    }
    assert_eq!(snapshot(dir.path()), before);
    assert!(!l.lock().exists());
}

#[test]
fn held_lock_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture_config(dir.path());
    std::fs::write(Layout::new(dir.path()).lock(), b"").unwrap();
    assert!(matches!(run_pipeline(&cfg), Err(Error::Locked(_))));
}

#[test]
fn missing_kb_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    cfg.kb = None;
    assert!(matches!(run_pipeline(&cfg), Err(Error::Config(_))));
}

#[test]
fn selected_stages_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(dir.path());
    cfg.set("stages", "split").unwrap();
    let s = run_pipeline(&cfg).unwrap();
    assert_eq!(ran(&s), vec![Stage::Split]);
    assert!(Layout::new(dir.path()).splits().join("train.jsonl").exists());
    assert!(!Layout::new(dir.path()).biencoder().exists());
}
