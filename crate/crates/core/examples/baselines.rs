// Scores the three non-neural baselines on the fixture's test split:
// the most frequent title for a surface, BM25 over title pages, and cosine
// between averaged word vectors.
//
// `cargo run --example baselines`

use std::error::Error;
use std::path::Path;

use evlink::dataset::{balance_pos, build_splits, SplitConfig};
use evlink::eval::{accuracy, render_side_by_side, EvalReport};
use evlink::kb::{load_kb, load_mentions};
use evlink::pipeline::{run_baseline, BaselineKind, RunConfig};

pub fn run_example() -> Result<Vec<(BaselineKind, EvalReport)>, Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200");
    let cfg = RunConfig::load(&dir.join("run.conf"))?;
    let (kb, _) = load_kb(&dir.join("kb.jsonl"))?;
    let mentions = load_mentions(&dir.join("mentions.jsonl"), Some(&kb))?;
    let split = SplitConfig { seed: cfg.seed, ..SplitConfig::default() };
    let splits = build_splits(balance_pos(mentions, split.seed).mentions, &kb, &split)?;

    let mut reports = Vec::new();
    for kind in [BaselineKind::Prior, BaselineKind::Bm25, BaselineKind::Cosine] {
        let run = run_baseline(&cfg, kind, &kb, &splits.train, &splits.test, 10)?;
        println!("{:>6}: scored {} of {} test mentions", kind.name(), run.evaluated.len(), splits.test.len());
        reports.push((kind, accuracy(&run.predictions, &run.evaluated, 1)));
    }
    let cols: Vec<(String, &EvalReport)> = reports.iter().map(|(k, r)| (k.heading().to_string(), r)).collect();
    print!("{}", render_side_by_side(&cols));
    Ok(reports)
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
