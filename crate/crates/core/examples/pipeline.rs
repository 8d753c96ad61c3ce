// Runs every stage on the bundled fixture, then runs again to show that
// finished stages are skipped.
//
// `cargo run --release --example pipeline [OUT_DIR]`

use std::error::Error;
use std::path::{Path, PathBuf};

use evlink::pipeline::{run_pipeline, RunConfig, RunSummary};

pub fn run_in(out: &Path) -> Result<(RunSummary, RunSummary), Box<dyn Error>> {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200/run.conf");
    let mut cfg = RunConfig::load(&conf)?;
    cfg.out = out.to_path_buf();
    let first = run_pipeline(&cfg)?;
    let second = run_pipeline(&cfg)?;
    for ((stage, a), (_, b)) in first.stages.iter().zip(&second.stages) {
        println!("{:<16} {a:?} then {b:?}", stage.name());
    }
    print!("{}", std::fs::read_to_string(out.join("reports/summary.txt"))?);
    Ok((first, second))
}

pub fn run_example() -> Result<(RunSummary, RunSummary), Box<dyn Error>> {
    let out = std::env::temp_dir().join(format!("evlink-pipeline-{}", std::process::id()));
    let result = run_in(&out);
    let _ = std::fs::remove_dir_all(&out);
    result
}

fn main() -> Result<(), Box<dyn Error>> {
    match std::env::args().nth(1) {
        Some(dir) => run_in(&PathBuf::from(dir)).map(|_| ()),
        None => run_example().map(|_| ()),
    }
}
