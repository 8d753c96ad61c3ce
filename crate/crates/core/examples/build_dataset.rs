// Builds train/dev/test splits from the bundled fixture and prints the
// per-slice counts.
//
// `cargo run --example build_dataset`

use std::error::Error;
use std::path::Path;

use evlink::dataset::{balance_pos, build_splits, jaccard3, SplitConfig, SplitName, Splits};
use evlink::kb::{load_kb, load_mentions};

pub fn run_example() -> Result<Splits, Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200");
    let (kb, report) = load_kb(&dir.join("kb.jsonl"))?;
    let mentions = load_mentions(&dir.join("mentions.jsonl"), Some(&kb))?;
    println!("{} titles ({} events), {} mentions", kb.len(), kb.event_titles("Event").len(), mentions.len());
    if report.dropped_anchors > 0 {
        println!("{} anchors pointed outside the KB", report.dropped_anchors);
    }

    let cfg = SplitConfig { seed: 7, ..SplitConfig::default() };
    let balanced = balance_pos(mentions, cfg.seed);
    let splits = build_splits(balanced.mentions, &kb, &cfg)?;
    print!("{}", splits.stats.render());

    // nominal difficulty is a trigram overlap between surface and title
    for (surface, title) in [("wartime 1940s", "World War II"), ("1994 World Cup qualifier", "1994 FIFA World Cup qualification")] {
        println!("J({surface:?}, {title:?}) = {:.3}", jaccard3(surface, title)?);
    }
    println!("train {} / dev {} / test {}", splits.train.len(), splits.stats.split_total(SplitName::Dev), splits.test.len());
    Ok(splits)
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
