// Regenerates the bundled fixture under `fixtures/wiki200`.
//
// `cargo run --example make_fixture [DIR]`

use std::error::Error;
use std::path::{Path, PathBuf};

use evlink::kb::{write_kb, write_mentions, Kb};
use evlink::synth::{wiki_fixture, word_vectors};

const TITLES: usize = 200;
const SEED: u64 = 2024;
const VECTOR_DIM: usize = 16;

const RUN_CONF: &str = "\
# small settings for the bundled fixture
kb = kb.jsonl
mentions = mentions.jsonl
vectors = vectors.txt
seed = 7
k = auto
encoder.vocab_size = 4096
encoder.dim = 32
encoder.batch_size = 16
encoder.epochs = 60
encoder.learning_rate = 0.5
encoder.init_scale = 0.5
reranker.vocab_size = 4096
reranker.dim = 32
reranker.batch_size = 16
reranker.epochs = 40
reranker.learning_rate = 0.5
reranker.init_scale = 1.0
";

pub fn bundled_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200")
}

pub fn write_fixture(dir: &Path) -> Result<(), Box<dyn Error>> {
    std::fs::create_dir_all(dir)?;
    let fx = wiki_fixture(TITLES, SEED);
    let (kb, _) = Kb::from_entries(fx.entries)?;
    write_kb(&dir.join("kb.jsonl"), &kb)?;
    write_mentions(&dir.join("mentions.jsonl"), &fx.mentions)?;

    let mut text = String::new();
    for e in kb.iter() {
        text.push_str(&e.title);
        text.push(' ');
        text.push_str(&e.body);
        text.push(' ');
    }
    for m in &fx.mentions {
        text.push_str(&m.doc_text);
        text.push(' ');
    }
    let words = evlink::baselines::words(&text);
    let vectors = word_vectors(words.iter().map(String::as_str), VECTOR_DIM, SEED);
    std::fs::write(dir.join("vectors.txt"), vectors)?;
    std::fs::write(dir.join("run.conf"), RUN_CONF)?;
    Ok(())
}

/// Regenerates the fixture into a scratch directory and returns the names of
/// files that differ from the bundled copy.
pub fn run_example() -> Result<Vec<String>, Box<dyn Error>> {
    let tmp = std::env::temp_dir().join(format!("evlink-fixture-{}", std::process::id()));
    write_fixture(&tmp)?;
    let mut differ = Vec::new();
    for name in ["kb.jsonl", "mentions.jsonl", "vectors.txt", "run.conf"] {
        let fresh = std::fs::read(tmp.join(name))?;
        let bundled = std::fs::read(bundled_dir().join(name)).unwrap_or_default();
        if fresh != bundled {
            differ.push(name.to_string());
        }
    }
    std::fs::remove_dir_all(&tmp)?;
    Ok(differ)
}

fn main() -> Result<(), Box<dyn Error>> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(bundled_dir);
    write_fixture(&dir)?;
    println!("wrote {}", dir.display());
    Ok(())
}
