// Shows the token sequences fed to the encoders for one fixture mention:
// the mention side with and without entity markup, the title side and the
// joint sequence the reranker reads.
//
// `cargo run --example representations`

use std::error::Error;
use std::path::Path;

use evlink::eval::AblationVariant;
use evlink::kb::{load_kb, load_mentions};
use evlink::repr::{build_mention_repr, build_title_repr, joint_repr, ReprConfig, TokenSequence};

pub struct Shown {
    pub mention: Vec<(AblationVariant, TokenSequence)>,
    pub title: TokenSequence,
    pub joint: TokenSequence,
}

fn preview(seq: &TokenSequence, n: usize) -> String {
    let toks = seq.tokens();
    let head = toks[..n.min(toks.len())].join(" ");
    if toks.len() > n { format!("{head} ... ({} tokens)", toks.len()) } else { head }
}

pub fn run_example() -> Result<Shown, Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200");
    let (kb, _) = load_kb(&dir.join("kb.jsonl"))?;
    let mentions = load_mentions(&dir.join("mentions.jsonl"), Some(&kb))?;
    let m = mentions.iter().find(|m| !m.entities.is_empty() && m.gold_id.is_some()).ok_or("no linked mention")?;
    let gold = kb.get(m.gold_id.unwrap()).unwrap();
    println!("mention {:?} -> {:?}", m.surface, gold.title);

    let base = ReprConfig { window_chars: 80, ..ReprConfig::default() };
    let mut shown = Vec::new();
    for v in [AblationVariant::Full, AblationVariant::NoType, AblationVariant::NoEntities] {
        let seq = build_mention_repr(m, &m.entities, &v.apply(&base));
        println!("{:>10}: {}", v.name(), preview(&seq, 40));
        shown.push((v, seq));
    }
    let title = build_title_repr(gold, &base);
    println!("{:>10}: {}", "title", preview(&title, 30));
    let joint = joint_repr(&shown[0].1, &title, base.max_len);
    println!("{:>10}: {} tokens, title starts at {:?}", "joint", joint.len(), joint.title_start());
    Ok(Shown { mention: shown, title, joint })
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
