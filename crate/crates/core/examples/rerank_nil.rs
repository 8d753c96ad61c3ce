// Reranks retrieved candidates with the joint scorer and applies the Nil
// rule to a mention whose event has no page.
//
// `cargo run --release --example rerank_nil`

use std::error::Error;

use evlink::encoder::{train_biencoder, VectorProvider};
use evlink::eval::accuracy;
use evlink::kb::{EventMention, PosClass};
use evlink::repr::ReprConfig;
use evlink::rerank::{rank_and_decide, train_reranker, PredictionList, DEFAULT_NIL_THRESHOLD};
use evlink::retrieval::{build_index, retrieve_mentions};
use evlink::synth::{entity_overlap_task, small_encoder_config, small_reranker_config};

pub struct Ranked {
    pub accuracy: f64,
    pub unknown: PredictionList,
}

pub fn run_example() -> Result<Ranked, Box<dyn Error>> {
    let task = entity_overlap_task(20, 5, 3);
    let train = task.train();
    let repr = ReprConfig::default();
    let enc = train_biencoder(&train, &task.kb, &repr, &small_encoder_config(3))?;
    let provider = VectorProvider::Toy { params: &enc.params, kb: &task.kb, repr: repr.clone() };
    let index = build_index(&task.kb, &provider, "toy")?;
    let rcfg = small_reranker_config(3);
    let sets = retrieve_mentions(&index, &enc.params, &task.mentions, &repr, rcfg.candidates_per_mention)?;
    let ranker = train_reranker(&train, &sets, &task.kb, &repr, &rcfg)?;

    let preds = sets
        .iter()
        .zip(&task.mentions)
        .map(|(s, m)| rank_and_decide(&ranker.params, m, s, &task.kb, &repr, DEFAULT_NIL_THRESHOLD))
        .collect::<evlink::Result<Vec<_>>>()?;
    let acc = accuracy(&preds, &task.mentions, 1).combined.percent().unwrap_or(0.0);
    println!("reranked accuracy {acc:.2} over {} mentions", preds.len());

    let text = "Crowds gathered as Osk Varrin addressed the Tellu guild downtown.";
    let at = text.find("gathered").unwrap();
    let unknown = EventMention::new(9999, text, (at, at + "gathered".len()), PosClass::Verb, None)?;
    let cands = retrieve_mentions(&index, &enc.params, std::slice::from_ref(&unknown), &repr, rcfg.candidates_per_mention)?;
    let p = rank_and_decide(&ranker.params, &unknown, &cands[0], &task.kb, &repr, DEFAULT_NIL_THRESHOLD)?;
    let top = p.top().unwrap();
    println!("unknown event: top {:?} with prob {:.3}", task.kb.get(top.id).unwrap().title, top.prob);
    // the toy scorer is confident even here, so the decision depends on the threshold
    for threshold in [DEFAULT_NIL_THRESHOLD, 0.99] {
        let nil = evlink::rerank::is_nil(top.prob, threshold);
        println!("  threshold {threshold}: {}", if nil { "Nil" } else { "linked" });
    }
    Ok(Ranked { accuracy: acc, unknown: p })
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
