// Trains the two-tower encoder on a synthetic task where only the entity
// names in a mention's context identify its title, then retrieves from the
// title index.
//
// `cargo run --release --example train_biencoder`

use std::error::Error;

use evlink::encoder::{train_biencoder, VectorProvider};
use evlink::eval::recall_at_k;
use evlink::repr::ReprConfig;
use evlink::retrieval::{build_index, retrieve_mentions};
use evlink::synth::{entity_overlap_task, small_encoder_config};

pub struct Trained {
    pub losses: Vec<f64>,
    pub recall_at_1: f64,
    pub recall_at_10: f64,
}

pub fn run_example() -> Result<Trained, Box<dyn Error>> {
    let task = entity_overlap_task(20, 5, 11);
    let repr = ReprConfig::default();
    let cfg = small_encoder_config(11);
    let trained = train_biencoder(&task.train(), &task.kb, &repr, &cfg)?;
    for (e, loss) in trained.epoch_losses.iter().enumerate().step_by(40) {
        println!("epoch {e:>3}  loss {loss:.4}");
    }

    let provider = VectorProvider::Toy { params: &trained.params, kb: &task.kb, repr: repr.clone() };
    let index = build_index(&task.kb, &provider, "toy")?;
    let sets = retrieve_mentions(&index, &trained.params, &task.mentions, &repr, 10)?;
    let r1 = recall_at_k(&sets, &task.mentions, 1).combined.percent().unwrap_or(0.0);
    let r10 = recall_at_k(&sets, &task.mentions, 10).combined.percent().unwrap_or(0.0);
    println!("recall@1 {r1:.2}  recall@10 {r10:.2}");
    Ok(Trained { losses: trained.epoch_losses, recall_at_1: r1, recall_at_10: r10 })
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
