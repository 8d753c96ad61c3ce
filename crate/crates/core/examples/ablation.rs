// Retrains the linker with entity types removed and with entity markup
// removed, and compares each against the full representation.
//
// `cargo run --release --example ablation`

use std::error::Error;

use evlink::eval::{run_ablation, AblationInputs, AblationResult, AblationVariant};
use evlink::repr::ReprConfig;
use evlink::synth::{entity_overlap_task, small_encoder_config, small_reranker_config};

pub fn run_example() -> Result<AblationResult, Box<dyn Error>> {
    let task = entity_overlap_task(20, 5, 21);
    let train = task.train();
    let repr = ReprConfig::default();
    let encoder = small_encoder_config(21);
    let reranker = small_reranker_config(21);
    let inputs = AblationInputs {
        kb: &task.kb,
        train: &train,
        eval: &task.mentions,
        repr: &repr,
        encoder: &encoder,
        reranker: &reranker,
        k: 10,
        nil_threshold: 0.5,
    };
    let result = run_ablation(&inputs, &[AblationVariant::Full, AblationVariant::NoType, AblationVariant::NoEntities])?;
    print!("{}", result.render());
    Ok(result)
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
