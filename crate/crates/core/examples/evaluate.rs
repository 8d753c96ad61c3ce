// Evaluates a handful of hand-written predictions: recall at several
// cutoffs, accuracy, and accuracy once Nil decisions are counted.
//
// `cargo run --example evaluate`

use std::error::Error;

use evlink::eval::{accuracy, accuracy_with_nil, recall_at_k, with_threshold, EvalReport};
use evlink::kb::{EventMention, PosClass, SplitLabel};
use evlink::retrieval::Candidate;
use evlink::rerank::PredictionList;

fn mention(id: u64, pos: PosClass, gold: Option<u64>, label: SplitLabel) -> Result<EventMention, Box<dyn Error>> {
    let mut m = EventMention::new(id, "the event happened", (4, 9), pos, gold)?;
    m.split_label = Some(label);
    Ok(m)
}

pub fn run_example() -> Result<Vec<EvalReport>, Box<dyn Error>> {
    use PosClass::*;
    use SplitLabel::*;
    let gold = vec![
        mention(1, Verb, Some(10), SeenEvent)?,
        mention(2, Verb, Some(11), SeenEvent)?,
        mention(3, Verb, Some(12), UnseenEvent)?,
        mention(4, Nominal, Some(10), NominalEasy)?,
        mention(5, Nominal, Some(13), NominalHard)?,
        mention(6, Nominal, None, Nil)?,
    ];
    let scored = |ids: &[(u64, f64)]| ids.iter().map(|&(id, score)| Candidate { id, score }).collect::<Vec<_>>();
    let preds = vec![
        PredictionList::from_scores(1, scored(&[(10, 3.0), (11, 0.0)]), 0.5),
        PredictionList::from_scores(2, scored(&[(10, 1.0), (11, 0.9), (12, 0.0)]), 0.5),
        PredictionList::from_scores(3, scored(&[(10, 0.0), (11, 0.0), (13, 0.0)]), 0.5),
        PredictionList::from_scores(4, scored(&[(10, 0.2), (12, 0.1)]), 0.5),
        PredictionList::from_scores(5, scored(&[(11, 1.0), (12, 0.5), (14, 0.0), (15, 0.0), (16, 0.0), (13, 0.0)]), 0.5),
        PredictionList::from_scores(6, scored(&[(10, 0.1), (11, 0.0), (12, 0.0)]), 0.5),
    ];
    let reports = vec![
        recall_at_k(&preds, &gold, 1),
        recall_at_k(&preds, &gold, 5),
        accuracy(&preds, &gold, 1),
        accuracy_with_nil(&preds, &gold, 0.5),
        accuracy_with_nil(&with_threshold(&preds, 0.0), &gold, 0.0),
    ];
    for r in &reports {
        println!("{}", r.render());
    }
    Ok(reports)
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example().map(|_| ())
}
