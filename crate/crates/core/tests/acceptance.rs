//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --test acceptance`.

use std::collections::{BTreeMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evlink::baselines::{prior_predictions, Bm25, Bm25Params, PriorTable};
use evlink::dataset::{balance_pos, build_splits, classify_nominal, jaccard3, surface_key, SplitConfig, TrainSplit};
use evlink::encoder::{biencoder_loss, train_biencoder, ToyEncoderParams, Tower, TowerGrad, VectorProvider};
use evlink::eval::{accuracy, accuracy_with_nil, recall_at_k, run_ablation, with_threshold, AblationInputs, AblationVariant};
use evlink::kb::{EventMention, Kb, PosClass, SplitLabel};
use evlink::pipeline::{run_pipeline, RunConfig};
use evlink::repr::{ReprConfig, TokenSequence};
use evlink::rerank::{is_nil, rank_and_decide, reranker_loss, train_reranker, Prediction, PredictionList, RankerParams};
use evlink::retrieval::{build_index, dot_f32, retrieve, retrieve_mentions, Candidate, DenseIndex};
use evlink::synth::{entity_overlap_task, small_encoder_config, small_reranker_config, wiki_fixture};
use evlink::vecfile::VectorCache;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

// 1 -------------------------------------------------------------------------

fn retrieval_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ties = 0usize;
    for instance in 0..50 {
        let rows = rng.random_range(1..=1000);
        let dim = rng.random_range(1..=64);
        // every other instance uses small integers so that scores tie
        let coarse = instance % 2 == 0;
        let value = |rng: &mut ChaCha8Rng| -> f32 {
            if coarse {
                rng.random_range(-1i8..=1) as f32
            } else {
                rng.random_range(-1.0f32..1.0)
            }
        };
        let mut cache = VectorCache::new(dim);
        let mut ids: Vec<u64> = (0..rows as u64).map(|i| i * 5 + 3).collect();
        ids.sort_unstable();
        for &id in &ids {
            let v: Vec<f32> = (0..dim).map(|_| value(&mut rng)).collect();
            cache.push(id, &v).unwrap();
        }
        let index = DenseIndex::from_cache(cache, "oracle").map_err(|e| e.to_string())?;
        let query: Vec<f32> = (0..dim).map(|_| value(&mut rng)).collect();
        let k = rng.random_range(1..=rows + 10);

        let mut brute: Vec<(f64, u64)> = index
            .matrix()
            .rows()
            .map(|(id, v)| {
                let mut s = 0.0f64;
                for (a, b) in v.iter().zip(&query) {
                    s += f64::from(*a) * f64::from(*b);
                }
                (s, id)
            })
            .collect();
        brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        brute.truncate(k);
        ties += brute.windows(2).filter(|w| w[0].0 == w[1].0).count();

        let got = retrieve(&index, &query, k).map_err(|e| e.to_string())?;
        ensure!(got.len() == brute.len(), "instance {instance}: {} results, expected {}", got.len(), brute.len());
        for (r, (c, &(s, id))) in got.iter().zip(&brute).enumerate() {
            ensure!(c.id == id && c.score == s, "instance {instance} rank {r}: got ({}, {}), expected ({id}, {s})", c.id, c.score);
        }
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(5), "took {t:?}");
    ensure!(ties > 0, "no ties were exercised");
    Ok(format!("50 instances, {ties} tied neighbours, {:.2}s", t.as_secs_f64()))
}

// 2 -------------------------------------------------------------------------

const H: f64 = 1e-5;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn random_seq(rng: &mut ChaCha8Rng, words: &[String]) -> TokenSequence {
    let n = rng.random_range(1..=6);
    TokenSequence::from_tokens((0..n).map(|_| words.choose(rng).unwrap().clone()).collect())
}

/// Checks every touched embedding entry and every projection entry of one
/// tower against central differences of `loss`.
fn check_tower(
    grad: &TowerGrad,
    tower: impl Fn(&mut dyn FnMut(&mut Tower)),
    loss: &dyn Fn() -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = |index: usize, embedding: bool, analytic: f64| {
        let mut vals = [0.0; 2];
        for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
            tower(&mut |t: &mut Tower| {
                let p = if embedding { &mut t.embeddings_mut()[index] } else { &mut t.projection_mut()[index] };
                *p += sign * H;
            });
            vals[slot] = loss();
            tower(&mut |t: &mut Tower| {
                let p = if embedding { &mut t.embeddings_mut()[index] } else { &mut t.projection_mut()[index] };
                *p -= sign * H;
            });
        }
        worst = worst.max(rel_err(analytic, (vals[0] - vals[1]) / (2.0 * H)));
    };
    for (&row, g) in &grad.embeddings {
        let d = g.len();
        for (j, &a) in g.iter().enumerate() {
            probe(row * d + j, true, a);
        }
    }
    for (i, &a) in grad.projection.iter().enumerate() {
        probe(i, false, a);
    }
    worst
}

fn gradient_check() -> Outcome {
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    let mut worst_bi = 0.0f64;
    let mut worst_rr = 0.0f64;
    for config in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + config);
        let init = [0.1, 0.5, 1.0][config as usize % 3];

        let ms: Vec<TokenSequence> = (0..4).map(|_| random_seq(&mut rng, &words)).collect();
        let ts: Vec<TokenSequence> = (0..4).map(|_| random_seq(&mut rng, &words)).collect();
        let params = std::cell::RefCell::new(ToyEncoderParams::random(50, 8, init, config));
        let batch: Vec<_> = ms.iter().zip(&ts).collect();
        let (_, grads) = biencoder_loss(&batch, &params.borrow()).map_err(|e| e.to_string())?;
        let loss = || biencoder_loss(&batch, &params.borrow()).unwrap().0;
        worst_bi = worst_bi.max(check_tower(&grads.mention, |f| f(&mut params.borrow_mut().mention), &loss));
        worst_bi = worst_bi.max(check_tower(&grads.title, |f| f(&mut params.borrow_mut().title), &loss));

        let examples: Vec<(Vec<TokenSequence>, usize)> = (0..4)
            .map(|_| {
                let n = rng.random_range(2..=5);
                ((0..n).map(|_| random_seq(&mut rng, &words)).collect(), rng.random_range(0..n))
            })
            .collect();
        let ranker = std::cell::RefCell::new(RankerParams::random(50, 8, init, config));
        let (_, rg) = reranker_loss(&examples, &ranker.borrow()).map_err(|e| e.to_string())?;
        let rloss = || reranker_loss(&examples, &ranker.borrow()).unwrap().0;
        worst_rr = worst_rr.max(check_tower(&rg.tower, |f| f(&mut ranker.borrow_mut().tower), &rloss));
        for (i, &a) in rg.w.iter().enumerate() {
            ranker.borrow_mut().w[i] += H;
            let up = rloss();
            ranker.borrow_mut().w[i] -= 2.0 * H;
            let down = rloss();
            ranker.borrow_mut().w[i] += H;
            worst_rr = worst_rr.max(rel_err(a, (up - down) / (2.0 * H)));
        }
    }
    ensure!(worst_bi < 1e-4, "bi-encoder max relative error {worst_bi:.3e}");
    ensure!(worst_rr < 1e-4, "reranker max relative error {worst_rr:.3e}");
    Ok(format!("6 configs each, max rel err {worst_bi:.1e} / {worst_rr:.1e}"))
}

// 3, 4 ----------------------------------------------------------------------

const TASK_SEED: u64 = 42;

fn synthetic_learning() -> Outcome {
    let start = Instant::now();
    let task = entity_overlap_task(20, 5, TASK_SEED);
    ensure!(task.kb.len() == 20 && task.mentions.len() == 100, "task shape {} / {}", task.kb.len(), task.mentions.len());
    let train = task.train();
    let repr = ReprConfig::default();
    let enc = train_biencoder(&train, &task.kb, &repr, &small_encoder_config(TASK_SEED)).map_err(|e| e.to_string())?;
    let provider = VectorProvider::Toy { params: &enc.params, kb: &task.kb, repr: repr.clone() };
    let index = build_index(&task.kb, &provider, "toy").map_err(|e| e.to_string())?;
    let rcfg = small_reranker_config(TASK_SEED);
    let sets = retrieve_mentions(&index, &enc.params, &task.mentions, &repr, rcfg.candidates_per_mention).map_err(|e| e.to_string())?;
    let r1 = recall_at_k(&sets, &task.mentions, 1).combined;
    let r10 = recall_at_k(&sets, &task.mentions, 10).combined;

    let ranker = train_reranker(&train, &sets, &task.kb, &repr, &rcfg).map_err(|e| e.to_string())?;
    let preds = sets
        .iter()
        .zip(&task.mentions)
        .map(|(s, m)| rank_and_decide(&ranker.params, m, s, &task.kb, &repr, 0.5))
        .collect::<evlink::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let acc = accuracy(&preds, &task.mentions, 1).combined;
    let t = start.elapsed();
    let detail = format!("recall@1 {r1}, recall@10 {r10}, reranker accuracy {acc}, {:.2}s", t.as_secs_f64());
    ensure!(r10.hits == r10.total, "{detail}");
    ensure!(r1.hits * 100 >= 95 * r1.total, "{detail}");
    ensure!(acc.hits * 100 >= 95 * acc.total, "{detail}");
    ensure!(t < Duration::from_secs(120), "{detail}");
    Ok(detail)
}

fn entity_ablation() -> Outcome {
    let task = entity_overlap_task(20, 5, TASK_SEED);
    let train = task.train();
    let repr = ReprConfig::default();
    let encoder = small_encoder_config(TASK_SEED);
    let reranker = small_reranker_config(TASK_SEED);
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
    let result = run_ablation(&inputs, &[AblationVariant::Full, AblationVariant::NoEntities]).map_err(|e| e.to_string())?;
    let full = result.row(AblationVariant::Full).unwrap().recall_at_1.combined;
    let bare = result.row(AblationVariant::NoEntities).unwrap().recall_at_1.combined;
    let detail = format!("full recall@1 {full}, no-entities recall@1 {bare}");
    ensure!(full.hits * bare.total >= bare.hits * full.total, "{detail}");
    Ok(detail)
}

// 5 -------------------------------------------------------------------------

fn oracle_jaccard(a: &str, b: &str) -> f64 {
    fn grams(s: &str) -> Vec<String> {
        let lower: Vec<char> = s.chars().flat_map(char::to_lowercase).collect();
        let mut out: Vec<String> = Vec::new();
        if lower.len() < 3 {
            out.push(lower.iter().collect());
        } else {
            for i in 0..=lower.len() - 3 {
                let g: String = lower[i..i + 3].iter().collect();
                if !out.contains(&g) {
                    out.push(g);
                }
            }
        }
        out
    }
    let (ga, gb) = (grams(a), grams(b));
    let inter = ga.iter().filter(|g| gb.contains(g)).count();
    let mut union = ga.clone();
    for g in gb {
        if !union.contains(&g) {
            union.push(g);
        }
    }
    inter as f64 / union.len() as f64
}

fn jaccard_and_splits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet: Vec<char> = "abcAB c".chars().collect();
    for i in 0..1000 {
        let mut s = || -> String {
            let n = rng.random_range(1..=10);
            (0..n).map(|_| *alphabet.choose(&mut rng).unwrap()).collect()
        };
        let (a, b) = (s(), s());
        let got = jaccard3(&a, &b).map_err(|e| e.to_string())?;
        ensure!(got == oracle_jaccard(&a, &b), "pair {i} ({a:?}, {b:?}): {got} vs {}", oracle_jaccard(&a, &b));
    }

    let cfg = SplitConfig::default();
    let pairs = [
        ("wartime 1940s", "World War II", SplitLabel::NominalHard),
        ("1994 World Cup qualifier", "1994 FIFA World Cup qualification", SplitLabel::NominalEasy),
    ];
    for (surface, title, want) in pairs {
        let expected = if oracle_jaccard(surface, title) < cfg.jaccard_threshold { SplitLabel::NominalHard } else { SplitLabel::NominalEasy };
        ensure!(expected == want, "oracle puts {surface:?} in {expected:?}");
        let m = EventMention::new(0, surface, (0, surface.chars().count()), PosClass::Nominal, Some(1)).unwrap();
        let got = classify_nominal(&m, title, &cfg).map_err(|e| e.to_string())?;
        ensure!(got == want, "{surface:?} classified {got:?}");
    }

    let mut checked = 0usize;
    for seed in 0..8u64 {
        let fx = wiki_fixture(120, seed);
        let (kb, _) = Kb::from_entries(fx.entries).map_err(|e| e.to_string())?;
        let cfg = SplitConfig { seed, ..SplitConfig::default() };
        let splits = build_splits(balance_pos(fx.mentions, seed).mentions, &kb, &cfg).map_err(|e| e.to_string())?;
        let train = splits.train.mentions();
        let train_titles: HashSet<u64> = train.iter().filter_map(|m| m.gold_id).collect();
        let train_verbs: HashSet<String> = train.iter().filter(|m| m.pos == PosClass::Verb).map(|m| surface_key(&m.surface)).collect();
        let mut unseen_titles = HashSet::new();
        for m in splits.dev.iter().chain(&splits.test) {
            let (PosClass::Verb, Some(g)) = (m.pos, m.gold_id) else { continue };
            let expected = match (train_titles.contains(&g), train_verbs.contains(&surface_key(&m.surface))) {
                (false, _) => SplitLabel::UnseenEvent,
                (true, true) => SplitLabel::SeenEvent,
                (true, false) => SplitLabel::UnseenForm,
            };
            ensure!(m.split_label == Some(expected), "seed {seed} mention {}: {:?} vs {expected:?}", m.mention_id, m.split_label);
            if expected == SplitLabel::UnseenEvent {
                unseen_titles.insert(g);
            }
            checked += 1;
        }
        let leaked: Vec<u64> = train.iter().filter_map(|m| m.gold_id).filter(|g| unseen_titles.contains(g)).collect();
        ensure!(leaked.is_empty(), "seed {seed}: unseen titles {leaked:?} in train");
        ensure!(!unseen_titles.is_empty(), "seed {seed}: no unseen titles generated");
    }
    Ok(format!("1000 pairs, Table 1 pairs Hard/Easy, {checked} verb mentions over 8 split seeds"))
}

// 6 -------------------------------------------------------------------------

fn listed(mention_id: u64, ids: &[u64], nil: bool) -> PredictionList {
    let n = ids.len().max(1) as f64;
    PredictionList {
        mention_id,
        ranked: ids
            .iter()
            .enumerate()
            .map(|(r, &id)| Prediction { id, score: -(r as f64), prob: 1.0 / n })
            .collect(),
        nil,
        nil_threshold: 0.5,
    }
}

fn labeled(id: u64, pos: PosClass, label: SplitLabel, gold: Option<u64>) -> EventMention {
    let mut m = EventMention::new(id, "it happened", (3, 11), pos, gold).unwrap();
    m.split_label = Some(label);
    m
}

fn metric_fixture() -> Outcome {
    use PosClass::{Nominal, Verb};
    use SplitLabel::*;
    let gold = vec![
        labeled(1, Verb, SeenEvent, Some(1)),
        labeled(2, Verb, SeenEvent, Some(2)),
        labeled(3, Verb, SeenEvent, Some(3)),
        labeled(4, Verb, UnseenEvent, Some(4)),
        labeled(5, Verb, UnseenEvent, Some(5)),
        labeled(6, Verb, Nil, None),
        labeled(7, Nominal, NominalHard, Some(6)),
        labeled(8, Nominal, NominalHard, Some(7)),
        labeled(9, Nominal, NominalEasy, Some(8)),
        labeled(10, Nominal, NominalEasy, Some(9)),
        labeled(11, Nominal, Nil, None),
        labeled(12, Nominal, NominalEasy, Some(10)),
    ];
    let preds = vec![
        listed(1, &[1, 2, 3], false),
        listed(2, &[1, 2, 3], false),
        listed(3, &[4, 5, 6, 7, 8, 3], false),
        listed(4, &[4, 1], true),
        listed(5, &[], true),
        listed(6, &[1, 2], true),
        listed(7, &[6, 7], false),
        listed(8, &[6, 1, 2, 3, 7], false),
        listed(9, &[8], false),
        listed(10, &[2, 9], false),
        listed(11, &[3], false),
        listed(12, &[10, 2], true),
    ];
    ensure!(preds.len() == 12, "fixture size");

    let slice = |r: &evlink::eval::EvalReport, pos, label| r.slice(pos, Some(label)).map(|s| s.to_string()).unwrap_or_default();
    let check = |name: &str, r: &evlink::eval::EvalReport, want: &[(PosClass, SplitLabel, &str)], verb: &str, nominal: &str, total: &str| -> Result<(), String> {
        for &(pos, label, v) in want {
            ensure!(slice(r, pos, label) == v, "{name} {pos:?}/{label:?}: {} vs {v}", slice(r, pos, label));
        }
        ensure!(r.verb.to_string() == verb, "{name} verb {} vs {verb}", r.verb);
        ensure!(r.nominal.to_string() == nominal, "{name} nominal {} vs {nominal}", r.nominal);
        ensure!(r.combined.to_string() == total, "{name} total {} vs {total}", r.combined);
        Ok(())
    };
    let r1 = recall_at_k(&preds, &gold, 1);
    check("R@1", &r1, &[(Verb, SeenEvent, "33.33"), (Verb, UnseenEvent, "50.00"), (Nominal, NominalHard, "50.00"), (Nominal, NominalEasy, "66.67")], "40.00", "60.00", "50.00")?;
    let r5 = recall_at_k(&preds, &gold, 5);
    check("R@5", &r5, &[(Verb, SeenEvent, "66.67"), (Verb, UnseenEvent, "50.00"), (Nominal, NominalHard, "100.00"), (Nominal, NominalEasy, "100.00")], "60.00", "100.00", "80.00")?;
    let r10 = recall_at_k(&preds, &gold, 10);
    check("R@10", &r10, &[(Verb, SeenEvent, "100.00")], "80.00", "100.00", "90.00")?;
    ensure!(r1.excluded_nil == 2, "excluded Nil {}", r1.excluded_nil);

    let a1 = accuracy(&preds, &gold, 1);
    let a5 = accuracy(&preds, &gold, 5);
    ensure!(a1.accu1.unwrap().to_string() == "50.00" && a1.accu5.unwrap().to_string() == "80.00", "Accu@1/5 {:?}", (a1.accu1, a1.accu5));
    for (x, y) in a1.slices.iter().zip(&a5.slices) {
        ensure!(y.score.hits >= x.score.hits, "Accu@5 < Accu@1 on {:?}", x.label);
    }
    ensure!(a5.combined.hits >= a1.combined.hits && a5.verb.hits >= a1.verb.hits && a5.nominal.hits >= a1.nominal.hits, "Accu@5 < Accu@1");

    let nil = accuracy_with_nil(&preds, &gold, 0.5);
    check(
        "Nil",
        &nil,
        &[(Verb, SeenEvent, "33.33"), (Verb, UnseenEvent, "0.00"), (Verb, Nil, "100.00"), (Nominal, NominalHard, "50.00"), (Nominal, NominalEasy, "33.33"), (Nominal, Nil, "0.00")],
        "33.33",
        "33.33",
        "33.33",
    )?;

    let mut prev = 0;
    for k in 1..=12 {
        let h = recall_at_k(&preds, &gold, k).combined.hits;
        ensure!(h >= prev, "recall dropped at K={k}");
        prev = h;
    }
    Ok("recall@1/5/10, Accu@1/5 and Nil accuracy match hand values".into())
}

// 7 -------------------------------------------------------------------------

fn nil_rule() -> Outcome {
    ensure!(is_nil(0.4999, 0.5), "0.4999 not Nil");
    ensure!(!is_nil(0.5, 0.5), "0.5 is Nil");
    // softmax weights 4999 : 2500.5 : 2500.5 put 0.4999 on top; two equal
    // scores put exactly 0.5 there
    let cands = |w: &[f64]| w.iter().enumerate().map(|(i, x)| Candidate { id: i as u64, score: x.ln() }).collect::<Vec<_>>();
    let below = PredictionList::from_scores(1, cands(&[4999.0, 2500.5, 2500.5]), 0.5);
    let at = PredictionList::from_scores(2, cands(&[3.0, 3.0]), 0.5);
    let top_below = below.top().unwrap().prob;
    let top_at = at.top().unwrap().prob;
    ensure!((top_below - 0.4999).abs() < 1e-12 && below.nil, "top {top_below}, nil {}", below.nil);
    ensure!(top_at == 0.5 && !at.nil, "top {top_at}, nil {}", at.nil);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let many: Vec<PredictionList> = (0..200)
        .map(|i| {
            let n = rng.random_range(1..=40);
            let scored = (0..n).map(|j| Candidate { id: j, score: rng.random_range(-3.0..3.0) }).collect();
            PredictionList::from_scores(i, scored, 0.9)
        })
        .collect();
    ensure!(many.iter().any(|p| p.nil), "fixture never produced Nil at 0.9");
    let off = with_threshold(&many, 0.0);
    ensure!(off.iter().all(|p| !p.nil), "threshold 0 produced Nil");
    Ok("0.4999 Nil, 0.5 linked, threshold 0 never Nil over 200 lists".into())
}

// 8 -------------------------------------------------------------------------

const BM25_DOCS: [&str; 5] = [
    "the battle of hastings was fought in 1066",
    "the siege of paris lasted for months",
    "hastings is a town on the coast",
    "the battle of the somme battle lines",
    "a festival in paris in spring",
];

fn oracle_bm25(query: &[&str]) -> Vec<f64> {
    let (k1, b) = (1.2, 0.75);
    let docs: Vec<Vec<&str>> = BM25_DOCS.iter().map(|d| d.split(' ').collect()).collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<&str> = Vec::new();
    for q in query {
        if !terms.contains(q) {
            terms.push(q);
        }
    }
    docs.iter()
        .map(|d| {
            let mut s = 0.0;
            for t in &terms {
                let df = docs.iter().filter(|x| x.contains(t)).count() as f64;
                let tf = d.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
            }
            s
        })
        .collect()
}

fn baseline_oracles() -> Outcome {
    let bm = Bm25::from_documents(BM25_DOCS.iter().enumerate().map(|(i, d)| (i as u64, d.to_string())), Bm25Params::default())
        .map_err(|e| e.to_string())?;
    let queries: [&[&str]; 4] = [&["battle", "hastings"], &["paris"], &["the", "battle", "battle"], &["zebra"]];
    for q in queries {
        let want = oracle_bm25(q);
        let terms: Vec<String> = q.iter().map(|s| s.to_string()).collect();
        let got: BTreeMap<u64, f64> = bm.score_terms(&terms).into_iter().map(|c| (c.id, c.score)).collect();
        for (i, w) in want.iter().enumerate() {
            let g = got.get(&(i as u64)).copied().unwrap_or(0.0);
            ensure!((g - w).abs() < 1e-6, "query {q:?} doc {i}: {g} vs {w}");
        }
    }
    // frozen value of the hand formula for "battle hastings" on the first document
    let frozen = 1.654_259_945;
    ensure!((oracle_bm25(&["battle", "hastings"])[0] - frozen).abs() < 1e-6, "oracle drifted: {}", oracle_bm25(&["battle", "hastings"])[0]);

    // per surface: how many training mentions; golds are drawn at random
    // except for a planted tie on "the war"
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let plan: [(&str, usize); 5] = [("attacked", 60), ("the war", 12), ("voted", 9), ("signed", 10), ("the riot", 3)];
    let mut train = Vec::new();
    for (surface, n) in plan {
        for j in 0..n {
            let gold = if surface == "the war" { [7, 4][j % 2] } else { rng.random_range(1..=4u64) };
            let id = train.len() as u64;
            let text = if j % 3 == 0 { surface.to_uppercase() } else { surface.to_string() };
            train.push(EventMention::new(id, text, (0, surface.chars().count()), PosClass::Verb, Some(gold)).unwrap());
        }
    }
    let surfaces: Vec<&str> = plan.iter().map(|p| p.0).collect();

    let mut counts: BTreeMap<String, BTreeMap<u64, usize>> = BTreeMap::new();
    for m in &train {
        *counts.entry(m.surface.to_lowercase()).or_default().entry(m.gold_id.unwrap()).or_default() += 1;
    }
    let table = PriorTable::from_train(&TrainSplit::from_mentions(train.clone()), 10);
    let queries: Vec<EventMention> = surfaces
        .iter()
        .chain(&["unknown"])
        .enumerate()
        .map(|(i, s)| EventMention::new(1000 + i as u64, *s, (0, s.chars().count()), PosClass::Verb, Some(1)).unwrap())
        .collect();
    let (preds, excluded) = prior_predictions(&table, &queries);
    let mut covered = 0;
    for q in &queries {
        let c = counts.get(&q.surface.to_lowercase());
        let total: usize = c.map_or(0, |c| c.values().sum());
        let want = if total >= 10 {
            let c = c.unwrap();
            let best = c.values().max().unwrap();
            c.iter().find(|(_, n)| *n == best).map(|(id, _)| *id)
        } else {
            None
        };
        ensure!(table.predict(q) == want, "{:?}: {:?} vs {want:?}", q.surface, table.predict(q));
        ensure!(excluded.contains(&q.mention_id) == want.is_none(), "{:?} exclusion", q.surface);
        if want.is_some() {
            covered += 1;
            let p = preds.iter().find(|p| p.mention_id == q.mention_id).unwrap();
            ensure!(p.top().map(|t| t.id) == want, "{:?} prediction list", q.surface);
        }
    }
    ensure!(covered > 0 && covered < queries.len(), "cutoff not exercised ({covered} covered)");
    Ok(format!("4 BM25 queries within 1e-6, prior agrees on {} surfaces", queries.len()))
}

// 9 -------------------------------------------------------------------------

fn files_under(root: &Path, sub: &str) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(root.join(sub)).unwrap() {
        let p = entry.unwrap().path();
        out.insert(format!("{sub}/{}", p.file_name().unwrap().to_string_lossy()), std::fs::read(&p).unwrap());
    }
    out
}

fn determinism() -> Outcome {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/wiki200/run.conf");
    let base = RunConfig::load(&conf).map_err(|e| e.to_string())?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut snapshots = Vec::new();
    for d in &dirs {
        let cfg = RunConfig { out: d.path().to_path_buf(), ..base.clone() };
        run_pipeline(&cfg).map_err(|e| e.to_string())?;
        let mut files = files_under(d.path(), "predictions");
        files.extend(files_under(d.path(), "reports"));
        snapshots.push(files);
    }
    ensure!(snapshots[0].len() >= 10, "only {} artifacts", snapshots[0].len());
    ensure!(snapshots[0].keys().eq(snapshots[1].keys()), "artifact sets differ");
    for (name, bytes) in &snapshots[0] {
        ensure!(&snapshots[1][name] == bytes, "{name} differs between runs");
    }

    // vector cache: odd values survive bit for bit
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cache = VectorCache::new(7);
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE / 3.0, f32::MAX, -1.5e-30, 1.0 / 3.0, 123_456.79];
    cache.push(0, &specials).unwrap();
    for id in 1..300 {
        let v: Vec<f32> = (0..7).map(|_| rng.random_range(-1e6f32..1e6)).collect();
        cache.push(id * 11, &v).unwrap();
    }
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("v.evc");
    cache.save(&path).map_err(|e| e.to_string())?;
    let back = VectorCache::load(&path).map_err(|e| e.to_string())?;
    let bits = |c: &VectorCache| c.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure!(back.ids() == cache.ids() && bits(&back) == bits(&cache), "vector cache changed on reload");
    ensure!(back.to_bytes() == std::fs::read(&path).unwrap(), "re-encoding differs from file");

    // the pipeline's own index
    let index_path = dirs[0].path().join("index/titles.evc");
    let index = DenseIndex::load(&index_path).map_err(|e| e.to_string())?;
    let again = tmp.path().join("titles.evc");
    index.save(&again).map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&again).unwrap() == std::fs::read(&index_path).unwrap(), "index bytes differ after reload");
    ensure!(
        std::fs::read(DenseIndex::sidecar_path(&again)).unwrap() == std::fs::read(DenseIndex::sidecar_path(&index_path)).unwrap(),
        "index sidecar differs after reload"
    );
    let q = vec![0.25f32; index.dim()];
    let hits = retrieve(&index, &q, 3).map_err(|e| e.to_string())?;
    ensure!(hits.iter().all(|c| c.score == dot_f32(index.matrix().row(index.ids().binary_search(&c.id).unwrap()), &q)), "reloaded scores");
    Ok(format!("{} artifacts identical across runs, cache and index bit-exact", snapshots[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("retrieval matches brute force", retrieval_oracle),
        ("analytic gradients match finite differences", gradient_check),
        ("synthetic task is learned", synthetic_learning),
        ("entity ablation ordering", entity_ablation),
        ("jaccard oracle and split partition", jaccard_and_splits),
        ("metric fixtures", metric_fixture),
        ("nil rule", nil_rule),
        ("bm25 and prior oracles", baseline_oracles),
        ("determinism and persistence", determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if filter.as_ref().is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
