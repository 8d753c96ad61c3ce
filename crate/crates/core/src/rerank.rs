//! Joint mention–title scoring over retrieved candidates, and the Nil
//! decision.
//!
//! A single tower reads the concatenated mention and title sequence and the
//! score is `w · tanh(projection · mean(embedding[token]))`. The tanh is
//! what lets the score depend on mention and title tokens together; without
//! it the bag-of-tokens tower would be additive and every mention would
//! rank titles identically.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainSplit;
use crate::encoder::{batches, softmax, Bag, Tower, TowerGrad};
use crate::error::{Error, IoContext, Result};
use crate::kb::{EventMention, Kb};
use crate::repr::{build_mention_repr, build_title_repr, joint_repr, ReprConfig, TokenSequence};
use crate::retrieval::{rank_order, Candidate, CandidateSet};
use crate::vecfile::{write_atomic, Checkpoint, VectorCache};

pub const DEFAULT_NIL_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    pub tower: Tower,
    /// The scoring vector.
    pub w: Vec<f64>,
}

impl RankerParams {
    pub fn random(vocab_size: usize, dim: usize, init_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0c05_5e7c);
        let tower = Tower::random(vocab_size, dim, init_scale, &mut rng);
        let w = (0..dim).map(|_| init_scale * rng.sample::<f64, _>(StandardNormal)).collect();
        Self { tower, w }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn hidden(&self, pooled: &[f64]) -> Vec<f64> {
        self.tower.project(pooled).into_iter().map(f64::tanh).collect()
    }

    pub fn score_bag(&self, bag: &Bag) -> f64 {
        let h = self.hidden(&self.tower.pool(bag));
        self.w.iter().zip(&h).map(|(w, h)| w * h).sum()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut w = VectorCache::new(self.dim());
        w.push(0, &self.w.iter().map(|&x| x as f32).collect::<Vec<_>>())
            .expect("scorer has tower dim");
        Checkpoint {
            sections: vec![("joint".into(), self.tower.to_cache()), ("scorer".into(), w)],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let tower = Tower::from_cache(ck.section("joint")?)?;
        let scorer = ck.section("scorer")?;
        if scorer.len() != 1 || scorer.dim() != tower.dim() {
            return Err(Error::Format("scorer section must hold one row of tower dim".into()));
        }
        Ok(Self {
            tower,
            w: scorer.row(0).iter().map(|&x| f64::from(x)).collect(),
        })
    }
}

pub fn score(params: &RankerParams, joint: &TokenSequence) -> f64 {
    params.score_bag(&params.tower.bag(joint))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankerGrads {
    pub tower: TowerGrad,
    pub w: Vec<f64>,
}

/// One training mention: a bag per candidate and the gold position.
#[derive(Debug, Clone)]
pub struct RerankExample {
    pub candidates: Vec<Bag>,
    pub gold: usize,
}

/// Mean softmax cross-entropy over each example's candidate scores.
pub fn reranker_loss_bags(examples: &[&RerankExample], params: &RankerParams) -> Result<(f64, RankerGrads)> {
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let dim = params.dim();
    let n = examples.len() as f64;
    let mut grads = RankerGrads {
        tower: TowerGrad::new(dim),
        w: vec![0.0; dim],
    };
    let mut loss = 0.0;
    for ex in examples {
        let pooled: Vec<Vec<f64>> = ex.candidates.iter().map(|b| params.tower.pool(b)).collect();
        let hidden: Vec<Vec<f64>> = pooled.iter().map(|a| params.hidden(a)).collect();
        let scores: Vec<f64> = hidden
            .iter()
            .map(|h| params.w.iter().zip(h).map(|(w, h)| w * h).sum())
            .collect();
        let probs = softmax(&scores);
        loss -= probs[ex.gold].ln();
        for (c, h) in hidden.iter().enumerate() {
            let g = (probs[c] - if c == ex.gold { 1.0 } else { 0.0 }) / n;
            for (gw, hv) in grads.w.iter_mut().zip(h) {
                *gw += g * hv;
            }
            let dz: Vec<f64> = params.w.iter().zip(h).map(|(w, h)| g * w * (1.0 - h * h)).collect();
            grads.tower.accumulate(&params.tower, &ex.candidates[c], &pooled[c], &dz);
        }
    }
    Ok((loss / n, grads))
}

/// Sequence-level form of [`reranker_loss_bags`]: each item is the joint
/// sequences of one mention's candidates and the index of the gold one.
pub fn reranker_loss(examples: &[(Vec<TokenSequence>, usize)], params: &RankerParams) -> Result<(f64, RankerGrads)> {
    let owned: Vec<RerankExample> = examples
        .iter()
        .map(|(seqs, gold)| RerankExample {
            candidates: seqs.iter().map(|s| params.tower.bag(s)).collect(),
            gold: *gold,
        })
        .collect();
    reranker_loss_bags(&owned.iter().collect::<Vec<_>>(), params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankTrainConfig {
    pub candidates_per_mention: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Default for RerankTrainConfig {
    fn default() -> Self {
        Self {
            candidates_per_mention: 30,
            batch_size: 32,
            epochs: 10,
            learning_rate: 0.05,
            seed: 0,
            init_scale: 0.01,
            vocab_size: 65536,
            dim: 64,
        }
    }
}

impl RerankTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates_per_mention < 2 {
            return Err(Error::Config("candidates_per_mention must be at least 2".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.vocab_size == 0 || self.dim == 0 {
            return Err(Error::Config("reranker sizes must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return Err(Error::Config("learning_rate must be non-negative and init_scale positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedReranker {
    pub params: RankerParams,
    pub epoch_losses: Vec<f64>,
    /// Training mentions dropped because retrieval missed their gold title.
    pub skipped: usize,
}

/// Title sequences built once per id.
struct TitleSeqs<'a> {
    kb: &'a Kb,
    repr: &'a ReprConfig,
    cache: HashMap<u64, TokenSequence>,
}

impl<'a> TitleSeqs<'a> {
    fn new(kb: &'a Kb, repr: &'a ReprConfig) -> Self {
        Self {
            kb,
            repr,
            cache: HashMap::new(),
        }
    }

    fn get(&mut self, id: u64) -> Result<&TokenSequence> {
        if !self.cache.contains_key(&id) {
            let entry = self.kb.get(id).ok_or(Error::MissingId(id))?;
            self.cache.insert(id, build_title_repr(entry, self.repr));
        }
        Ok(&self.cache[&id])
    }
}

/// Trains on each linked training mention's top candidates, with its gold
/// title as the softmax target.
pub fn train_reranker(
    train: &TrainSplit,
    candidates: &[CandidateSet],
    kb: &Kb,
    repr: &ReprConfig,
    cfg: &RerankTrainConfig,
) -> Result<TrainedReranker> {
    cfg.validate()?;
    let mut params = RankerParams::random(cfg.vocab_size, cfg.dim, cfg.init_scale, cfg.seed);
    let by_id: HashMap<u64, &CandidateSet> = candidates.iter().map(|c| (c.mention_id, c)).collect();
    let mut titles = TitleSeqs::new(kb, repr);
    let mut examples = Vec::new();
    let mut skipped = 0;
    for m in train.mentions() {
        let Some(gold_id) = m.gold_id else { continue };
        let Some(set) = by_id.get(&m.mention_id) else {
            skipped += 1;
            continue;
        };
        let top: Vec<u64> = set.ids().take(cfg.candidates_per_mention).collect();
        let Some(gold) = top.iter().position(|&id| id == gold_id) else {
            skipped += 1;
            continue;
        };
        if top.len() < 2 {
            skipped += 1;
            continue;
        }
        let mseq = build_mention_repr(m, &m.entities, repr);
        let mut bags = Vec::with_capacity(top.len());
        for id in top {
            let joint = joint_repr(&mseq, titles.get(id)?, repr.max_len);
            bags.push(params.tower.bag(&joint));
        }
        examples.push(RerankExample { candidates: bags, gold });
    }
    if skipped > 0 {
        log::warn!("reranker: skipped {skipped} training mentions without their gold among candidates");
    }
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let exs: Vec<&RerankExample> = batch.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = reranker_loss_bags(&exs, &params)?;
            total += loss * batch.len() as f64;
            grads.tower.apply(&mut params.tower, cfg.learning_rate);
            for (w, g) in params.w.iter_mut().zip(&grads.w) {
                *w -= cfg.learning_rate * g;
            }
        }
        let mean = total / examples.len() as f64;
        log::debug!("reranker epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainedReranker {
        params,
        epoch_losses,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: u64,
    pub score: f64,
    pub prob: f64,
}

/// Ranked candidates of one mention with probabilities and the Nil flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionList {
    pub mention_id: u64,
    #[serde(rename = "candidates")]
    pub ranked: Vec<Prediction>,
    pub nil: bool,
    #[serde(skip)]
    pub nil_threshold: f64,
}

impl PredictionList {
    fn ranked_by_score(mut scored: Vec<Candidate>) -> Vec<Candidate> {
        scored.sort_by(rank_order);
        scored
    }

    /// Softmax over the candidate scores; Nil when the top probability is
    /// strictly below `nil_threshold`.
    pub fn from_scores(mention_id: u64, scored: Vec<Candidate>, nil_threshold: f64) -> Self {
        let scored = Self::ranked_by_score(scored);
        let scores: Vec<f64> = scored.iter().map(|c| c.score).collect();
        let probs = if scores.is_empty() { Vec::new() } else { softmax(&scores) };
        Self::assemble(mention_id, &scored, probs, nil_threshold)
    }

    /// Probabilities as each candidate's share of the total non-negative
    /// score (uniform when every score is zero). Used by the baselines.
    pub fn from_score_shares(mention_id: u64, scored: Vec<Candidate>, nil_threshold: f64) -> Self {
        let scored = Self::ranked_by_score(scored);
        let total: f64 = scored.iter().map(|c| c.score.max(0.0)).sum();
        let n = scored.len() as f64;
        let probs = scored
            .iter()
            .map(|c| if total > 0.0 { c.score.max(0.0) / total } else { 1.0 / n })
            .collect();
        Self::assemble(mention_id, &scored, probs, nil_threshold)
    }

    fn assemble(mention_id: u64, scored: &[Candidate], probs: Vec<f64>, nil_threshold: f64) -> Self {
        let ranked: Vec<Prediction> = scored
            .iter()
            .zip(probs)
            .map(|(c, prob)| Prediction {
                id: c.id,
                score: c.score,
                prob,
            })
            .collect();
        let top = ranked.first().map_or(0.0, |p| p.prob);
        Self {
            mention_id,
            nil: is_nil(top, nil_threshold),
            ranked,
            nil_threshold,
        }
    }

    pub fn top(&self) -> Option<&Prediction> {
        self.ranked.first()
    }

    /// 0-based rank of `id`, if present.
    pub fn rank_of(&self, id: u64) -> Option<usize> {
        self.ranked.iter().position(|p| p.id == id)
    }
}

/// Nil iff the top probability falls strictly below the threshold.
pub fn is_nil(top_prob: f64, threshold: f64) -> bool {
    top_prob < threshold
}

/// Scores every candidate jointly with the mention and applies the Nil
/// rule.
pub fn rank_and_decide(
    params: &RankerParams,
    mention: &EventMention,
    candidates: &CandidateSet,
    kb: &Kb,
    repr: &ReprConfig,
    nil_threshold: f64,
) -> Result<PredictionList> {
    let mseq = build_mention_repr(mention, &mention.entities, repr);
    let mut scored = Vec::with_capacity(candidates.candidates.len());
    for c in &candidates.candidates {
        let entry = kb.get(c.id).ok_or(Error::MissingId(c.id))?;
        let joint = joint_repr(&mseq, &build_title_repr(entry, repr), repr.max_len);
        scored.push(Candidate {
            id: c.id,
            score: score(params, &joint),
        });
    }
    Ok(PredictionList::from_scores(mention.mention_id, scored, nil_threshold))
}

pub fn write_predictions(path: &Path, preds: &[PredictionList]) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionList>> {
    let text = std::fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
