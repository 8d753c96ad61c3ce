//! Two-tower bag-of-embeddings encoder trained with in-batch negatives.
//!
//! Each tower maps a token sequence to `projection · mean(embedding[token])`
//! where tokens are hashed into a fixed vocabulary. Gradients are derived
//! by hand and exact, so they can be checked against finite differences.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainSplit;
use crate::error::{Error, Result};
use crate::kb::Kb;
use crate::repr::{build_mention_repr, build_title_repr, ReprConfig, TokenSequence};
use crate::text::hash_str;
use crate::vecfile::{Checkpoint, VectorCache};

pub fn token_row(token: &str, vocab_size: usize) -> usize {
    (hash_str(token) % vocab_size as u64) as usize
}

/// Sorted `(row, weight)` pairs whose weights sum to one: the mean-pooling
/// coefficients of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag(Vec<(usize, f64)>);

impl Bag {
    pub fn new(tokens: &[String], vocab_size: usize) -> Self {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(token_row(t, vocab_size)).or_default() += 1;
        }
        let n = tokens.len().max(1) as f64;
        Self(counts.into_iter().map(|(r, c)| (r, c as f64 / n)).collect())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.0
    }

    /// Stable fingerprint, used to spot repeated titles within a batch.
    fn fingerprint(&self) -> u64 {
        self.0.iter().fold(0xcbf2_9ce4_8422_2325, |h, &(r, w)| {
            crate::text::mix64(h ^ (r as u64).wrapping_mul(31) ^ w.to_bits())
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    vocab_size: usize,
    dim: usize,
    /// `vocab_size × dim`, row-major.
    embeddings: Vec<f64>,
    /// `dim × dim`, row-major (output index major).
    projection: Vec<f64>,
}

impl Tower {
    /// Embeddings drawn from N(0, init_scale^2); the projection starts at
    /// the identity plus N(0, init_scale^2) noise.
    pub fn random(vocab_size: usize, dim: usize, init_scale: f64, rng: &mut impl Rng) -> Self {
        let embeddings = (0..vocab_size * dim)
            .map(|_| init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let projection = (0..dim * dim)
            .map(|k| {
                let eye = if k / dim == k % dim { 1.0 } else { 0.0 };
                eye + init_scale * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        Self {
            vocab_size,
            dim,
            embeddings,
            projection,
        }
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Self {
            vocab_size,
            dim,
            embeddings: vec![0.0; vocab_size * dim],
            projection: vec![0.0; dim * dim],
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embeddings(&self) -> &[f64] {
        &self.embeddings
    }

    pub fn embeddings_mut(&mut self) -> &mut [f64] {
        &mut self.embeddings
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    pub fn embedding(&self, row: usize) -> &[f64] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    pub fn bag(&self, seq: &TokenSequence) -> Bag {
        Bag::new(seq.tokens(), self.vocab_size)
    }

    pub fn pool(&self, bag: &Bag) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for &(row, w) in bag.entries() {
            for (m, e) in mean.iter_mut().zip(self.embedding(row)) {
                *m += w * e;
            }
        }
        mean
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.projection
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(x).map(|(p, v)| p * v).sum())
            .collect()
    }

    pub fn encode_bag(&self, bag: &Bag) -> Vec<f64> {
        self.project(&self.pool(bag))
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<f64> {
        self.encode_bag(&self.bag(seq))
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.iter().chain(&self.projection).all(|x| x.is_finite())
    }

    pub fn to_cache(&self) -> VectorCache {
        let mut c = VectorCache::with_capacity(self.dim, self.vocab_size + self.dim);
        let mut row = vec![0f32; self.dim];
        for (i, chunk) in self.embeddings.chunks_exact(self.dim).chain(self.projection.chunks_exact(self.dim)).enumerate() {
            for (dst, src) in row.iter_mut().zip(chunk) {
                *dst = *src as f32;
            }
            c.push(i as u64, &row).expect("row has tower dim");
        }
        c
    }

    pub fn from_cache(cache: &VectorCache) -> Result<Self> {
        let dim = cache.dim();
        let vocab_size = cache
            .len()
            .checked_sub(dim)
            .filter(|v| *v > 0)
            .ok_or_else(|| Error::Format("tower section too small".into()))?;
        if cache.ids().iter().enumerate().any(|(i, id)| *id != i as u64) {
            return Err(Error::Format("tower rows must be numbered consecutively".into()));
        }
        let all: Vec<f64> = cache.as_slice().iter().map(|&x| f64::from(x)).collect();
        let (embeddings, projection) = all.split_at(vocab_size * dim);
        Ok(Self {
            vocab_size,
            dim,
            embeddings: embeddings.to_vec(),
            projection: projection.to_vec(),
        })
    }
}

/// Gradient of a tower: dense for the projection, sparse over touched
/// embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerGrad {
    dim: usize,
    pub embeddings: BTreeMap<usize, Vec<f64>>,
    pub projection: Vec<f64>,
}

impl TowerGrad {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            embeddings: BTreeMap::new(),
            projection: vec![0.0; dim * dim],
        }
    }

    /// Backpropagates `d loss / d output` through `projection · pooled`.
    pub fn accumulate(&mut self, tower: &Tower, bag: &Bag, pooled: &[f64], out_grad: &[f64]) {
        let d = self.dim;
        for (i, g) in out_grad.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            for (p, a) in self.projection[i * d..(i + 1) * d].iter_mut().zip(pooled) {
                *p += g * a;
            }
        }
        // d loss / d pooled = projection^T · out_grad
        let mut pooled_grad = vec![0.0; d];
        for (row, g) in tower.projection.chunks_exact(d).zip(out_grad) {
            for (pg, p) in pooled_grad.iter_mut().zip(row) {
                *pg += g * p;
            }
        }
        for &(row, w) in bag.entries() {
            let e = self.embeddings.entry(row).or_insert_with(|| vec![0.0; d]);
            for (eg, pg) in e.iter_mut().zip(&pooled_grad) {
                *eg += w * pg;
            }
        }
    }

    pub fn embedding(&self, row: usize) -> Option<&[f64]> {
        self.embeddings.get(&row).map(Vec::as_slice)
    }

    /// Plain gradient-descent step.
    pub fn apply(&self, tower: &mut Tower, learning_rate: f64) {
        let d = self.dim;
        for (p, g) in tower.projection.iter_mut().zip(&self.projection) {
            *p -= learning_rate * g;
        }
        for (&row, g) in &self.embeddings {
            for (e, g) in tower.embeddings[row * d..(row + 1) * d].iter_mut().zip(g) {
                *e -= learning_rate * g;
            }
        }
    }
}

/// Independent mention and title towers.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoderParams {
    pub mention: Tower,
    pub title: Tower,
}

pub const MENTION_SECTION: &str = "mention";
pub const TITLE_SECTION: &str = "title";

impl ToyEncoderParams {
    pub fn random(vocab_size: usize, dim: usize, init_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mention = Tower::random(vocab_size, dim, init_scale, &mut rng);
        let title = Tower::random(vocab_size, dim, init_scale, &mut rng);
        Self { mention, title }
    }

    pub fn dim(&self) -> usize {
        self.mention.dim
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            sections: vec![
                (MENTION_SECTION.into(), self.mention.to_cache()),
                (TITLE_SECTION.into(), self.title.to_cache()),
            ],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mention = Tower::from_cache(ck.section(MENTION_SECTION)?)?;
        let title = Tower::from_cache(ck.section(TITLE_SECTION)?)?;
        if mention.dim != title.dim {
            return Err(Error::DimensionMismatch {
                expected: mention.dim,
                found: title.dim,
            });
        }
        Ok(Self { mention, title })
    }
}

pub fn encode(tower: &Tower, seq: &TokenSequence) -> Vec<f64> {
    tower.encode(seq)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiGrads {
    pub mention: TowerGrad,
    pub title: TowerGrad,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-batch softmax loss over precomputed bags. Column `j` of row `i` is
/// skipped when title `j` is the same title as `i`'s gold (it is not a
/// negative).
pub fn biencoder_loss_bags(mention_bags: &[&Bag], title_bags: &[&Bag], params: &ToyEncoderParams) -> Result<(f64, BiGrads)> {
    let b = mention_bags.len();
    if b < 2 || title_bags.len() != b {
        return Err(Error::BatchTooSmall(b.min(title_bags.len())));
    }
    let pooled_m: Vec<Vec<f64>> = mention_bags.iter().map(|bag| params.mention.pool(bag)).collect();
    let pooled_t: Vec<Vec<f64>> = title_bags.iter().map(|bag| params.title.pool(bag)).collect();
    let vm: Vec<Vec<f64>> = pooled_m.iter().map(|a| params.mention.project(a)).collect();
    let vt: Vec<Vec<f64>> = pooled_t.iter().map(|a| params.title.project(a)).collect();
    let keys: Vec<u64> = title_bags.iter().map(|bag| bag.fingerprint()).collect();

    let dim = params.dim();
    let mut grad_vm = vec![vec![0.0; dim]; b];
    let mut grad_vt = vec![vec![0.0; dim]; b];
    let mut loss = 0.0;
    for i in 0..b {
        let cols: Vec<usize> = (0..b).filter(|&j| j == i || keys[j] != keys[i]).collect();
        let logits: Vec<f64> = cols.iter().map(|&j| dot(&vm[i], &vt[j])).collect();
        let probs = softmax(&logits);
        let gold = cols.iter().position(|&j| j == i).expect("diagonal is always kept");
        loss -= probs[gold].ln();
        for (k, &j) in cols.iter().enumerate() {
            let g = (probs[k] - if k == gold { 1.0 } else { 0.0 }) / b as f64;
            for d in 0..dim {
                grad_vm[i][d] += g * vt[j][d];
                grad_vt[j][d] += g * vm[i][d];
            }
        }
    }
    let mut grads = BiGrads {
        mention: TowerGrad::new(dim),
        title: TowerGrad::new(dim),
    };
    for i in 0..b {
        grads.mention.accumulate(&params.mention, mention_bags[i], &pooled_m[i], &grad_vm[i]);
        grads.title.accumulate(&params.title, title_bags[i], &pooled_t[i], &grad_vt[i]);
    }
    Ok((loss / b as f64, grads))
}

/// Mean over the batch of `-log softmax` of each mention's gold title
/// among the batch's gold titles, with exact gradients for both towers.
pub fn biencoder_loss(batch: &[(&TokenSequence, &TokenSequence)], params: &ToyEncoderParams) -> Result<(f64, BiGrads)> {
    let mb: Vec<Bag> = batch.iter().map(|(m, _)| params.mention.bag(m)).collect();
    let tb: Vec<Bag> = batch.iter().map(|(_, t)| params.title.bag(t)).collect();
    biencoder_loss_bags(&mb.iter().collect::<Vec<_>>(), &tb.iter().collect::<Vec<_>>(), params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
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

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 || self.epochs == 0 || self.vocab_size == 0 || self.dim == 0 {
            return Err(Error::Config(
                "batch_size must be at least 2; epochs, vocab_size and dim positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return Err(Error::Config("learning_rate must be non-negative and init_scale positive".into()));
        }
        Ok(())
    }
}

/// Splits shuffled indices into batches of at most `batch_size`; a trailing
/// singleton joins the previous batch so every batch has a negative.
pub(crate) fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainedBiencoder {
    pub params: ToyEncoderParams,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch gradient descent over the linked training mentions. Nil
/// mentions are skipped.
pub fn train_biencoder(train: &TrainSplit, kb: &Kb, repr: &ReprConfig, cfg: &TrainConfig) -> Result<TrainedBiencoder> {
    cfg.validate()?;
    let params = ToyEncoderParams::random(cfg.vocab_size, cfg.dim, cfg.init_scale, cfg.seed);
    train_biencoder_from(params, train, kb, repr, cfg)
}

/// Same as [`train_biencoder`], starting from given parameters.
pub fn train_biencoder_from(
    mut params: ToyEncoderParams,
    train: &TrainSplit,
    kb: &Kb,
    repr: &ReprConfig,
    cfg: &TrainConfig,
) -> Result<TrainedBiencoder> {
    let linked: Vec<_> = train
        .mentions()
        .iter()
        .filter_map(|m| Some((m, kb.get(m.gold_id?)?)))
        .collect();
    if linked.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if linked.len() < 2 {
        return Err(Error::BatchTooSmall(linked.len()));
    }
    let vocab = params.mention.vocab_size;
    let mention_bags: Vec<Bag> = linked
        .iter()
        .map(|(m, _)| Bag::new(build_mention_repr(m, &m.entities, repr).tokens(), vocab))
        .collect();
    let mut title_cache: HashMap<u64, Bag> = HashMap::new();
    for (_, e) in &linked {
        title_cache
            .entry(e.id)
            .or_insert_with(|| Bag::new(build_title_repr(e, repr).tokens(), params.title.vocab_size));
    }
    let title_bags: Vec<&Bag> = linked.iter().map(|(_, e)| &title_cache[&e.id]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..linked.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&order, cfg.batch_size) {
            let mb: Vec<&Bag> = batch.iter().map(|&i| &mention_bags[i]).collect();
            let tb: Vec<&Bag> = batch.iter().map(|&i| title_bags[i]).collect();
            let (loss, grads) = biencoder_loss_bags(&mb, &tb, &params)?;
            total += loss * batch.len() as f64;
            grads.mention.apply(&mut params.mention, cfg.learning_rate);
            grads.title.apply(&mut params.title, cfg.learning_rate);
        }
        let mean = total / linked.len() as f64;
        log::debug!("bi-encoder epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(TrainedBiencoder { params, epoch_losses })
}

pub fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

/// Id-keyed precomputed vectors, e.g. the outputs of an external encoder.
#[derive(Debug, Clone)]
pub struct PrecomputedVectors {
    cache: VectorCache,
    index: HashMap<u64, usize>,
}

impl PrecomputedVectors {
    pub fn new(cache: VectorCache) -> Self {
        let index = cache.ids().iter().enumerate().map(|(i, &id)| (id, i)).collect();
        Self { cache, index }
    }

    pub fn get(&self, id: u64) -> Result<&[f32]> {
        self.index.get(&id).map(|&i| self.cache.row(i)).ok_or(Error::MissingId(id))
    }

    pub fn dim(&self) -> usize {
        self.cache.dim()
    }

    pub fn cache(&self) -> &VectorCache {
        &self.cache
    }
}

/// Where title (or mention) vectors come from.
#[derive(Debug, Clone)]
pub enum VectorProvider<'a> {
    /// Encode KB titles with the toy title tower on demand.
    Toy {
        params: &'a ToyEncoderParams,
        kb: &'a Kb,
        repr: ReprConfig,
    },
    Precomputed(PrecomputedVectors),
}

impl VectorProvider<'_> {
    pub fn dim(&self) -> usize {
        match self {
            VectorProvider::Toy { params, .. } => params.dim(),
            VectorProvider::Precomputed(p) => p.dim(),
        }
    }

    pub fn vector(&self, id: u64) -> Result<Vec<f32>> {
        match self {
            VectorProvider::Toy { params, kb, repr } => {
                let entry = kb.get(id).ok_or(Error::MissingId(id))?;
                Ok(to_f32(&params.title.encode(&build_title_repr(entry, repr))))
            }
            VectorProvider::Precomputed(p) => p.get(id).map(<[f32]>::to_vec),
        }
    }
}

/// Loads a vector-cache file as a provider.
pub fn load_vectors(path: &std::path::Path) -> Result<VectorProvider<'static>> {
    Ok(VectorProvider::Precomputed(PrecomputedVectors::new(VectorCache::load(path)?)))
}
