//! Reference systems: the most frequent title per surface, BM25 over title
//! pages, and static word-vector cosine.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{surface_key, TrainSplit};
use crate::error::{Error, IoContext, Result};
use crate::kb::{EventMention, Kb};
use crate::repr::{context_window, description, ReprConfig};
use crate::rerank::PredictionList;
use crate::retrieval::{rank_order, Candidate, CandidateSet, TopK};

/// Lowercased alphanumeric runs.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Baseline candidate lists as prediction records. Probabilities are score
/// shares and no mention is Nil.
pub fn to_predictions(sets: &[CandidateSet]) -> Vec<PredictionList> {
    sets.iter()
        .map(|s| PredictionList::from_score_shares(s.mention_id, s.candidates.clone(), 0.0))
        .collect()
}

pub const DEFAULT_MIN_COUNT: usize = 10;

/// Title counts per mention surface, from training links only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTable {
    counts: BTreeMap<String, BTreeMap<u64, usize>>,
    pub min_count: usize,
}

impl PriorTable {
    pub fn from_train(train: &TrainSplit, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, BTreeMap<u64, usize>> = BTreeMap::new();
        for m in train.mentions() {
            if let Some(gold) = m.gold_id {
                *counts.entry(surface_key(&m.surface)).or_default().entry(gold).or_default() += 1;
            }
        }
        Self { counts, min_count }
    }

    pub fn counts(&self, surface: &str) -> Option<&BTreeMap<u64, usize>> {
        self.counts.get(&surface_key(surface))
    }

    pub fn total(&self, surface: &str) -> usize {
        self.counts(surface).map_or(0, |c| c.values().sum())
    }

    pub fn covers(&self, surface: &str) -> bool {
        self.total(surface) >= self.min_count
    }

    /// Most frequent title for a covered surface, lower id on ties.
    pub fn predict(&self, mention: &EventMention) -> Option<u64> {
        self.ranked(mention).first().map(|c| c.id)
    }

    /// All titles seen with a covered surface, by descending count.
    pub fn ranked(&self, mention: &EventMention) -> Vec<Candidate> {
        if !self.covers(&mention.surface) {
            return Vec::new();
        }
        let mut out: Vec<Candidate> = self.counts(&mention.surface).into_iter().flatten()
            .map(|(&id, &n)| Candidate { id, score: n as f64 })
            .collect();
        out.sort_by(rank_order);
        out
    }
}

/// Prior predictions for covered mentions, plus the uncovered mention ids.
pub fn prior_predictions(table: &PriorTable, mentions: &[EventMention]) -> (Vec<PredictionList>, Vec<u64>) {
    let mut preds = Vec::new();
    let mut excluded = Vec::new();
    for m in mentions {
        let ranked = table.ranked(m);
        if ranked.is_empty() {
            excluded.push(m.mention_id);
        } else {
            preds.push(PredictionList::from_score_shares(m.mention_id, ranked, 0.0));
        }
    }
    (preds, excluded)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    /// Characters of page body indexed after the title.
    pub description_chars: usize,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            description_chars: 2000,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config("BM25 needs k1 > 0 and 0 <= b <= 1".into()));
        }
        Ok(())
    }
}

/// Inverted index over title + description text.
#[derive(Debug, Clone)]
pub struct Bm25 {
    params: Bm25Params,
    ids: Vec<u64>,
    doc_len: Vec<usize>,
    avgdl: f64,
    /// term -> (document index, term frequency), by document index.
    postings: HashMap<String, Vec<(usize, usize)>>,
}

impl Bm25 {
    pub fn build(kb: &Kb, params: Bm25Params) -> Result<Self> {
        let docs = kb
            .iter()
            .map(|e| (e.id, format!("{} {}", e.title, description(&e.body, params.description_chars))));
        Self::from_documents(docs, params)
    }

    pub fn from_documents(docs: impl IntoIterator<Item = (u64, String)>, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        let mut ids = Vec::new();
        let mut doc_len = Vec::new();
        let mut postings: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (i, (id, text)) in docs.into_iter().enumerate() {
            let terms = words(&text);
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for t in &terms {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((i, n));
            }
            ids.push(id);
            doc_len.push(terms.len());
        }
        let total: usize = doc_len.iter().sum();
        let avgdl = if ids.is_empty() { 0.0 } else { total as f64 / ids.len() as f64 };
        Ok(Self {
            params,
            ids,
            doc_len,
            avgdl,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.postings.get(term).map_or(0, Vec::len) as f64;
        let total = self.ids.len() as f64;
        ((total - n + 0.5) / (n + 0.5) + 1.0).ln()
    }

    /// Every document with a nonzero score for the distinct query terms.
    pub fn score_terms(&self, terms: &[String]) -> Vec<Candidate> {
        let distinct: BTreeSet<&str> = terms.iter().map(String::as_str).collect();
        let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
        let Bm25Params { k1, b, .. } = self.params;
        for t in distinct {
            let Some(post) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(doc, tf) in post {
                let tf = tf as f64;
                let norm = 1.0 - b + b * self.doc_len[doc] as f64 / self.avgdl;
                *scores.entry(doc).or_default() += idf * tf * (k1 + 1.0) / (tf + k1 * norm);
            }
        }
        scores
            .into_iter()
            .map(|(doc, score)| Candidate { id: self.ids[doc], score })
            .collect()
    }

    pub fn retrieve_terms(&self, terms: &[String], k: usize) -> Vec<Candidate> {
        let mut top = TopK::new(k);
        for c in self.score_terms(terms) {
            top.push(c);
        }
        top.into_sorted()
    }
}

/// Query terms: the mention surface plus its context window.
pub fn bm25_query(mention: &EventMention, repr: &ReprConfig) -> Vec<String> {
    let w = context_window(&mention.doc_text, mention.span, repr);
    let mut terms = words(&mention.surface);
    terms.extend(words(&w.left));
    terms.extend(words(&w.right));
    terms
}

pub fn bm25_retrieve(index: &Bm25, mention: &EventMention, repr: &ReprConfig, k: usize) -> CandidateSet {
    CandidateSet {
        mention_id: mention.mention_id,
        candidates: index.retrieve_terms(&bm25_query(mention, repr), k),
    }
}

/// Word vectors read from a "word v1 .. vd" text file.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticVectors {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl StaticVectors {
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut table = HashMap::new();
        for (w, v) in pairs {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            table.insert(w.to_lowercase(), v);
        }
        Ok(Self { dim, table })
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut dim = None;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let v = parts
                .map(|x| x.parse::<f64>().map_err(|e| err(format!("bad component {x:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if v.is_empty() {
                return Err(err(format!("no components for {word:?}")));
            }
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => return Err(err(format!("expected {d} components, found {}", v.len()))),
                _ => {}
            }
            pairs.push((word.to_string(), v));
        }
        Self::from_pairs(dim.unwrap_or(0), pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.table.get(word).map(Vec::as_slice)
    }

    /// Mean of the in-vocabulary word vectors; `None` when every word is
    /// out of vocabulary.
    pub fn embed(&self, text: &str) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for w in words(text) {
            if let Some(v) = self.get(&w) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                n += 1;
            }
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    }
}

/// Cosine similarity, 0 when either side is missing or zero.
pub fn cosine(a: Option<&[f64]>, b: Option<&[f64]>) -> f64 {
    let (Some(a), Some(b)) = (a, b) else { return 0.0 };
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Title embeddings computed once for repeated cosine queries.
#[derive(Debug, Clone)]
pub struct CosineBaseline<'a> {
    vectors: &'a StaticVectors,
    titles: Vec<(u64, Option<Vec<f64>>)>,
}

impl<'a> CosineBaseline<'a> {
    pub fn new(vectors: &'a StaticVectors, kb: &Kb) -> Self {
        let titles = kb.iter().map(|e| (e.id, vectors.embed(&e.title))).collect();
        Self { vectors, titles }
    }

    /// Ranks every title by cosine with the mention surface.
    pub fn predict(&self, mention: &EventMention, k: usize) -> CandidateSet {
        let m = self.vectors.embed(&mention.surface);
        let mut top = TopK::new(k);
        for (id, t) in &self.titles {
            top.push(Candidate {
                id: *id,
                score: cosine(m.as_deref(), t.as_deref()),
            });
        }
        CandidateSet {
            mention_id: mention.mention_id,
            candidates: top.into_sorted(),
        }
    }
}

pub fn vector_cosine_predict(vectors: &StaticVectors, mention: &EventMention, kb: &Kb, k: usize) -> CandidateSet {
    CosineBaseline::new(vectors, kb).predict(mention, k)
}
