//! Cached title vectors and exact top-K dot-product search.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{to_f32, ToyEncoderParams, VectorProvider};
use crate::error::{Error, IoContext, Result};
use crate::kb::{EventMention, Kb};
use crate::repr::{build_mention_repr, ReprConfig};
use crate::vecfile::{write_atomic, VectorCache};

/// Candidate-count grid searched on dev data.
pub const K_GRID: [usize; 6] = [5, 10, 30, 50, 70, 100];
pub const DEFAULT_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u64,
    pub score: f64,
}

/// Descending score, then ascending id.
pub fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub mention_id: u64,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.candidates.iter().map(|c| c.id)
    }

    /// 0-based rank of `id`, if present.
    pub fn rank_of(&self, id: u64) -> Option<usize> {
        self.candidates.iter().position(|c| c.id == id)
    }
}

/// Heap entry ordered so the worst candidate sits on top.
struct Worst(Candidate);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// Bounded selection of the `k` best candidates.
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    pub fn push(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(Worst(c));
        } else if let Some(worst) = self.heap.peek() {
            if rank_order(&c, &worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Worst(c));
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        let mut v: Vec<Candidate> = self.heap.into_iter().map(|w| w.0).collect();
        v.sort_by(rank_order);
        v
    }
}

pub fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IdManifest {
    provenance: String,
    ids: Vec<u64>,
}

/// Title vectors in ascending KB-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    matrix: VectorCache,
    provenance: String,
}

impl DenseIndex {
    pub fn from_cache(matrix: VectorCache, provenance: impl Into<String>) -> Result<Self> {
        if let Some(id) = crate::vecfile::first_nonfinite(&matrix) {
            return Err(Error::Format(format!("non-finite vector for id {id}")));
        }
        Ok(Self {
            matrix,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.matrix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn ids(&self) -> &[u64] {
        self.matrix.ids()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn matrix(&self) -> &VectorCache {
        &self.matrix
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".ids.json");
        PathBuf::from(p)
    }

    /// Writes the vector cache and its id-order manifest.
    pub fn save(&self, path: &Path) -> Result<()> {
        self.matrix.save(path)?;
        let manifest = IdManifest {
            provenance: self.provenance.clone(),
            ids: self.ids().to_vec(),
        };
        write_atomic(&Self::sidecar_path(path), (serde_json::to_string(&manifest)? + "\n").as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let matrix = VectorCache::load(path)?;
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).io_context(|| format!("reading {}", side.display()))?;
        let manifest: IdManifest = serde_json::from_str(&text)?;
        if manifest.ids != matrix.ids() {
            return Err(Error::Format(format!("{} disagrees with the index row order", side.display())));
        }
        Self::from_cache(matrix, manifest.provenance)
    }
}

/// One row per KB entry, ascending id.
pub fn build_index(kb: &Kb, provider: &VectorProvider<'_>, provenance: &str) -> Result<DenseIndex> {
    let dim = provider.dim();
    let mut matrix = VectorCache::with_capacity(dim, kb.len());
    for id in kb.ids() {
        let v = provider.vector(id)?;
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        matrix.push(id, &v)?;
    }
    DenseIndex::from_cache(matrix, provenance)
}

/// Exact top-`k` titles by dot product with `query`.
pub fn retrieve(index: &DenseIndex, query: &[f32], k: usize) -> Result<Vec<Candidate>> {
    let mut sets = retrieve_batch(index, &[(0, query)], k)?;
    Ok(sets.pop().map(|s| s.candidates).unwrap_or_default())
}

/// Top-`k` for many queries in a single pass over the matrix.
pub fn retrieve_batch(index: &DenseIndex, queries: &[(u64, &[f32])], k: usize) -> Result<Vec<CandidateSet>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    for (_, q) in queries {
        if q.len() != index.dim() {
            return Err(Error::DimensionMismatch {
                expected: index.dim(),
                found: q.len(),
            });
        }
    }
    let mut tops: Vec<TopK> = queries.iter().map(|_| TopK::new(k)).collect();
    for (id, row) in index.matrix.rows() {
        for ((_, q), top) in queries.iter().zip(tops.iter_mut()) {
            top.push(Candidate {
                id,
                score: dot_f32(q, row),
            });
        }
    }
    Ok(queries
        .iter()
        .zip(tops)
        .map(|((mention_id, _), top)| CandidateSet {
            mention_id: *mention_id,
            candidates: top.into_sorted(),
        })
        .collect())
}

/// Encodes each mention with the mention tower and retrieves its top-`k`.
pub fn retrieve_mentions(
    index: &DenseIndex,
    params: &ToyEncoderParams,
    mentions: &[EventMention],
    repr: &ReprConfig,
    k: usize,
) -> Result<Vec<CandidateSet>> {
    let vectors: Vec<(u64, Vec<f32>)> = mentions
        .iter()
        .map(|m| (m.mention_id, to_f32(&params.mention.encode(&build_mention_repr(m, &m.entities, repr)))))
        .collect();
    let queries: Vec<(u64, &[f32])> = vectors.iter().map(|(id, v)| (*id, v.as_slice())).collect();
    retrieve_batch(index, &queries, k)
}

/// Smallest K in `grid` with the highest dev recall@K, counting only
/// linked mentions. Falls back to [`DEFAULT_K`] without dev data.
pub fn select_k(candidates: &[CandidateSet], dev: &[EventMention], grid: &[usize]) -> usize {
    let by_id: HashMap<u64, &CandidateSet> = candidates.iter().map(|c| (c.mention_id, c)).collect();
    let ranks: Vec<Option<usize>> = dev
        .iter()
        .filter_map(|m| m.gold_id.map(|g| by_id.get(&m.mention_id).and_then(|c| c.rank_of(g))))
        .collect();
    if ranks.is_empty() || grid.is_empty() {
        log::warn!("no dev data for choosing K; using {DEFAULT_K}");
        return DEFAULT_K;
    }
    let mut sorted = grid.to_vec();
    sorted.sort_unstable();
    let mut best = (0usize, sorted[0]);
    for &k in &sorted {
        let hits = ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count();
        if hits > best.0 {
            best = (hits, k);
        }
    }
    best.1
}

pub fn write_candidates(path: &Path, sets: &[CandidateSet]) -> Result<()> {
    let mut out = String::new();
    for s in sets {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateSet>> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::PosClass;

    fn index(rows: &[(u64, [f32; 2])]) -> DenseIndex {
        let mut c = VectorCache::new(2);
        for (id, v) in rows {
            c.push(*id, v).unwrap();
        }
        DenseIndex::from_cache(c, "test").unwrap()
    }

    #[test]
    fn hand_arithmetic() {
        let idx = index(&[(1, [1.0, 0.0]), (2, [0.0, 1.0]), (3, [0.5, 0.5])]);
        let got = retrieve(&idx, &[1.0, 0.0], 3).unwrap();
        let ids: Vec<_> = got.iter().map(|c| c.id).collect();
        let scores: Vec<_> = got.iter().map(|c| c.score).collect();
        assert_eq!(ids, vec![1, 3, 2]);
        assert_eq!(scores, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn ties_prefer_lower_id_and_k_is_capped() {
        let idx = index(&[(9, [1.0, 1.0]), (4, [1.0, 1.0]), (6, [0.0, 0.0])]);
        let got = retrieve(&idx, &[1.0, 2.0], 10).unwrap();
        assert_eq!(got.iter().map(|c| c.id).collect::<Vec<_>>(), vec![4, 9, 6]);
        assert_eq!(retrieve(&idx, &[1.0, 2.0], 1).unwrap()[0].id, 4);
    }

    #[test]
    fn dimension_mismatch() {
        let idx = index(&[(1, [1.0, 0.0])]);
        assert!(matches!(
            retrieve(&idx, &[1.0, 0.0, 0.0], 1),
            Err(Error::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    fn dev(golds: &[u64]) -> Vec<EventMention> {
        golds
            .iter()
            .enumerate()
            .map(|(i, &g)| EventMention::new(i as u64, "x", (0, 1), PosClass::Verb, Some(g)).unwrap())
            .collect()
    }

    fn ranked(mention_id: u64, gold_rank: usize) -> CandidateSet {
        CandidateSet {
            mention_id,
            candidates: (0..120)
                .map(|r| Candidate {
                    id: if r == gold_rank { 1000 } else { r as u64 },
                    score: -(r as f64),
                })
                .collect(),
        }
    }

    #[test]
    fn k_selection() {
        // gold at rank 40 and 3: recall equal for 50/70/100, lower below
        let ms = dev(&[1000, 1000]);
        let sets = vec![ranked(0, 40), ranked(1, 3)];
        assert_eq!(select_k(&sets, &ms, &K_GRID), 50);
        // strictly increasing recall up to 100
        let ms = dev(&[1000; 6]);
        let sets: Vec<_> = [3, 8, 20, 45, 65, 95].iter().enumerate().map(|(i, &r)| ranked(i as u64, r)).collect();
        assert_eq!(select_k(&sets, &ms, &K_GRID), 100);
        assert_eq!(select_k(&[], &[], &K_GRID), 100);
    }

    #[test]
    fn index_persistence() {
        let idx = index(&[(2, [0.25, -1.5]), (5, [3.0, 0.0])]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("titles.vec");
        idx.save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = DenseIndex::load(&p).unwrap();
        assert_eq!(back, idx);
        back.save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }
}
