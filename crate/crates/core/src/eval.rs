//! Recall@K, accuracy and Nil-aware accuracy with per-category slices, and
//! the representation ablation harness.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::TrainSplit;
use crate::encoder::{train_biencoder, TrainConfig, VectorProvider};
use crate::error::{Error, Result};
use crate::kb::{EventMention, Kb, PosClass, SplitLabel};
use crate::repr::ReprConfig;
use crate::rerank::{rank_and_decide, train_reranker, PredictionList, RerankTrainConfig};
use crate::retrieval::{build_index, retrieve_mentions, CandidateSet};

/// Anything that ranks titles for one mention.
pub trait Ranked {
    fn mention_id(&self) -> u64;
    /// 0-based rank of `id`, if ranked at all.
    fn rank_of(&self, id: u64) -> Option<usize>;
    fn is_nil(&self) -> bool {
        false
    }
}

impl Ranked for CandidateSet {
    fn mention_id(&self) -> u64 {
        self.mention_id
    }

    fn rank_of(&self, id: u64) -> Option<usize> {
        CandidateSet::rank_of(self, id)
    }
}

impl Ranked for PredictionList {
    fn mention_id(&self) -> u64 {
        self.mention_id
    }

    fn rank_of(&self, id: u64) -> Option<usize> {
        PredictionList::rank_of(self, id)
    }

    fn is_nil(&self) -> bool {
        self.nil
    }
}

/// Hits out of a total, reported as a percentage with two decimals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Score {
    pub hits: usize,
    pub total: usize,
}

impl Score {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += usize::from(hit);
    }

    fn merge(&mut self, other: Score) {
        self.hits += other.hits;
        self.total += other.total;
    }

    /// Percentage in hundredths, rounded half up.
    pub fn hundredths(&self) -> Option<u64> {
        if self.total == 0 {
            return None;
        }
        let (h, t) = (self.hits as u128, self.total as u128);
        Some(((h * 20000 + t) / (2 * t)) as u64)
    }

    pub fn percent(&self) -> Option<f64> {
        self.hundredths().map(|h| h as f64 / 100.0)
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hundredths() {
            Some(h) => f.pad(&format!("{}.{:02}", h / 100, h % 100)),
            None => f.pad("-"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    RecallAtK { k: usize },
    Accuracy { at: usize },
    AccuracyWithNil { threshold: f64 },
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::RecallAtK { k } => write!(f, "Recall@{k}"),
            EvalMode::Accuracy { at } => write!(f, "Accu@{at}"),
            EvalMode::AccuracyWithNil { threshold } => write!(f, "Accuracy with Nil (threshold {threshold})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceScore {
    pub pos: PosClass,
    pub label: Option<SplitLabel>,
    #[serde(flatten)]
    pub score: Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub slices: Vec<SliceScore>,
    pub verb: Score,
    pub nominal: Score,
    pub combined: Score,
    /// Top-1 and top-5 accuracy over the same mentions (accuracy modes).
    pub accu1: Option<Score>,
    pub accu5: Option<Score>,
    /// Nil-gold mentions left out because the mode has no Nil outcome.
    pub excluded_nil: usize,
    /// Evaluated mentions without a prediction, counted as misses.
    pub missing: usize,
}

struct Tally {
    slices: BTreeMap<(PosClass, Option<SplitLabel>), Score>,
    accu1: Score,
    accu5: Score,
    excluded_nil: usize,
    missing: usize,
}

fn tally<P: Ranked>(
    preds: &[P],
    gold: &[EventMention],
    include_nil: bool,
    mut hit: impl FnMut(&EventMention, Option<&P>) -> bool,
) -> Tally {
    let by_id: HashMap<u64, &P> = preds.iter().map(|p| (p.mention_id(), p)).collect();
    let mut t = Tally {
        slices: BTreeMap::new(),
        accu1: Score::default(),
        accu5: Score::default(),
        excluded_nil: 0,
        missing: 0,
    };
    for m in gold {
        if m.is_nil() && !include_nil {
            t.excluded_nil += 1;
            continue;
        }
        let p = by_id.get(&m.mention_id).copied();
        if p.is_none() {
            t.missing += 1;
        }
        let top = |n: usize| match (m.gold_id, p) {
            (Some(g), Some(p)) => p.rank_of(g).is_some_and(|r| r < n),
            _ => false,
        };
        t.accu1.add(top(1));
        t.accu5.add(top(5));
        t.slices.entry((m.pos, m.split_label)).or_default().add(hit(m, p));
    }
    if t.missing > 0 {
        log::warn!("{} evaluated mentions have no prediction; counted as misses", t.missing);
    }
    t
}

fn report(mode: EvalMode, t: Tally, with_accuracy: bool) -> EvalReport {
    let mut verb = Score::default();
    let mut nominal = Score::default();
    let slices: Vec<SliceScore> = t
        .slices
        .into_iter()
        .map(|((pos, label), score)| {
            match pos {
                PosClass::Verb => verb.merge(score),
                PosClass::Nominal => nominal.merge(score),
            }
            SliceScore { pos, label, score }
        })
        .collect();
    let mut combined = verb;
    combined.merge(nominal);
    EvalReport {
        mode,
        slices,
        verb,
        nominal,
        combined,
        accu1: with_accuracy.then_some(t.accu1),
        accu5: with_accuracy.then_some(t.accu5),
        excluded_nil: t.excluded_nil,
        missing: t.missing,
    }
}

/// Share of linkable mentions whose gold title is among the top `k`.
pub fn recall_at_k<P: Ranked>(preds: &[P], gold: &[EventMention], k: usize) -> EvalReport {
    let t = tally(preds, gold, false, |m, p| {
        matches!((m.gold_id, p), (Some(g), Some(p)) if p.rank_of(g).is_some_and(|r| r < k))
    });
    report(EvalMode::RecallAtK { k }, t, false)
}

/// Share of linkable mentions whose gold title is within the top `at`.
pub fn accuracy<P: Ranked>(preds: &[P], gold: &[EventMention], at: usize) -> EvalReport {
    let t = tally(preds, gold, false, |m, p| {
        matches!((m.gold_id, p), (Some(g), Some(p)) if p.rank_of(g).is_some_and(|r| r < at))
    });
    report(EvalMode::Accuracy { at }, t, true)
}

/// Every mention counts: Nil gold is correct iff flagged Nil, linkable
/// gold iff not flagged and ranked first. Nil flags come from the
/// predictions, which carry the threshold they were decided with.
pub fn accuracy_with_nil<P: Ranked>(preds: &[P], gold: &[EventMention], threshold: f64) -> EvalReport {
    let t = tally(preds, gold, true, |m, p| match (m.gold_id, p) {
        (None, Some(p)) => p.is_nil(),
        (Some(g), Some(p)) => !p.is_nil() && p.rank_of(g) == Some(0),
        (_, None) => false,
    });
    report(EvalMode::AccuracyWithNil { threshold }, t, true)
}

/// Re-applies the Nil rule at a new threshold.
pub fn with_threshold(preds: &[PredictionList], threshold: f64) -> Vec<PredictionList> {
    preds
        .iter()
        .map(|p| {
            let mut p = p.clone();
            p.nil = crate::rerank::is_nil(p.top().map_or(0.0, |t| t.prob), threshold);
            p.nil_threshold = threshold;
            p
        })
        .collect()
}

fn pos_name(pos: PosClass) -> &'static str {
    match pos {
        PosClass::Verb => "Verb",
        PosClass::Nominal => "Nominal",
    }
}

fn label_name(label: Option<SplitLabel>) -> &'static str {
    label.map_or("All", SplitLabel::display_name)
}

/// One row of a rendered table: group, row name, then one score per column.
type Row = (String, String, Vec<Option<Score>>);

fn table_rows(reports: &[&EvalReport]) -> Vec<Row> {
    let mut keys: Vec<(PosClass, Option<SplitLabel>)> = reports
        .iter()
        .flat_map(|r| r.slices.iter().map(|s| (s.pos, s.label)))
        .collect();
    keys.sort();
    keys.dedup();
    let cell = |r: &EvalReport, pos, label| r.slices.iter().find(|s| s.pos == pos && s.label == label).map(|s| s.score);
    let mut rows = Vec::new();
    for pos in [PosClass::Verb, PosClass::Nominal] {
        let mine: Vec<_> = keys.iter().filter(|(p, _)| *p == pos).collect();
        if mine.is_empty() {
            continue;
        }
        for (i, &&(_, label)) in mine.iter().enumerate() {
            let group = if i == 0 { pos_name(pos) } else { "" };
            rows.push((group.to_string(), label_name(label).to_string(), reports.iter().map(|r| cell(r, pos, label)).collect()));
        }
        let overall = |r: &EvalReport| Some(if pos == PosClass::Verb { r.verb } else { r.nominal });
        rows.push((String::new(), "Overall".into(), reports.iter().map(|r| overall(r)).collect()));
    }
    rows.push(("Total".into(), String::new(), reports.iter().map(|r| Some(r.combined)).collect()));
    if reports.iter().any(|r| r.accu1.is_some()) {
        rows.push(("Accu@1".into(), String::new(), reports.iter().map(|r| r.accu1).collect()));
        rows.push(("Accu@5".into(), String::new(), reports.iter().map(|r| r.accu5).collect()));
    }
    rows
}

fn render_table(headers: &[String], rows: &[Row], with_counts: bool) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}{:<14}", "", "");
    for h in headers {
        if with_counts {
            let _ = write!(out, "{:>8}", "Count");
        }
        let _ = write!(out, "{:>w$}", h, w = h.len().max(10) + 2);
    }
    out.push('\n');
    for (group, name, cells) in rows {
        let _ = write!(out, "{group:<10}{name:<14}");
        for (h, c) in headers.iter().zip(cells) {
            let w = h.len().max(10) + 2;
            if with_counts {
                let _ = write!(out, "{:>8}", c.map_or(String::new(), |s| s.total.to_string()));
            }
            match c {
                Some(s) => {
                    let _ = write!(out, "{:>w$}", s.to_string());
                }
                None => {
                    let _ = write!(out, "{:>w$}", "-");
                }
            }
        }
        out.push('\n');
    }
    out.trim_end().to_string() + "\n"
}

impl EvalReport {
    pub fn slice(&self, pos: PosClass, label: Option<SplitLabel>) -> Option<Score> {
        self.slices.iter().find(|s| s.pos == pos && s.label == label).map(|s| s.score)
    }

    /// Aligned text table with counts and percentages.
    pub fn render(&self) -> String {
        let mut out = render_table(&[self.mode.to_string()], &table_rows(&[self]), true);
        if self.excluded_nil > 0 || self.missing > 0 {
            let _ = writeln!(out, "Nil-gold excluded: {}; missing predictions: {}", self.excluded_nil, self.missing);
        }
        out
    }

    /// One machine-readable record per slice plus the aggregate rows.
    pub fn records(&self) -> Vec<serde_json::Value> {
        let rec = |pos: Option<&str>, label: &str, s: Score| {
            serde_json::json!({
                "metric": self.mode.to_string(),
                "pos": pos,
                "label": label,
                "count": s.total,
                "hits": s.hits,
                "value": s.percent(),
            })
        };
        let mut out: Vec<_> = self
            .slices
            .iter()
            .map(|s| rec(Some(pos_name(s.pos)), label_name(s.label), s.score))
            .collect();
        out.push(rec(Some("Verb"), "Overall", self.verb));
        out.push(rec(Some("Nominal"), "Overall", self.nominal));
        out.push(rec(None, "Total", self.combined));
        out
    }
}

/// Side-by-side table with one column per named report.
pub fn render_side_by_side(columns: &[(String, &EvalReport)]) -> String {
    let headers: Vec<String> = columns.iter().map(|(h, _)| h.clone()).collect();
    let reports: Vec<&EvalReport> = columns.iter().map(|(_, r)| *r).collect();
    render_table(&headers, &table_rows(&reports), false)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    Full,
    NoType,
    NoEntities,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 3] = [AblationVariant::Full, AblationVariant::NoType, AblationVariant::NoEntities];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoType => "no-type",
            AblationVariant::NoEntities => "no-entities",
        }
    }

    /// Row heading in the ablation table.
    pub fn heading(self) -> &'static str {
        match self {
            AblationVariant::Full => "Full",
            AblationVariant::NoType => "- type",
            AblationVariant::NoEntities => "- entities",
        }
    }

    pub fn apply(self, base: &ReprConfig) -> ReprConfig {
        let mut cfg = base.clone();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoType => cfg.include_entity_types = false,
            AblationVariant::NoEntities => cfg.include_entities = false,
        }
        cfg
    }
}

impl FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub variant: AblationVariant,
}

/// Data and settings shared by every ablation variant.
#[derive(Debug, Clone, Copy)]
pub struct AblationInputs<'a> {
    pub kb: &'a Kb,
    pub train: &'a TrainSplit,
    pub eval: &'a [EventMention],
    pub repr: &'a ReprConfig,
    pub encoder: &'a TrainConfig,
    pub reranker: &'a RerankTrainConfig,
    /// Candidates retrieved per evaluated mention.
    pub k: usize,
    pub nil_threshold: f64,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub recall_at_1: EvalReport,
    pub recall_at_k: EvalReport,
    pub accuracy: EvalReport,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
}

impl AblationResult {
    pub fn row(&self, v: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config.variant == v)
    }

    /// Variants as rows, headline metrics as columns.
    pub fn render(&self) -> String {
        let k = self.rows.first().map_or(0, |r| match r.recall_at_k.mode {
            EvalMode::RecallAtK { k } => k,
            _ => 0,
        });
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14}{:>10}{:>10}{:>10}{:>10}{:>10}",
            "",
            "R@1",
            format!("R@{k}"),
            "Verb",
            "Nominal",
            "Accuracy"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14}{:>10}{:>10}{:>10}{:>10}{:>10}",
                r.config.variant.heading(),
                r.recall_at_1.combined.to_string(),
                r.recall_at_k.combined.to_string(),
                r.accuracy.verb.to_string(),
                r.accuracy.nominal.to_string(),
                r.accuracy.combined.to_string()
            );
        }
        out
    }
}

/// Retrains the bi-encoder and reranker under each variant's
/// representation flags and evaluates on `inputs.eval`.
pub fn run_ablation(inputs: &AblationInputs<'_>, variants: &[AblationVariant]) -> Result<AblationResult> {
    let mut rows = Vec::new();
    for &variant in variants {
        let repr = variant.apply(inputs.repr);
        let stage = |e: Error| Error::Stage {
            stage: format!("ablate:{}", variant.name()),
            source: Box::new(e),
        };
        let enc = train_biencoder(inputs.train, inputs.kb, &repr, inputs.encoder).map_err(stage)?;
        let provider = VectorProvider::Toy {
            params: &enc.params,
            kb: inputs.kb,
            repr: repr.clone(),
        };
        let index = build_index(inputs.kb, &provider, variant.name()).map_err(stage)?;
        let train_k = inputs.reranker.candidates_per_mention.min(index.len());
        let train_sets =
            retrieve_mentions(&index, &enc.params, inputs.train.mentions(), &repr, train_k).map_err(stage)?;
        let ranker = train_reranker(inputs.train, &train_sets, inputs.kb, &repr, inputs.reranker).map_err(stage)?;
        let sets = retrieve_mentions(&index, &enc.params, inputs.eval, &repr, inputs.k.min(index.len())).map_err(stage)?;
        let by_id: HashMap<u64, &EventMention> = inputs.eval.iter().map(|m| (m.mention_id, m)).collect();
        let preds = sets
            .iter()
            .map(|s| rank_and_decide(&ranker.params, by_id[&s.mention_id], s, inputs.kb, &repr, inputs.nil_threshold))
            .collect::<Result<Vec<_>>>()
            .map_err(stage)?;
        rows.push(AblationRow {
            config: AblationConfig { variant },
            recall_at_1: recall_at_k(&sets, inputs.eval, 1),
            recall_at_k: recall_at_k(&sets, inputs.eval, inputs.k),
            accuracy: accuracy(&preds, inputs.eval, 1),
        });
    }
    Ok(AblationResult { rows })
}
