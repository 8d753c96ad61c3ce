//! Staged end-to-end runs: split, train, index, retrieve, rerank, baselines
//! and evaluation, with a digest manifest so unchanged stages are skipped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, Bm25, Bm25Params, CosineBaseline, PriorTable, StaticVectors};
use crate::dataset::{self, build_splits, extract_event_links, SplitConfig, SplitName, TrainSplit};
use crate::encoder::{self, ToyEncoderParams, TrainConfig, VectorProvider};
use crate::error::{Error, IoContext, Result};
use crate::eval::{self, render_side_by_side, EvalReport};
use crate::kb::{self, EventMention, Kb, SplitLabel};
use crate::repr::ReprConfig;
use crate::rerank::{self, RankerParams, RerankTrainConfig, DEFAULT_NIL_THRESHOLD};
use crate::retrieval::{self, build_index, retrieve_mentions, select_k, DenseIndex, K_GRID};
use crate::vecfile::{read_file, write_atomic, Checkpoint};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "EVLINK_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Split,
    TrainBiencoder,
    Index,
    Retrieve,
    TrainReranker,
    Rank,
    Baselines,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Split,
        Stage::TrainBiencoder,
        Stage::Index,
        Stage::Retrieve,
        Stage::TrainReranker,
        Stage::Rank,
        Stage::Baselines,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Split => "split",
            Stage::TrainBiencoder => "train_biencoder",
            Stage::Index => "index",
            Stage::Retrieve => "retrieve",
            Stage::TrainReranker => "train_reranker",
            Stage::Rank => "rank",
            Stage::Baselines => "baselines",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Paths, per-module settings and the global seed of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kb: Option<PathBuf>,
    /// Mention records; without them mentions are extracted from KB anchors.
    pub mentions: Option<PathBuf>,
    /// Word vectors for the cosine baseline, which is skipped without them.
    pub vectors: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub split: SplitConfig,
    pub repr: ReprConfig,
    pub encoder: TrainConfig,
    pub reranker: RerankTrainConfig,
    pub bm25: Bm25Params,
    /// Candidates kept per evaluated mention; chosen on dev when `None`.
    pub k: Option<usize>,
    pub nil_threshold: f64,
    pub eval_split: SplitName,
    pub stages: Vec<Stage>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kb: None,
            mentions: None,
            vectors: None,
            out: PathBuf::from("out"),
            seed: 0,
            split: SplitConfig::default(),
            repr: ReprConfig::default(),
            encoder: TrainConfig::default(),
            reranker: RerankTrainConfig::default(),
            bm25: Bm25Params::default(),
            k: None,
            nil_threshold: DEFAULT_NIL_THRESHOLD,
            eval_split: SplitName::Test,
            stages: Stage::ALL.to_vec(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    /// Every recognised key, in the order `to_text` writes them.
    pub const KEYS: &'static [&'static str] = &[
        "kb",
        "mentions",
        "vectors",
        "out",
        "seed",
        "k",
        "nil_threshold",
        "eval_split",
        "stages",
        "split.jaccard_threshold",
        "split.unseen_max_verb_mentions",
        "split.event_tag",
        "split.min_prior_count",
        "split.train_pct",
        "split.dev_pct",
        "repr.window_chars",
        "repr.max_anchors",
        "repr.description_chars",
        "repr.max_len",
        "repr.include_entity_types",
        "repr.include_entities",
        "encoder.batch_size",
        "encoder.epochs",
        "encoder.learning_rate",
        "encoder.init_scale",
        "encoder.vocab_size",
        "encoder.dim",
        "reranker.candidates_per_mention",
        "reranker.batch_size",
        "reranker.epochs",
        "reranker.learning_rate",
        "reranker.init_scale",
        "reranker.vocab_size",
        "reranker.dim",
        "bm25.k1",
        "bm25.b",
    ];

    /// Sets one key. `seed` is copied into every seeded stage.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "kb" => self.kb = path(value),
            "mentions" => self.mentions = path(value),
            "vectors" => self.vectors = path(value),
            "out" => self.out = PathBuf::from(value),
            "seed" => {
                self.seed = parse(key, value)?;
                self.split.seed = self.seed;
                self.encoder.seed = self.seed;
                self.reranker.seed = self.seed;
            }
            "k" => self.k = if value == "auto" { None } else { Some(parse(key, value)?) },
            "nil_threshold" => self.nil_threshold = parse(key, value)?,
            "eval_split" => {
                self.eval_split = match value {
                    "dev" => SplitName::Dev,
                    "test" => SplitName::Test,
                    _ => return Err(Error::Config(format!("eval_split must be dev or test, got {value:?}"))),
                }
            }
            "stages" => {
                self.stages = if value == "all" {
                    Stage::ALL.to_vec()
                } else {
                    value.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?
                }
            }
            "split.jaccard_threshold" => self.split.jaccard_threshold = parse(key, value)?,
            "split.unseen_max_verb_mentions" => self.split.unseen_max_verb_mentions = parse(key, value)?,
            "split.event_tag" => self.split.event_tag = value.to_string(),
            "split.min_prior_count" => self.split.min_prior_count = parse(key, value)?,
            "split.train_pct" => self.split.train_pct = parse(key, value)?,
            "split.dev_pct" => self.split.dev_pct = parse(key, value)?,
            "repr.window_chars" => self.repr.window_chars = parse(key, value)?,
            "repr.max_anchors" => self.repr.max_anchors = parse(key, value)?,
            "repr.description_chars" => self.repr.description_chars = parse(key, value)?,
            "repr.max_len" => self.repr.max_len = parse(key, value)?,
            "repr.include_entity_types" => self.repr.include_entity_types = parse(key, value)?,
            "repr.include_entities" => self.repr.include_entities = parse(key, value)?,
            "encoder.batch_size" => self.encoder.batch_size = parse(key, value)?,
            "encoder.epochs" => self.encoder.epochs = parse(key, value)?,
            "encoder.learning_rate" => self.encoder.learning_rate = parse(key, value)?,
            "encoder.init_scale" => self.encoder.init_scale = parse(key, value)?,
            "encoder.vocab_size" => self.encoder.vocab_size = parse(key, value)?,
            "encoder.dim" => self.encoder.dim = parse(key, value)?,
            "reranker.candidates_per_mention" => self.reranker.candidates_per_mention = parse(key, value)?,
            "reranker.batch_size" => self.reranker.batch_size = parse(key, value)?,
            "reranker.epochs" => self.reranker.epochs = parse(key, value)?,
            "reranker.learning_rate" => self.reranker.learning_rate = parse(key, value)?,
            "reranker.init_scale" => self.reranker.init_scale = parse(key, value)?,
            "reranker.vocab_size" => self.reranker.vocab_size = parse(key, value)?,
            "reranker.dim" => self.reranker.dim = parse(key, value)?,
            "bm25.k1" => self.bm25.k1 = parse(key, value)?,
            "bm25.b" => self.bm25.b = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "kb" => opt_path(&self.kb),
            "mentions" => opt_path(&self.mentions),
            "vectors" => opt_path(&self.vectors),
            "out" => self.out.display().to_string(),
            "seed" => self.seed.to_string(),
            "k" => self.k.map_or("auto".into(), |k| k.to_string()),
            "nil_threshold" => self.nil_threshold.to_string(),
            "eval_split" => if self.eval_split == SplitName::Dev { "dev" } else { "test" }.into(),
            "stages" => self.stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(","),
            "split.jaccard_threshold" => self.split.jaccard_threshold.to_string(),
            "split.unseen_max_verb_mentions" => self.split.unseen_max_verb_mentions.to_string(),
            "split.event_tag" => self.split.event_tag.clone(),
            "split.min_prior_count" => self.split.min_prior_count.to_string(),
            "split.train_pct" => self.split.train_pct.to_string(),
            "split.dev_pct" => self.split.dev_pct.to_string(),
            "repr.window_chars" => self.repr.window_chars.to_string(),
            "repr.max_anchors" => self.repr.max_anchors.to_string(),
            "repr.description_chars" => self.repr.description_chars.to_string(),
            "repr.max_len" => self.repr.max_len.to_string(),
            "repr.include_entity_types" => self.repr.include_entity_types.to_string(),
            "repr.include_entities" => self.repr.include_entities.to_string(),
            "encoder.batch_size" => self.encoder.batch_size.to_string(),
            "encoder.epochs" => self.encoder.epochs.to_string(),
            "encoder.learning_rate" => self.encoder.learning_rate.to_string(),
            "encoder.init_scale" => self.encoder.init_scale.to_string(),
            "encoder.vocab_size" => self.encoder.vocab_size.to_string(),
            "encoder.dim" => self.encoder.dim.to_string(),
            "reranker.candidates_per_mention" => self.reranker.candidates_per_mention.to_string(),
            "reranker.batch_size" => self.reranker.batch_size.to_string(),
            "reranker.epochs" => self.reranker.epochs.to_string(),
            "reranker.learning_rate" => self.reranker.learning_rate.to_string(),
            "reranker.init_scale" => self.reranker.init_scale.to_string(),
            "reranker.vocab_size" => self.reranker.vocab_size.to_string(),
            "reranker.dim" => self.reranker.dim.to_string(),
            "bm25.k1" => self.bm25.k1.to_string(),
            "bm25.b" => self.bm25.b.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative paths
    /// are resolved against `base`.
    pub fn parse_text(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut out_given = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = key.trim();
            out_given |= key == "out";
            cfg.set(key, value).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        if let Some(base) = base {
            for p in [&mut cfg.kb, &mut cfg.mentions, &mut cfg.vectors].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if out_given && cfg.out.is_relative() {
                cfg.out = base.join(&cfg.out);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
        Self::parse_text(&text, path.parent())
    }

    /// Every key with its current value, one per line.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    /// Values of the given keys, for stage digests.
    fn params(&self, keys: &[&str]) -> String {
        keys.iter()
            .map(|k| format!("{k}={}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn validate_settings(&self) -> Result<()> {
        self.split.validate()?;
        self.repr.validate()?;
        self.encoder.validate()?;
        self.reranker.validate()?;
        self.bm25.validate()?;
        if !(0.0..=1.0).contains(&self.nil_threshold) {
            return Err(Error::Config("nil_threshold must lie in [0, 1]".into()));
        }
        if self.k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn splits(&self) -> PathBuf {
        self.root.join("splits")
    }

    pub fn split_file(&self, s: SplitName) -> PathBuf {
        self.splits().join(s.file_name())
    }

    pub fn biencoder(&self) -> PathBuf {
        self.root.join("models/biencoder.ckpt")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index/titles.evc")
    }

    pub fn candidates(&self, s: SplitName) -> PathBuf {
        self.root.join("candidates").join(s.file_name())
    }

    pub fn selected_k(&self) -> PathBuf {
        self.root.join("candidates/k.json")
    }

    pub fn reranker(&self) -> PathBuf {
        self.root.join("models/reranker.ckpt")
    }

    pub fn predictions(&self, s: SplitName) -> PathBuf {
        self.root.join("predictions").join(s.file_name())
    }

    pub fn baseline(&self, name: &str) -> PathBuf {
        self.root.join("predictions").join(format!("{name}.jsonl"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn lock(&self) -> PathBuf {
        self.root.join(".lock")
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub digest: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

/// Digest per completed stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e).io_context(|| format!("reading {}", path.display())),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, (serde_json::to_string_pretty(self)? + "\n").as_bytes())
    }
}

/// Held for the lifetime of a run; removes the lock file on drop.
struct Lock(PathBuf);

impl Lock {
    fn acquire(path: PathBuf) -> Result<Self> {
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(path.parent().unwrap_or(&path).to_path_buf()))
            }
            Err(e) => Err(e).io_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Skipped,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub stages: Vec<(Stage, Outcome)>,
}

impl RunSummary {
    pub fn outcome(&self, stage: Stage) -> Option<Outcome> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, o)| *o)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is not set")))
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    layout: Layout,
    manifest: Manifest,
    summary: RunSummary,
    /// Outputs written during this run; stages reading them always rerun.
    fresh: HashSet<PathBuf>,
}

impl Runner<'_> {
    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.layout.root).unwrap_or(p).display().to_string()
    }

    /// Runs `body` unless the recorded digest matches, every output exists
    /// and no input was rewritten earlier in this run. Failures are wrapped
    /// with the stage name.
    fn stage(
        &mut self,
        stage: Stage,
        inputs: &[PathBuf],
        params: String,
        outputs: &[PathBuf],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<()> {
        let wrap = |e: Error| Error::Stage {
            stage: stage.name().to_string(),
            source: Box::new(e),
        };
        if !self.cfg.stages.contains(&stage) {
            return Ok(());
        }
        let mut record = StageRecord::default();
        let mut hasher = Sha256::new();
        hasher.update(stage.name().as_bytes());
        hasher.update(params.as_bytes());
        for p in inputs {
            let d = sha256_hex(&read_file(p).map_err(wrap)?);
            hasher.update(d.as_bytes());
            record.inputs.insert(self.rel(p), d);
        }
        record.digest = hex(&hasher.finalize());
        record.outputs = outputs.iter().map(|p| self.rel(p)).collect();
        let done = self.manifest.stages.get(stage.name()).is_some_and(|r| r.digest == record.digest)
            && outputs.iter().all(|p| p.exists())
            && !inputs.iter().any(|p| self.fresh.contains(p));
        if done {
            log::info!("stage {stage}: up to date");
            self.summary.stages.push((stage, Outcome::Skipped));
            return Ok(());
        }
        log::info!("stage {stage}: running");
        body().map_err(wrap)?;
        self.manifest.stages.insert(stage.name().to_string(), record);
        self.manifest.save(&self.layout.manifest()).map_err(wrap)?;
        self.fresh.extend(outputs.iter().cloned());
        self.summary.stages.push((stage, Outcome::Ran));
        Ok(())
    }
}

pub(crate) fn load_split(layout: &Layout, s: SplitName, kb: &Kb) -> Result<Vec<EventMention>> {
    kb::load_mentions(&layout.split_file(s), Some(kb))
}

/// Split files from a KB and optional mention records.
pub fn build_dataset(kb: &Kb, mentions: Option<&Path>, cfg: &SplitConfig, out_dir: &Path) -> Result<dataset::Splits> {
    let mentions = match mentions {
        Some(p) => kb::load_mentions(p, Some(kb))?,
        None => extract_event_links(kb, &cfg.event_tag),
    };
    let balanced = dataset::balance_pos(mentions, cfg.seed);
    let splits = build_splits(balanced.mentions, kb, cfg)?;
    dataset::write_splits(out_dir, &splits)?;
    Ok(splits)
}

/// Loads a bi-encoder checkpoint and writes the title index.
pub fn build_index_file(kb: &Kb, ckpt: &Path, repr: &ReprConfig, out: &Path) -> Result<DenseIndex> {
    let params = ToyEncoderParams::from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let provider = VectorProvider::Toy {
        params: &params,
        kb,
        repr: repr.clone(),
    };
    let provenance = format!("toy:{}", sha256_hex(&read_file(ckpt)?));
    let index = build_index(kb, &provider, &provenance)?;
    index.save(out)?;
    Ok(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct SelectedK {
    pub(crate) k: usize,
    pub(crate) selected_on_dev: bool,
}

fn retrieve_stage(cfg: &RunConfig, layout: &Layout, kb: &Kb) -> Result<()> {
    let index = DenseIndex::load(&layout.index())?;
    let params = ToyEncoderParams::from_checkpoint(&Checkpoint::load(&layout.biencoder())?)?;
    let dev = load_split(layout, SplitName::Dev, kb)?;
    let test = load_split(layout, SplitName::Test, kb)?;
    let train = load_split(layout, SplitName::Train, kb)?;
    let max_k = cfg.k.unwrap_or(*K_GRID.last().unwrap());
    let dev_sets = retrieve_mentions(&index, &params, &dev, &cfg.repr, max_k)?;
    let selected = match cfg.k {
        Some(k) => SelectedK { k, selected_on_dev: false },
        None => SelectedK {
            k: select_k(&dev_sets, &dev, &K_GRID),
            selected_on_dev: true,
        },
    };
    log::info!("retrieving {} candidates per mention", selected.k);
    let truncate = |sets: Vec<retrieval::CandidateSet>, k: usize| -> Vec<_> {
        sets.into_iter()
            .map(|mut s| {
                s.candidates.truncate(k);
                s
            })
            .collect()
    };
    retrieval::write_candidates(&layout.candidates(SplitName::Dev), &truncate(dev_sets, selected.k))?;
    let test_sets = retrieve_mentions(&index, &params, &test, &cfg.repr, selected.k)?;
    retrieval::write_candidates(&layout.candidates(SplitName::Test), &test_sets)?;
    let train_sets = retrieve_mentions(&index, &params, &train, &cfg.repr, cfg.reranker.candidates_per_mention)?;
    retrieval::write_candidates(&layout.candidates(SplitName::Train), &train_sets)?;
    write_atomic(&layout.selected_k(), (serde_json::to_string(&selected)? + "\n").as_bytes())
}

/// Reranks candidate sets with a saved reranker.
pub fn rank_file(
    kb: &Kb,
    mentions: &[EventMention],
    candidates: &[retrieval::CandidateSet],
    params: &RankerParams,
    repr: &ReprConfig,
    nil_threshold: f64,
) -> Result<Vec<rerank::PredictionList>> {
    let by_id: HashMap<u64, &EventMention> = mentions.iter().map(|m| (m.mention_id, m)).collect();
    candidates
        .iter()
        .filter_map(|s| by_id.get(&s.mention_id).map(|m| (m, s)))
        .map(|(m, s)| rerank::rank_and_decide(params, m, s, kb, repr, nil_threshold))
        .collect()
}

fn write_report(layout: &Layout, name: &str, text: &str, json: &serde_json::Value) -> Result<()> {
    write_atomic(&layout.report(&format!("{name}.txt")), text.as_bytes())?;
    write_atomic(&layout.report(&format!("{name}.json")), (serde_json::to_string_pretty(json)? + "\n").as_bytes())
}

fn report_json(reports: &[(String, &EvalReport)]) -> serde_json::Value {
    serde_json::Value::Array(
        reports
            .iter()
            .map(|(name, r)| serde_json::json!({"name": name, "report": r, "records": r.records()}))
            .collect(),
    )
}

fn eval_stage(cfg: &RunConfig, layout: &Layout, kb: &Kb) -> Result<()> {
    let gold = load_split(layout, cfg.eval_split, kb)?;
    let sets = retrieval::load_candidates(&layout.candidates(cfg.eval_split))?;
    let preds = rerank::load_predictions(&layout.predictions(cfg.eval_split))?;
    let k = read_selected_k(layout)?;

    let mut ks: Vec<usize> = K_GRID.iter().copied().filter(|&g| g < k.k).collect();
    ks.insert(0, 1);
    ks.push(k.k);
    ks.dedup();
    let recalls: Vec<(String, EvalReport)> =
        ks.iter().map(|&k| (format!("R@{k}"), eval::recall_at_k(&sets, &gold, k))).collect();
    let cols: Vec<(String, &EvalReport)> = recalls.iter().map(|(n, r)| (n.clone(), r)).collect();
    write_report(layout, "recall", &render_side_by_side(&cols), &report_json(&cols))?;

    let acc1 = eval::accuracy(&preds, &gold, 1);
    let acc5 = eval::accuracy(&preds, &gold, 5);
    let cols = vec![("Accu@1".to_string(), &acc1), ("Accu@5".to_string(), &acc5)];
    write_report(layout, "accuracy", &render_side_by_side(&cols), &report_json(&cols))?;

    let nil = eval::accuracy_with_nil(&preds, &gold, cfg.nil_threshold);
    write_report(layout, "nil", &nil.render(), &report_json(&[("nil".to_string(), &nil)]))?;

    let mut summary = String::new();
    let _ = writeln!(summary, "split: {}", cfg.eval_split.file_name());
    let _ = writeln!(summary, "k: {}{}", k.k, if k.selected_on_dev { " (chosen on dev)" } else { "" });
    let _ = writeln!(summary, "recall@{}: {}", k.k, recalls.last().unwrap().1.combined);
    let _ = writeln!(summary, "accu@1: {}", acc1.combined);
    let _ = writeln!(summary, "accu@5: {}", acc5.combined);
    let _ = writeln!(summary, "accuracy with nil: {}", nil.combined);
    write_atomic(&layout.report("summary.txt"), summary.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Prior,
    Bm25,
    Cosine,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Prior => "prior",
            BaselineKind::Bm25 => "bm25",
            BaselineKind::Cosine => "cosine",
        }
    }

    pub fn heading(self) -> &'static str {
        match self {
            BaselineKind::Prior => "Prior",
            BaselineKind::Bm25 => "BM25",
            BaselineKind::Cosine => "Cosine",
        }
    }
}

/// Predictions of one baseline and the mentions it is scored on (the
/// prior leaves out surfaces it does not cover).
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub predictions: Vec<rerank::PredictionList>,
    pub evaluated: Vec<EventMention>,
}

pub fn run_baseline(
    cfg: &RunConfig,
    kind: BaselineKind,
    kb: &Kb,
    train: &TrainSplit,
    gold: &[EventMention],
    k: usize,
) -> Result<BaselineRun> {
    Ok(match kind {
        BaselineKind::Prior => {
            let table = PriorTable::from_train(train, cfg.split.min_prior_count);
            let (predictions, excluded) = baselines::prior_predictions(&table, gold);
            let excluded: HashSet<u64> = excluded.into_iter().collect();
            BaselineRun {
                predictions,
                evaluated: gold.iter().filter(|m| !excluded.contains(&m.mention_id)).cloned().collect(),
            }
        }
        BaselineKind::Bm25 => {
            let bm25 = Bm25::build(kb, cfg.bm25)?;
            let sets: Vec<_> = gold.iter().map(|m| baselines::bm25_retrieve(&bm25, m, &cfg.repr, k)).collect();
            BaselineRun {
                predictions: baselines::to_predictions(&sets),
                evaluated: gold.to_vec(),
            }
        }
        BaselineKind::Cosine => {
            let vectors = StaticVectors::load(required(&cfg.vectors, "vectors")?)?;
            let cos = CosineBaseline::new(&vectors, kb);
            let sets: Vec<_> = gold.iter().map(|m| cos.predict(m, k)).collect();
            BaselineRun {
                predictions: baselines::to_predictions(&sets),
                evaluated: gold.to_vec(),
            }
        }
    })
}

pub(crate) fn read_selected_k(layout: &Layout) -> Result<SelectedK> {
    let path = layout.selected_k();
    Ok(serde_json::from_str(&fs::read_to_string(&path).io_context(|| format!("reading {}", path.display()))?)?)
}

fn baselines_stage(cfg: &RunConfig, layout: &Layout, kb: &Kb) -> Result<()> {
    let train = TrainSplit::from_mentions(load_split(layout, SplitName::Train, kb)?);
    let gold = load_split(layout, cfg.eval_split, kb)?;
    let k = read_selected_k(layout)?.k;
    let mut kinds = vec![BaselineKind::Prior, BaselineKind::Bm25];
    if cfg.vectors.is_some() {
        kinds.push(BaselineKind::Cosine);
    }
    let mut reports = Vec::new();
    let mut coverage = (0, 0);
    for kind in kinds {
        let run = run_baseline(cfg, kind, kb, &train, &gold, k)?;
        rerank::write_predictions(&layout.baseline(kind.name()), &run.predictions)?;
        if kind == BaselineKind::Prior {
            let linkable = |ms: &[EventMention]| ms.iter().filter(|m| !m.is_nil()).count();
            coverage = (linkable(&run.evaluated), linkable(&gold));
        }
        reports.push((kind.heading().to_string(), eval::accuracy(&run.predictions, &run.evaluated, 1)));
    }
    let cols: Vec<(String, &EvalReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    let mut text = render_side_by_side(&cols);
    let _ = writeln!(text, "Prior coverage: {} of {} linkable mentions", coverage.0, coverage.1);
    write_report(layout, "baselines", &text, &report_json(&cols))
}

/// Runs the selected stages, skipping those whose inputs and settings are
/// unchanged since they last completed.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate_settings()?;
    let kb_path = required(&cfg.kb, "kb")?.to_path_buf();
    let layout = Layout::new(&cfg.out);
    fs::create_dir_all(&layout.root).io_context(|| format!("creating {}", layout.root.display()))?;
    let _lock = Lock::acquire(layout.lock())?;
    let (kb, report) = kb::load_kb(&kb_path)?;
    if report.dropped_anchors > 0 {
        log::warn!("dropped {} invalid anchors from the KB", report.dropped_anchors);
    }
    let mut r = Runner {
        cfg,
        manifest: Manifest::load(&layout.manifest())?,
        layout: layout.clone(),
        summary: RunSummary::default(),
        fresh: HashSet::new(),
    };
    let l = &layout;
    let split_files: Vec<PathBuf> = SplitName::ALL.iter().map(|&s| l.split_file(s)).collect();
    let cand_files: Vec<PathBuf> = SplitName::ALL.iter().map(|&s| l.candidates(s)).collect();
    let pred_files = vec![l.predictions(SplitName::Dev), l.predictions(SplitName::Test)];
    let split_keys = [
        "seed",
        "split.jaccard_threshold",
        "split.unseen_max_verb_mentions",
        "split.event_tag",
        "split.train_pct",
        "split.dev_pct",
    ];
    let repr_keys = [
        "repr.window_chars",
        "repr.max_anchors",
        "repr.description_chars",
        "repr.max_len",
        "repr.include_entity_types",
        "repr.include_entities",
    ];
    let with = |extra: &[&'static str]| -> Vec<&'static str> { repr_keys.iter().chain(extra).copied().collect() };

    let mut inputs = vec![kb_path.clone()];
    inputs.extend(cfg.mentions.clone());
    let mut outputs = split_files.clone();
    outputs.push(l.splits().join("stats.txt"));
    r.stage(Stage::Split, &inputs, cfg.params(&split_keys), &outputs, || {
        build_dataset(&kb, cfg.mentions.as_deref(), &cfg.split, &l.splits()).map(|_| ())
    })?;

    let enc_keys = with(&[
        "seed",
        "encoder.batch_size",
        "encoder.epochs",
        "encoder.learning_rate",
        "encoder.init_scale",
        "encoder.vocab_size",
        "encoder.dim",
    ]);
    r.stage(
        Stage::TrainBiencoder,
        &[kb_path.clone(), l.split_file(SplitName::Train)],
        cfg.params(&enc_keys),
        &[l.biencoder()],
        || {
            let train = TrainSplit::load(&l.splits(), &kb)?;
            let trained = encoder::train_biencoder(&train, &kb, &cfg.repr, &cfg.encoder)?;
            trained.params.to_checkpoint().save(&l.biencoder())
        },
    )?;

    let index_side = DenseIndex::sidecar_path(&l.index());
    r.stage(
        Stage::Index,
        &[kb_path.clone(), l.biencoder()],
        cfg.params(&repr_keys),
        &[l.index(), index_side.clone()],
        || build_index_file(&kb, &l.biencoder(), &cfg.repr, &l.index()).map(|_| ()),
    )?;

    let mut inputs = vec![l.biencoder(), l.index(), index_side];
    inputs.extend(split_files.iter().cloned());
    let mut outputs = cand_files.clone();
    outputs.push(l.selected_k());
    r.stage(
        Stage::Retrieve,
        &inputs,
        cfg.params(&with(&["k", "reranker.candidates_per_mention"])),
        &outputs,
        || retrieve_stage(cfg, l, &kb),
    )?;

    let rr_keys = with(&[
        "seed",
        "reranker.candidates_per_mention",
        "reranker.batch_size",
        "reranker.epochs",
        "reranker.learning_rate",
        "reranker.init_scale",
        "reranker.vocab_size",
        "reranker.dim",
    ]);
    r.stage(
        Stage::TrainReranker,
        &[kb_path.clone(), l.split_file(SplitName::Train), l.candidates(SplitName::Train)],
        cfg.params(&rr_keys),
        &[l.reranker()],
        || {
            let train = TrainSplit::load(&l.splits(), &kb)?;
            let sets = retrieval::load_candidates(&l.candidates(SplitName::Train))?;
            let trained = rerank::train_reranker(&train, &sets, &kb, &cfg.repr, &cfg.reranker)?;
            log::info!("reranker skipped {} training mentions", trained.skipped);
            trained.params.to_checkpoint().save(&l.reranker())
        },
    )?;

    let mut inputs = vec![kb_path.clone(), l.reranker()];
    inputs.extend(split_files.iter().cloned());
    inputs.extend(cand_files.iter().cloned());
    r.stage(Stage::Rank, &inputs, cfg.params(&with(&["nil_threshold"])), &pred_files, || {
        let params = RankerParams::from_checkpoint(&Checkpoint::load(&l.reranker())?)?;
        for s in [SplitName::Dev, SplitName::Test] {
            let mentions = load_split(l, s, &kb)?;
            let sets = retrieval::load_candidates(&l.candidates(s))?;
            let preds = rank_file(&kb, &mentions, &sets, &params, &cfg.repr, cfg.nil_threshold)?;
            rerank::write_predictions(&l.predictions(s), &preds)?;
        }
        Ok(())
    })?;

    let mut inputs = vec![kb_path.clone(), l.selected_k()];
    inputs.extend(split_files.iter().cloned());
    inputs.extend(cfg.vectors.clone());
    let mut outputs = vec![l.baseline("prior"), l.baseline("bm25"), l.report("baselines.txt")];
    if cfg.vectors.is_some() {
        outputs.push(l.baseline("cosine"));
    }
    r.stage(
        Stage::Baselines,
        &inputs,
        cfg.params(&with(&["eval_split", "split.min_prior_count", "bm25.k1", "bm25.b"])),
        &outputs,
        || baselines_stage(cfg, l, &kb),
    )?;

    let mut inputs = split_files.clone();
    inputs.extend(cand_files.iter().cloned());
    inputs.extend(pred_files.iter().cloned());
    inputs.push(l.selected_k());
    r.stage(
        Stage::Eval,
        &inputs,
        cfg.params(&["eval_split", "nil_threshold"]),
        &[l.report("recall.txt"), l.report("accuracy.txt"), l.report("nil.txt"), l.report("summary.txt")],
        || eval_stage(cfg, l, &kb),
    )?;
    Ok(r.summary)
}

/// One problem found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub source: String,
    pub mention_id: Option<u64>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mention_id {
            Some(id) => write!(f, "{}: mention {id}: {}", self.source, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

fn diag(source: &Path, mention_id: Option<u64>, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        source: source.display().to_string(),
        mention_id,
        message: message.into(),
    }
}

fn check_mentions(path: &Path, kb: &Kb, out: &mut Vec<Diagnostic>) -> Vec<EventMention> {
    let mentions = match kb::read_mentions_unchecked(path) {
        Ok(m) => m,
        Err(e) => {
            out.push(diag(path, None, e.to_string()));
            return Vec::new();
        }
    };
    let mut seen = HashSet::new();
    for m in &mentions {
        if let Err(e) = m.validate(Some(kb)) {
            out.push(diag(path, Some(m.mention_id), e.to_string()));
        }
        if !seen.insert(m.mention_id) {
            out.push(diag(path, Some(m.mention_id), "duplicate mention id"));
        }
    }
    mentions
}

/// Split-level invariants: disjoint ids, labels on every evaluation
/// mention, and no held-out title among training links.
pub fn check_splits(train: &[EventMention], dev: &[EventMention], test: &[EventMention]) -> Vec<String> {
    let mut problems = Vec::new();
    let mut owner: HashMap<u64, &str> = HashMap::new();
    for (name, split) in [("train", train), ("dev", dev), ("test", test)] {
        for m in split {
            if let Some(prev) = owner.insert(m.mention_id, name) {
                if prev != name {
                    problems.push(format!("mention {} appears in both {prev} and {name}", m.mention_id));
                }
            }
        }
    }
    let train_titles: HashSet<u64> = train.iter().filter_map(|m| m.gold_id).collect();
    for m in dev.iter().chain(test) {
        let id = m.mention_id;
        let Some(label) = m.split_label else {
            problems.push(format!("mention {id} has no category label"));
            continue;
        };
        if (label == SplitLabel::Nil) != m.gold_id.is_none() {
            problems.push(format!("mention {id}: Nil label and gold id disagree"));
        }
        if !label.allowed_for(m.pos) {
            problems.push(format!("mention {id}: {} does not apply to {} mentions", label.display_name(), m.pos));
        }
        match (label, m.gold_id) {
            (SplitLabel::UnseenEvent, Some(g)) if train_titles.contains(&g) => {
                problems.push(format!("mention {id}: Unseen Event title {g} has training mentions"))
            }
            (SplitLabel::SeenEvent | SplitLabel::UnseenForm, Some(g)) if !train_titles.contains(&g) => {
                problems.push(format!("mention {id}: labeled seen but title {g} has no training mentions"))
            }
            _ => {}
        }
    }
    problems
}

/// Schema and invariant scan of the configured inputs and, when present,
/// the run's split files. Problems are returned, never raised.
pub fn validate(cfg: &RunConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if let Err(e) = cfg.validate_settings() {
        out.push(diag(Path::new("config"), None, e.to_string()));
    }
    let Some(kb_path) = &cfg.kb else {
        out.push(diag(Path::new("config"), None, "`kb` is not set"));
        return out;
    };
    let kb = match kb::load_kb(kb_path) {
        Ok((kb, report)) => {
            if report.dropped_anchors > 0 {
                out.push(diag(kb_path, None, format!("{} invalid anchors", report.dropped_anchors)));
            }
            kb
        }
        Err(e) => {
            out.push(diag(kb_path, None, e.to_string()));
            return out;
        }
    };
    if let Some(p) = &cfg.mentions {
        check_mentions(p, &kb, &mut out);
    }
    if let Some(p) = &cfg.vectors {
        if let Err(e) = StaticVectors::load(p) {
            out.push(diag(p, None, e.to_string()));
        }
    }
    let layout = Layout::new(&cfg.out);
    if SplitName::ALL.iter().all(|&s| layout.split_file(s).exists()) {
        let [train, dev, test] = SplitName::ALL.map(|s| check_mentions(&layout.split_file(s), &kb, &mut out));
        for p in check_splits(&train, &dev, &test) {
            out.push(diag(&layout.splits(), None, p));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::PosClass;

    #[test]
    fn config_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("seed", "9").unwrap();
        cfg.set("k", "30").unwrap();
        cfg.set("stages", "split,index").unwrap();
        assert_eq!(cfg.encoder.seed, 9);
        assert_eq!(cfg.reranker.seed, 9);
        let back = RunConfig::parse_text(&cfg.to_text(), None).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.set("nope", "1").is_err());
        assert!(RunConfig::parse_text("seed 3", None).is_err());
        assert!(RunConfig::parse_text("k = auto # pick on dev\n", None).unwrap().k.is_none());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let cfg = RunConfig::parse_text("kb = kb.jsonl\nout = run\n", Some(Path::new("/data"))).unwrap();
        assert_eq!(cfg.kb.as_deref(), Some(Path::new("/data/kb.jsonl")));
        assert_eq!(cfg.out, Path::new("/data/run"));
    }

    #[test]
    fn split_checks() {
        let mk = |id, gold, label| {
            let mut m = EventMention::new(id, "a b", (0, 1), PosClass::Verb, gold).unwrap();
            m.split_label = label;
            m
        };
        let train = vec![mk(1, Some(10), None)];
        let clean = vec![mk(2, Some(10), Some(SplitLabel::SeenEvent)), mk(3, Some(11), Some(SplitLabel::UnseenEvent))];
        assert!(check_splits(&train, &clean, &[]).is_empty());
        let leaked = vec![mk(4, Some(10), Some(SplitLabel::UnseenEvent))];
        assert_eq!(check_splits(&train, &leaked, &[]).len(), 1);
        let dup = vec![mk(1, Some(10), Some(SplitLabel::SeenEvent))];
        assert!(!check_splits(&train, &dup, &[]).is_empty());
    }
}
