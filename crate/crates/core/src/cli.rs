//! Command-line front end. Every subcommand reads the same run config
//! (file, then `--set` pairs, then dedicated flags) and works on the
//! artifact layout under `out`.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataset::{SplitName, TrainSplit};
use crate::error::{Error, Result};
use crate::eval::{self, AblationInputs, AblationVariant, EvalReport};
use crate::kb::{self, EventMention, Kb};
use crate::pipeline::{self, load_split, read_selected_k, BaselineKind, Layout, RunConfig, Stage, CONFIG_ENV};
use crate::repr::{build_mention_repr, build_title_repr};
use crate::rerank::{self, RankerParams};
use crate::retrieval;
use crate::vecfile::Checkpoint;

#[derive(Debug, Parser)]
#[command(name = "evlink", version, about = "Link event mentions to knowledge-base titles")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand; each maps onto a config key.
#[derive(Debug, Args)]
pub struct Common {
    /// key = value config file
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. --set encoder.epochs=50
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub kb: Option<String>,
    #[arg(long, global = true)]
    pub mentions: Option<String>,
    #[arg(long, global = true)]
    pub vectors: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Candidates per mention ("auto" picks on dev)
    #[arg(long, global = true)]
    pub k: Option<String>,
    #[arg(long = "nil-threshold", global = true)]
    pub nil_threshold: Option<String>,
}

impl Common {
    pub fn config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        let flags = [
            ("kb", &self.kb),
            ("mentions", &self.mentions),
            ("vectors", &self.vectors),
            ("out", &self.out),
            ("seed", &self.seed),
            ("k", &self.k),
            ("nil_threshold", &self.nil_threshold),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check inputs and split files for schema and invariant violations
    Kb {
        #[command(subcommand)]
        action: KbAction,
    },
    /// Build train/dev/test splits
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train the bi-encoder or the reranker
    Train {
        #[command(subcommand)]
        model: TrainModel,
    },
    /// Encode every title into a dense index
    Index {
        #[command(subcommand)]
        action: IndexAction,
    },
    /// Retrieve candidates or rank them
    Link {
        #[command(subcommand)]
        action: LinkAction,
    },
    /// Run a reference system on the evaluation split
    Baseline {
        #[arg(value_enum)]
        system: BaselineArg,
    },
    /// Score predictions against gold mentions
    Eval(EvalArgs),
    /// Retrain under representation ablations and compare
    Ablate {
        #[arg(long, value_delimiter = ',', default_value = "full,no-type,no-entities")]
        variants: Vec<String>,
    },
    /// Run every stage, skipping finished ones
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
    /// Print a mention or title token sequence
    Repr {
        #[command(subcommand)]
        action: ReprAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum KbAction {
    Validate,
}

#[derive(Debug, Subcommand)]
pub enum DatasetAction {
    /// Build train/dev/test splits under <out>/splits
    Build,
}

#[derive(Debug, Subcommand)]
pub enum TrainModel {
    Biencoder,
    Reranker,
}

#[derive(Debug, Subcommand)]
pub enum IndexAction {
    Build,
}

#[derive(Debug, Subcommand)]
pub enum LinkAction {
    /// Retrieve candidates for every split
    Retrieve,
    /// Rerank candidates and decide Nil
    Rank {
        /// Candidate file; defaults to the run's dev and test candidates
        #[arg(long)]
        candidates: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineAction {
    Run,
}

#[derive(Debug, Subcommand)]
pub enum ReprAction {
    Dump {
        #[arg(long, conflicts_with = "title")]
        mention: Option<u64>,
        #[arg(long)]
        title: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Prior,
    Bm25,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModeArg {
    Recall,
    Accuracy,
    Nil,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "accuracy")]
    pub mode: EvalModeArg,
    /// Rank cutoff for accuracy
    #[arg(long, default_value_t = 1)]
    pub at: usize,
    /// Nil threshold re-applied to the predictions
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Prediction or candidate file; defaults to the run's own
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Gold mention file; defaults to the evaluation split
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Print JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

fn load_kb(cfg: &RunConfig) -> Result<Kb> {
    let path = cfg.kb.as_deref().ok_or_else(|| Error::Config("`kb` is not set".into()))?;
    Ok(kb::load_kb(path)?.0)
}

fn stage_only(cfg: &RunConfig, stage: Stage) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.stages = vec![stage];
    pipeline::run_pipeline(&cfg).map(|_| ())
}

fn print_report(r: &EvalReport, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(&r.records())?);
    } else {
        print!("{}", r.render());
    }
    Ok(())
}

/// The configured K, else the one the retrieve stage picked on dev.
fn run_k(cfg: &RunConfig, layout: &Layout) -> usize {
    cfg.k.unwrap_or_else(|| read_selected_k(layout).map_or(retrieval::DEFAULT_K, |s| s.k))
}

fn mention_pool(cfg: &RunConfig, kb: &Kb) -> Result<Vec<EventMention>> {
    if let Some(p) = &cfg.mentions {
        return kb::load_mentions(p, Some(kb));
    }
    let layout = Layout::new(&cfg.out);
    let mut all = Vec::new();
    for s in SplitName::ALL {
        all.extend(load_split(&layout, s, kb)?);
    }
    Ok(all)
}

/// Runs a parsed command and returns the process status.
pub fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = cli.common.config()?;
    let layout = Layout::new(&cfg.out);
    match cli.command {
        Command::Kb { action: KbAction::Validate } => {
            let diags = pipeline::validate(&cfg);
            for d in &diags {
                println!("{d}");
            }
            return Ok(if diags.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
        Command::Dataset { action: DatasetAction::Build } => {
            stage_only(&cfg, Stage::Split)?;
            print!("{}", std::fs::read_to_string(layout.splits().join("stats.txt")).unwrap_or_default());
        }
        Command::Train { model: TrainModel::Biencoder } => stage_only(&cfg, Stage::TrainBiencoder)?,
        Command::Train { model: TrainModel::Reranker } => stage_only(&cfg, Stage::TrainReranker)?,
        Command::Index { action: IndexAction::Build } => stage_only(&cfg, Stage::Index)?,
        Command::Link { action: LinkAction::Retrieve } => stage_only(&cfg, Stage::Retrieve)?,
        Command::Link { action: LinkAction::Rank { candidates: None } } => stage_only(&cfg, Stage::Rank)?,
        Command::Link { action: LinkAction::Rank { candidates: Some(path) } } => {
            let kb = load_kb(&cfg)?;
            let params = RankerParams::from_checkpoint(&Checkpoint::load(&layout.reranker())?)?;
            let sets = retrieval::load_candidates(&path)?;
            let preds = pipeline::rank_file(&kb, &mention_pool(&cfg, &kb)?, &sets, &params, &cfg.repr, cfg.nil_threshold)?;
            let mut out = std::io::stdout().lock();
            for p in &preds {
                writeln!(out, "{}", serde_json::to_string(p)?).map_err(|e| Error::Io {
                    context: "writing predictions".into(),
                    source: e,
                })?;
            }
        }
        Command::Baseline { system } => {
            let kind = match system {
                BaselineArg::Prior => BaselineKind::Prior,
                BaselineArg::Bm25 => BaselineKind::Bm25,
                BaselineArg::Cosine => BaselineKind::Cosine,
            };
            let kb = load_kb(&cfg)?;
            let train = TrainSplit::load(&layout.splits(), &kb)?;
            let gold = load_split(&layout, cfg.eval_split, &kb)?;
            let k = run_k(&cfg, &layout);
            let run = pipeline::run_baseline(&cfg, kind, &kb, &train, &gold, k)?;
            rerank::write_predictions(&layout.baseline(kind.name()), &run.predictions)?;
            print!("{}", eval::accuracy(&run.predictions, &run.evaluated, 1).render());
        }
        Command::Eval(args) => {
            let kb = load_kb(&cfg)?;
            let gold = match &args.gold {
                Some(p) => kb::load_mentions(p, Some(&kb))?,
                None => load_split(&layout, cfg.eval_split, &kb)?,
            };
            let report = match args.mode {
                EvalModeArg::Recall => {
                    let path = args.predictions.clone().unwrap_or_else(|| layout.candidates(cfg.eval_split));
                    let sets = retrieval::load_candidates(&path)?;
                    let k = run_k(&cfg, &layout);
                    eval::recall_at_k(&sets, &gold, k)
                }
                EvalModeArg::Accuracy | EvalModeArg::Nil => {
                    let path = args.predictions.clone().unwrap_or_else(|| layout.predictions(cfg.eval_split));
                    let preds = rerank::load_predictions(&path)?;
                    if args.mode == EvalModeArg::Accuracy {
                        eval::accuracy(&preds, &gold, args.at)
                    } else {
                        let t = args.threshold.unwrap_or(cfg.nil_threshold);
                        eval::accuracy_with_nil(&eval::with_threshold(&preds, t), &gold, t)
                    }
                }
            };
            print_report(&report, args.json)?;
        }
        Command::Ablate { variants } => {
            let variants = variants.iter().map(|v| v.parse()).collect::<Result<Vec<AblationVariant>>>()?;
            let kb = load_kb(&cfg)?;
            let train = TrainSplit::load(&layout.splits(), &kb)?;
            let eval_mentions = load_split(&layout, cfg.eval_split, &kb)?;
            let inputs = AblationInputs {
                kb: &kb,
                train: &train,
                eval: &eval_mentions,
                repr: &cfg.repr,
                encoder: &cfg.encoder,
                reranker: &cfg.reranker,
                k: run_k(&cfg, &layout),
                nil_threshold: cfg.nil_threshold,
            };
            let table = eval::run_ablation(&inputs, &variants)?.render();
            crate::vecfile::write_atomic(&layout.report("ablation.txt"), table.as_bytes())?;
            print!("{table}");
        }
        Command::Pipeline { action: PipelineAction::Run } => {
            let summary = pipeline::run_pipeline(&cfg)?;
            for (stage, outcome) in &summary.stages {
                log::info!("{stage}: {outcome:?}");
            }
            if let Ok(s) = std::fs::read_to_string(layout.report("summary.txt")) {
                print!("{s}");
            }
        }
        Command::Repr { action: ReprAction::Dump { mention, title } } => {
            let kb = load_kb(&cfg)?;
            let seq = match (mention, title) {
                (Some(id), _) => {
                    let pool = mention_pool(&cfg, &kb)?;
                    let m = pool.iter().find(|m| m.mention_id == id).ok_or(Error::MissingId(id))?;
                    build_mention_repr(m, &m.entities, &cfg.repr)
                }
                (None, Some(id)) => build_title_repr(kb.get(id).ok_or(Error::MissingId(id))?, &cfg.repr),
                (None, None) => return Err(Error::Config("give --mention <id> or --title <id>".into())),
            };
            println!("{}", seq.dump());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Entry point of the binary: parses arguments, logs to standard error and
/// reports failures there.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
