//! Event linking over a hyperlinked knowledge base.
//!
//! The pipeline mirrors a two-stage entity linker adapted to events:
//!
//! 1. [`kb`] loads pages and mention records; [`dataset`] turns anchors that
//!    point at event pages into train/dev/test splits with per-category
//!    labels.
//! 2. [`repr`] renders mentions (with the entities around them) and titles
//!    (with their first anchors) as marked-up token sequences.
//! 3. [`encoder`] trains a two-tower bi-encoder with in-batch negatives;
//!    [`retrieval`] caches title vectors and serves exact top-K search.
//! 4. [`rerank`] scores the retrieved candidates jointly and decides Nil.
//! 5. [`baselines`] and [`eval`] provide reference systems and every
//!    metric, broken down by category.
//!
//! [`pipeline`] wires the stages together with digest-based manifests so
//! reruns are incremental and byte-for-byte reproducible.

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod kb;
pub mod pipeline;
pub mod repr;
pub mod rerank;
pub mod retrieval;
pub mod synth;
pub mod text;
pub mod vecfile;

pub use error::{Error, Result};
pub use kb::{EntitySpan, EntityType, EventMention, Kb, KbEntry, PosClass, SplitLabel};
