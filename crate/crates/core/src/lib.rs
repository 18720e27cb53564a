//! Probing transformer attention heads for verbal government.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`govbank`] loads the government rules (verb lemma plus expected
//!    complements) from a line-oriented TSV file.
//! 2. [`conllu`] streams dependency-parsed sentences and [`matcher`] turns
//!    them into labeled governor/governee [`matcher::Instance`]s.
//! 3. [`dataset`] balances instances by label and distance, withholds
//!    patterns or lemmas, and produces seeded train/test splits.
//! 4. [`attnio`] reads per-instance attention tensors from an `ATN1`
//!    container and max-pools them into one value per attention head.
//! 5. [`probes`] trains the probing classifiers and [`experiments`] runs the
//!    overall, near/far, layer-sweep, head-ablation and holdout studies.
//!
//! Data-parallel loops (pooling, forest training, experiment cells) go
//! through [`par`], which uses rayon when the `parallel` feature is enabled
//! and falls back to plain iteration otherwise.

pub mod attnio;
pub mod conllu;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod govbank;
pub mod jsonl;
pub mod matcher;
pub mod par;
pub mod probes;
pub mod profile;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
pub use par::Execution;
