//! Evaluation harness for chain-of-thought prompting on implicit
//! aspect-level sentiment analysis.
//!
//! The crate is split along the pipeline:
//!
//! - [`corpus`]: SemEval-2014 XML / JSONL loading, implicit-flag overlay,
//!   dataset accounting.
//! - [`backend`]: the text-completion interface, an HTTP client, a scripted
//!   mock and a content-addressed response cache.
//! - [`chains`]: prompt templates and the Direct / THOR / SAoT chain
//!   executors.
//! - [`extraction`]: mapping free-form completions onto polarity labels.
//! - [`eval`]: confusion matrices, macro-F1 on All/ISA/ESA slices, the
//!   improvement arithmetic and report rendering.
//! - [`runner`]: experiment configuration, resumable batch execution and
//!   the report command.

pub mod backend;
pub mod chains;
pub mod corpus;
pub mod eval;
pub mod extraction;
pub mod percent;
pub mod runner;

pub use corpus::{DatasetName, DatasetSummary, PolarityLabel, SentimentInstance};
pub use percent::Percent;
