//! Augment small labeled text datasets by generating class-conditional
//! examples from a trained language model.
//!
//! The pipeline: mine per-class salience lexicons from the labeled data,
//! train (or load) a small autoregressive transformer, then decode new
//! sentences while nudging the model's cached attention key/value states
//! toward a target class. The nudge is gradient ascent on a per-step
//! reward that combines a lexical salience gain with a KL trust region
//! against the unperturbed model; the trust-region weight adapts online.
//! An evaluation harness measures downstream classifier impact under
//! data starvation and original/generated mixing ratios.

pub mod augment;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod guide;
pub mod lm;
pub mod salience;

pub use corpus::{Dataset, LabeledExample, PreprocessConfig, Provenance, Vocab};
pub use guide::{DecodeSession, Generation, GuideConfig, StepDiag};
pub use lm::{KvCache, LmModel, NgramLm, TrainLmConfig};
pub use salience::Lexicon;
