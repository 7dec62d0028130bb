//! Multi-stage LLM extraction of suicide-related social determinants of
//! health (SDoH) from death-investigation narratives.
//!
//! The crate is organized by pipeline role:
//!
//! - [`corpus`]: incidents, factor registry, gold annotations, synthetic corpus.
//! - [`segmenter`]: deterministic sentence segmentation and normalization.
//! - [`prompts`]: the retrieval, verification, extraction and baseline prompts.
//! - [`backend`]: model backends (remote, mocks, replay cache) and payload parsing.
//! - [`pipeline`]: multistage and single-prompt extraction with evidence traces.
//! - [`eval`]: extraction metrics, Cohen's kappa, stage-wise retrieval accuracy.
//! - [`annotation`]: the two-arm annotation study service.
//! - [`cli`]: the `sdoh` command line.

pub mod corpus;
pub mod segmenter;
pub mod prompts;
pub mod backend;
pub mod pipeline;
pub mod eval;
pub mod annotation;
pub mod cli;
