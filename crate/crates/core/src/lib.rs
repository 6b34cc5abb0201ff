//! Scoring surveillance traps by how well their pool results anticipate
//! nearby human cases, and estimating how site covariates shape that score.
//!
//! The pipeline runs in three phases:
//!
//! 1. [`prevalence`] annotates pools with a vector-index risk, [`glmm`] fits a
//!    spatial logistic mixed model, and [`evaluation`] cross-validates it to
//!    obtain per-trap sensitivity and specificity.
//! 2. [`scoring`] turns those into trap scores.
//! 3. [`causal`] estimates dose-response curves of the score on site
//!    covariates, adjusting for confounders read off a causal DAG.
//!
//! [`synth`] generates ground-truth worlds for checking every phase.

pub mod causal;
pub mod data;
pub mod evaluation;
pub mod glmm;
pub mod optim;
pub mod prevalence;
pub mod scoring;
pub mod special;
pub mod synth;
