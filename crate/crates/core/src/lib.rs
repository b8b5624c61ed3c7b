//! Counterfactual sensitivity regularization laboratory.
//!
//! A small differentiable answer predictor is trained on synthetic multi-step
//! arithmetic traces with known causal structure. During training, operator
//! level edits produce counterfactual traces; when a verifier confirms the
//! edit broke the trace, the divergence between the original and
//! counterfactual answer distributions is subtracted from the task loss.
//! The metrics module measures how faithful the resulting model is.
//!
//! Module map:
//!
//! * [`taskgen`]: synthetic tasks and datasets with ground-truth causal graphs.
//! * [`trace`]: trace data model, tokenization, operator identification.
//! * [`verifier`]: exact and noisy trace verifiers.
//! * [`intervene`]: counterfactual edit policies and meaning-preserving variants.
//! * [`model`]: the answer predictor with hand-written reverse-mode gradients.
//! * [`train`]: losses, divergences, the gated training step and run loop.
//! * [`metrics`]: COS, SIS, CS/COMP/SUFF probes, ECE, flip precision/recall.
//! * [`experiment`]: sweeps, property checks and run-directory orchestration.

pub mod error;
pub mod experiment;
pub mod intervene;
pub mod metrics;
pub mod model;
pub mod par;
pub mod rng;
pub mod taskgen;
pub mod trace;
pub mod train;
pub mod verifier;

pub use error::{Error, Result};
