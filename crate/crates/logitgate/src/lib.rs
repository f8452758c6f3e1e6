//! Positional logit suppression at chain-of-thought boundaries, plus the
//! evaluation pipeline to measure what it changes.
//!
//! Reasoning models mark their visible reasoning with `<think>`/`</think>`
//! tokens, and refusals tend to ride in on a recognizable pattern: a double
//! newline immediately after `<think>` (an empty reasoning block), often
//! followed by the model ending its answer right after `</think>`. This
//! crate blocks those transitions at exactly the step where they occur,
//! and nowhere else, by watching the emitted token stream and setting
//! the offending tokens' logits to an effective minus infinity for the
//! following step(s).
//!
//! The crate is organized around runnable examples; each demonstrates one
//! capability end to end:
//!
//! ```text
//! examples/
//! ├── sampling_pipeline.rs       # logits -> token: penalty, temperature,
//! │                              # masking, softmax, nucleus, draw
//! ├── trigger_rules.rs           # boundary rules, masks per step, decay
//! ├── toy_generation.rs          # scripted refusal-branching model under
//! │                              # the three intervention arms
//! ├── fisher_significance.rs     # exact 2x2 significance testing
//! ├── intervention_experiment.rs # full matrix -> classify -> report
//! ├── resumable_runs.rs          # hashed persistence, kill + resume
//! └── remote_mock_driver.rs      # step-wise driver against the bundled
//!                                # OpenAI-shaped mock server
//! ```
//!
//! Run one with:
//!
//! ```bash
//! cargo run -p logitgate --example toy_generation
//! ```
//!
//! The building blocks, bottom to top:
//!
//! - [`types`]: token ids, the special-token map, trigger rules,
//!   interventions, sampler settings.
//! - [`sampler`]: the logit pipeline. Suppression masks are applied before
//!   nucleus filtering, so a blocked token can never ride into the nucleus;
//!   masked tokens end with probability exactly zero.
//! - [`trigger`]: the per-session state machine that watches emissions and
//!   produces each step's [`sampler::SuppressionMask`].
//! - [`engine`]: generation backends: a scripted toy model for offline
//!   verification, a step-wise remote driver for OpenAI-compatible servers,
//!   and a mock server for tests.
//! - [`harness`]: datasets, CoT/answer splitting, classification, and the
//!   resumable run matrix.
//! - [`stats`] / [`report`]: class distributions, Fisher's exact test, and
//!   deterministic CSV reports.
//! - [`config`] / [`run`]: the TOML run configuration and the operations
//!   the `logitgate` CLI wraps.

pub mod config;
pub mod engine;
pub mod error;
pub mod harness;
pub mod record;
pub mod report;
pub mod run;
pub mod sampler;
pub mod stats;
pub mod trigger;
pub mod types;

pub use error::{Error, ErrorKind, Result};
pub use types::{
    Intervention, RuleDuration, SamplerConfig, SpecialTokenMap, TokenId, TokenSpec, TriggerRule,
};

pub use engine::{generate, Engine};
pub use sampler::{LogitVector, SuppressionMask, SUPPRESS_SENTINEL};
pub use trigger::{current_mask, observe, standard_interventions, GenerationPhase, TriggerState};
