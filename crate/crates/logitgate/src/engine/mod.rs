//! Generation backends and the shared step loop that applies positional
//! suppression.
//!
//! Two backends ship with the crate: [`toy::ToyEngine`], a scripted local
//! model used for verification, and [`remote::RemoteEngine`], which drives
//! an OpenAI-compatible completion server one token at a time, re-issuing
//! the current suppression mask as a logit bias on every request.
//! [`mock::MockServer`] is a toy-model-backed HTTP server for tests and
//! examples.

pub mod mock;
pub mod remote;
pub mod toy;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::split::split_cot;
use crate::record::GenerationRecord;
use crate::sampler::SuppressionMask;
use crate::trigger::{current_mask, observe, TriggerState};
use crate::types::{Intervention, SamplerConfig, SpecialTokenMap, TokenId, TokenSpec};

/// One emitted token plus its textual form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emission {
    pub token: TokenId,
    pub text: String,
}

/// A generation backend. A single session is strictly sequential; separate
/// sessions are independent and may run concurrently.
pub trait Engine: Send + Sync {
    /// Stable identity string recorded in provenance.
    fn identity(&self) -> String;

    fn specials(&self) -> &SpecialTokenMap;

    /// Vocabulary size when the backend knows it (local backends do,
    /// remote ones may not).
    fn vocab_size(&self) -> Option<usize>;

    /// Resolves a configured token reference (id or text) to a concrete id.
    fn resolve_token(&self, spec: &TokenSpec) -> Result<TokenId>;

    /// Fail-fast environment check run before any generation; backends with
    /// credential requirements enforce them here.
    fn preflight(&self) -> Result<()> {
        Ok(())
    }

    /// Opens a generation session for one prompt.
    fn begin(&self, prompt: &str, config: &SamplerConfig) -> Result<Box<dyn StepSession + '_>>;
}

/// An open session: each call emits exactly one token under the given mask.
pub trait StepSession {
    fn step(&mut self, mask: &SuppressionMask) -> Result<Emission>;
}

/// Runs one full generation: observe -> mask -> step, until EOS or
/// `max_steps`. Records every emitted token and the mask that was active
/// when it was sampled.
pub fn generate(
    engine: &dyn Engine,
    prompt: &str,
    intervention: &Intervention,
    config: &SamplerConfig,
    max_steps: usize,
) -> Result<GenerationRecord> {
    if max_steps < 1 {
        return Err(Error::invalid_field("max_steps", "must be >= 1"));
    }
    let started = Instant::now();
    let specials = engine.specials().clone();
    let mut session = engine.begin(prompt, config)?;
    let mut state = TriggerState::new(intervention);
    let mut tokens: Vec<TokenId> = Vec::new();
    let mut mask_log: Vec<SuppressionMask> = Vec::new();
    let mut text = String::new();

    for _ in 0..max_steps {
        let mask = current_mask(&state);
        let emission = session.step(&mask)?;
        tokens.push(emission.token);
        text.push_str(&emission.text);
        mask_log.push(mask);
        state = observe(&state, emission.token, intervention, &specials);
        if state.is_terminated() {
            break;
        }
    }

    let split = split_cot(&text, &specials);
    Ok(GenerationRecord {
        probe_id: String::new(),
        dataset: String::new(),
        intervention: intervention.name.clone(),
        prompt: prompt.to_string(),
        tokens,
        text,
        cot_text: split.cot_text,
        answer_text: split.answer_text,
        mask_log,
        split_anomaly: split.anomaly.map(|a| format!("{a:?}")),
        seed: config.seed,
        engine: engine.identity(),
        config_hash: String::new(),
        error: None,
        timing: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::toy::ToyEngine;
    use super::*;
    use crate::trigger::standard_interventions;

    #[test]
    fn max_steps_one_emits_exactly_one_token() {
        let engine = ToyEngine::canonical();
        let config = SamplerConfig::identity(0);
        let record = generate(&engine, "q", &Intervention::baseline(), &config, 1).unwrap();
        assert_eq!(record.tokens.len(), 1);
        assert_eq!(record.tokens[0], TokenId(0)); // scripted first token
        assert_eq!(record.mask_log.len(), 1);
    }

    #[test]
    fn generation_stops_at_eos_and_includes_it() {
        let engine = ToyEngine::canonical();
        let config = SamplerConfig::identity(3);
        let record = generate(&engine, "q", &Intervention::baseline(), &config, 64).unwrap();
        let eos = engine.specials().eos;
        assert_eq!(*record.tokens.last().unwrap(), eos);
        assert_eq!(record.tokens.iter().filter(|t| **t == eos).count(), 1);
    }

    #[test]
    fn record_text_matches_detokenized_stream() {
        let engine = ToyEngine::canonical();
        for seed in 0..20 {
            let config = SamplerConfig::identity(seed);
            let record = generate(&engine, "q", &Intervention::baseline(), &config, 64).unwrap();
            assert_eq!(record.text, engine.spec().detokenize(&record.tokens));
        }
    }

    #[test]
    fn fixed_seed_is_bit_reproducible_end_to_end() {
        let engine = ToyEngine::canonical();
        let arms = standard_interventions(engine.specials());
        for arm in &arms {
            let config = SamplerConfig::identity(41);
            let a = generate(&engine, "q", arm, &config, 64).unwrap();
            let b = generate(&engine, "q", arm, &config, 64).unwrap();
            assert_eq!(a.tokens, b.tokens);
            assert_eq!(a.text, b.text);
            assert_eq!(a.mask_log, b.mask_log);
        }
    }

    #[test]
    fn suppress_nn_blocks_the_refusal_branch() {
        let engine = ToyEngine::canonical();
        let arms = standard_interventions(engine.specials());
        let sp = engine.specials().clone();
        for seed in 0..100 {
            let config = SamplerConfig::identity(seed);
            let record = generate(&engine, "q", &arms[1], &config, 64).unwrap();
            assert!(!record.contains_bigram(sp.think_open, sp.double_newline));
            // Masked branch has probability zero, so the reasoning script ran.
            assert!(record.cot_text.contains("reason"));
        }
    }

    #[test]
    fn mask_log_aligns_with_rule_activations() {
        let engine = ToyEngine::canonical();
        let arms = standard_interventions(engine.specials());
        let sp = engine.specials().clone();
        let config = SamplerConfig::identity(5);
        let record = generate(&engine, "q", &arms[2], &config, 64).unwrap();
        // Step 0 samples the first token: nothing active yet.
        assert!(record.mask_log[0].is_empty());
        // The token after think-open was sampled under the nn mask.
        let open_at = record
            .tokens
            .iter()
            .position(|t| *t == sp.think_open)
            .unwrap();
        assert_eq!(
            record.mask_log[open_at + 1].get(sp.double_newline),
            Some(crate::sampler::SUPPRESS_SENTINEL)
        );
        // The token after think-close was sampled under the eos mask.
        let close_at = record
            .tokens
            .iter()
            .position(|t| *t == sp.think_close)
            .unwrap();
        assert_eq!(
            record.mask_log[close_at + 1].get(sp.eos),
            Some(crate::sampler::SUPPRESS_SENTINEL)
        );
    }
}
