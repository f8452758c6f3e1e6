//! Scripted probabilistic toy model for offline verification.
//!
//! The model is a small Markov chain over token emissions: each state owns a
//! next-token distribution, and emitting a token moves to that transition's
//! next state. The canonical spec encodes the refusal-branching structure
//! this crate exists to intervene on: right after the think-open token the
//! model emits a double newline with probability 0.8 and heads into a short
//! refusal script; otherwise it walks a six-token reasoning script and then
//! either answers or stops immediately after closing the think block.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Emission, Engine, StepSession};
use crate::error::{Error, Result};
use crate::sampler::{sample, LogitVector, SuppressionMask, SUPPRESS_SENTINEL};
use crate::types::{validate_special_map, SamplerConfig, SpecialTokenMap, TokenId, TokenSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTransition {
    pub token: TokenId,
    pub probability: f64,
    pub next: String,
}

/// Full specification of a toy model: vocabulary, transition table, special
/// tokens, and which states belong to the refusal and answer paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawToyModelSpec")]
pub struct ToyModelSpec {
    pub vocab: Vec<String>,
    pub specials: SpecialTokenMap,
    pub start_state: String,
    pub transitions: BTreeMap<String, Vec<ToyTransition>>,
    pub refusal_states: BTreeSet<String>,
    pub answer_states: BTreeSet<String>,
    pub name: String,
}

#[derive(Deserialize)]
struct RawToyModelSpec {
    vocab: Vec<String>,
    specials: SpecialTokenMap,
    start_state: String,
    transitions: BTreeMap<String, Vec<ToyTransition>>,
    #[serde(default)]
    refusal_states: BTreeSet<String>,
    #[serde(default)]
    answer_states: BTreeSet<String>,
    name: String,
}

impl TryFrom<RawToyModelSpec> for ToyModelSpec {
    type Error = Error;

    fn try_from(raw: RawToyModelSpec) -> Result<Self> {
        ToyModelSpec::new(
            raw.name,
            raw.vocab,
            raw.specials,
            raw.start_state,
            raw.transitions,
            raw.refusal_states,
            raw.answer_states,
        )
    }
}

impl ToyModelSpec {
    pub fn new(
        name: impl Into<String>,
        vocab: Vec<String>,
        specials: SpecialTokenMap,
        start_state: impl Into<String>,
        transitions: BTreeMap<String, Vec<ToyTransition>>,
        refusal_states: BTreeSet<String>,
        answer_states: BTreeSet<String>,
    ) -> Result<Self> {
        let spec = ToyModelSpec {
            vocab,
            specials,
            start_state: start_state.into(),
            transitions,
            refusal_states,
            answer_states,
            name: name.into(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() {
            return Err(Error::invalid_field("vocab", "empty vocabulary"));
        }
        let specials = validate_special_map(&self.specials, self.vocab.len())?;
        for (name, id) in specials.fields() {
            let text = match name {
                "think_open" => specials.think_open_text.as_deref(),
                "think_close" => specials.think_close_text.as_deref(),
                "double_newline" => specials.double_newline_text.as_deref(),
                _ => specials.eos_text.as_deref(),
            };
            if let Some(text) = text {
                if self.vocab[id.index()] != text {
                    return Err(Error::invalid_field(
                        name,
                        format!(
                            "textual form {:?} does not round-trip: vocab[{}] is {:?}",
                            text,
                            id,
                            self.vocab[id.index()]
                        ),
                    ));
                }
            }
        }
        if !self.transitions.contains_key(&self.start_state) {
            return Err(Error::invalid_field(
                "start_state",
                format!("state {:?} has no transitions", self.start_state),
            ));
        }
        for (state, outgoing) in &self.transitions {
            let mut sum = 0.0;
            let mut seen = BTreeSet::new();
            for t in outgoing {
                if t.token.index() >= self.vocab.len() {
                    return Err(Error::TokenOutOfRange {
                        id: t.token.0,
                        vocab_size: self.vocab.len(),
                    });
                }
                if !(t.probability.is_finite() && t.probability >= 0.0) {
                    return Err(Error::invalid_field(
                        "transitions",
                        format!("state {state:?}: invalid probability {}", t.probability),
                    ));
                }
                if !seen.insert(t.token) {
                    return Err(Error::invalid_field(
                        "transitions",
                        format!("state {state:?}: duplicate token {}", t.token),
                    ));
                }
                sum += t.probability;
                // A non-EOS emission must land in a state that can continue.
                if t.token != self.specials.eos {
                    let next_has_moves =
                        self.transitions.get(&t.next).is_some_and(|v| !v.is_empty());
                    if !next_has_moves {
                        return Err(Error::invalid_field(
                            "transitions",
                            format!(
                                "state {state:?} emits non-eos token {} into dead-end state {:?}",
                                t.token, t.next
                            ),
                        ));
                    }
                }
            }
            if !outgoing.is_empty() && (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid_field(
                    "transitions",
                    format!("state {state:?}: probabilities sum to {sum}, expected 1"),
                ));
            }
        }
        for (field, labels) in [
            ("refusal_states", &self.refusal_states),
            ("answer_states", &self.answer_states),
        ] {
            for label in labels {
                if !self.transitions.contains_key(label) {
                    return Err(Error::invalid_field(
                        field,
                        format!("unknown state label {label:?}"),
                    ));
                }
            }
        }
        // Every state reachable from the start must keep the walk alive
        // until EOS.
        let mut queue = VecDeque::from([self.start_state.clone()]);
        let mut visited = BTreeSet::new();
        while let Some(state) = queue.pop_front() {
            if !visited.insert(state.clone()) {
                continue;
            }
            for t in self.transitions.get(&state).into_iter().flatten() {
                if t.token != self.specials.eos && !visited.contains(&t.next) {
                    queue.push_back(t.next.clone());
                }
            }
        }
        for state in &visited {
            let can_emit = self
                .transitions
                .get(state)
                .is_some_and(|v| v.iter().any(|t| t.probability > 0.0));
            if !can_emit {
                return Err(Error::invalid_field(
                    "transitions",
                    format!("reachable state {state:?} cannot emit any token"),
                ));
            }
        }
        Ok(())
    }

    /// The canonical verification model: 12-token vocabulary, a 0.8
    /// refusal-branch probability after think-open, a 3-token refusal
    /// script, a 6-token reasoning script, and an answer/EOS branch after
    /// the think block closes.
    pub fn canonical() -> Self {
        Self::with_refusal_probability(0.8).expect("canonical spec is statically valid")
    }

    /// The canonical structure with a custom refusal-branch probability.
    pub fn with_refusal_probability(p: f64) -> Result<Self> {
        if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
            return Err(Error::invalid_field(
                "refusal_probability",
                "must be in [0, 1]",
            ));
        }
        let vocab: Vec<String> = [
            "<think>",
            "\n\n",
            "</think>",
            "<|eos|>",
            " I",
            " cannot",
            " help",
            " reason",
            " step",
            " therefore",
            " answer",
            " done",
        ]
        .into_iter()
        .map(str::to_string)
        .collect();
        let specials = SpecialTokenMap::new(TokenId(0), TokenId(2), TokenId(1), TokenId(3))
            .expect("distinct ids")
            .with_texts("<think>", "</think>", "\n\n", "<|eos|>");

        let t = |token: u32, probability: f64, next: &str| ToyTransition {
            token: TokenId(token),
            probability,
            next: next.to_string(),
        };
        let mut transitions = BTreeMap::new();
        transitions.insert("start".into(), vec![t(0, 1.0, "branch")]);
        transitions.insert(
            "branch".into(),
            vec![t(1, p, "refusal-close"), t(7, 1.0 - p, "cot-1")],
        );
        // Refusal path: close the empty think block, say the script, stop.
        transitions.insert("refusal-close".into(), vec![t(2, 1.0, "refusal-say-1")]);
        transitions.insert("refusal-say-1".into(), vec![t(4, 1.0, "refusal-say-2")]);
        transitions.insert("refusal-say-2".into(), vec![t(5, 1.0, "refusal-say-3")]);
        transitions.insert("refusal-say-3".into(), vec![t(6, 1.0, "refusal-finish")]);
        transitions.insert("refusal-finish".into(), vec![t(3, 1.0, "end")]);
        // Reasoning path: six scripted tokens, then close the block.
        transitions.insert("cot-1".into(), vec![t(8, 1.0, "cot-2")]);
        transitions.insert("cot-2".into(), vec![t(8, 1.0, "cot-3")]);
        transitions.insert("cot-3".into(), vec![t(7, 1.0, "cot-4")]);
        transitions.insert("cot-4".into(), vec![t(8, 1.0, "cot-5")]);
        transitions.insert("cot-5".into(), vec![t(9, 1.0, "cot-close")]);
        transitions.insert("cot-close".into(), vec![t(2, 1.0, "post")]);
        // After closing: answer, or end immediately.
        transitions.insert("post".into(), vec![t(10, 0.7, "post-2"), t(3, 0.3, "end")]);
        transitions.insert("post-2".into(), vec![t(11, 1.0, "post-finish")]);
        transitions.insert("post-finish".into(), vec![t(3, 1.0, "end")]);
        transitions.insert("end".into(), vec![]);

        let refusal_states: BTreeSet<String> = [
            "refusal-close",
            "refusal-say-1",
            "refusal-say-2",
            "refusal-say-3",
            "refusal-finish",
        ]
        .into_iter()
        .map(str::to_string)
        .collect();
        let answer_states: BTreeSet<String> = [
            "cot-1",
            "cot-2",
            "cot-3",
            "cot-4",
            "cot-5",
            "cot-close",
            "post",
            "post-2",
            "post-finish",
        ]
        .into_iter()
        .map(str::to_string)
        .collect();

        ToyModelSpec::new(
            format!("canonical-p{p}"),
            vocab,
            specials,
            "start",
            transitions,
            refusal_states,
            answer_states,
        )
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_text(&self, token: TokenId) -> Option<&str> {
        self.vocab.get(token.index()).map(String::as_str)
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        tokens.iter().filter_map(|t| self.token_text(*t)).collect()
    }
}

/// Log-probability logits for one state: `ln p` for each outgoing token,
/// the sentinel everywhere else (including zero-probability transitions).
pub fn toy_next_logits(spec: &ToyModelSpec, state: &str) -> Result<LogitVector> {
    let outgoing = spec
        .transitions
        .get(state)
        .ok_or_else(|| Error::UnknownState(state.to_string()))?;
    let mut values = vec![SUPPRESS_SENTINEL; spec.vocab_size()];
    for t in outgoing {
        if t.probability > 0.0 {
            values[t.token.index()] = t.probability.ln();
        }
    }
    LogitVector::new(values)
}

/// Local engine over a [`ToyModelSpec`], running the full sampling pipeline
/// in-process.
#[derive(Debug, Clone)]
pub struct ToyEngine {
    spec: ToyModelSpec,
}

impl ToyEngine {
    pub fn new(spec: ToyModelSpec) -> Self {
        ToyEngine { spec }
    }

    pub fn canonical() -> Self {
        ToyEngine::new(ToyModelSpec::canonical())
    }

    pub fn spec(&self) -> &ToyModelSpec {
        &self.spec
    }
}

impl Engine for ToyEngine {
    fn identity(&self) -> String {
        format!("toy:{}", self.spec.name)
    }

    fn specials(&self) -> &SpecialTokenMap {
        &self.spec.specials
    }

    fn vocab_size(&self) -> Option<usize> {
        Some(self.spec.vocab_size())
    }

    fn resolve_token(&self, spec: &TokenSpec) -> Result<TokenId> {
        match spec {
            TokenSpec::Id(id) => {
                if (*id as usize) < self.spec.vocab_size() {
                    Ok(TokenId(*id))
                } else {
                    Err(Error::TokenOutOfRange {
                        id: *id,
                        vocab_size: self.spec.vocab_size(),
                    })
                }
            }
            TokenSpec::Text(text) => {
                let hits: Vec<usize> = self
                    .spec
                    .vocab
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| *t == text)
                    .map(|(i, _)| i)
                    .collect();
                match hits.as_slice() {
                    [i] => Ok(TokenId(*i as u32)),
                    [] => Err(Error::TokenResolution {
                        spec: text.clone(),
                        reason: "text does not map to a single vocabulary token".to_string(),
                    }),
                    _ => Err(Error::TokenResolution {
                        spec: text.clone(),
                        reason: "text is ambiguous in the vocabulary".to_string(),
                    }),
                }
            }
        }
    }

    fn begin(&self, _prompt: &str, config: &SamplerConfig) -> Result<Box<dyn StepSession + '_>> {
        Ok(Box::new(ToySession {
            spec: &self.spec,
            state: self.spec.start_state.clone(),
            history: Vec::new(),
            config: config.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }))
    }
}

struct ToySession<'a> {
    spec: &'a ToyModelSpec,
    state: String,
    history: Vec<TokenId>,
    config: SamplerConfig,
    rng: ChaCha8Rng,
}

impl StepSession for ToySession<'_> {
    fn step(&mut self, mask: &SuppressionMask) -> Result<Emission> {
        let logits = toy_next_logits(self.spec, &self.state)?;
        let token = sample(&logits, &self.config, &self.history, mask, &mut self.rng)?;
        let next = self
            .spec
            .transitions
            .get(&self.state)
            .and_then(|v| v.iter().find(|t| t.token == token))
            .map(|t| t.next.clone())
            .ok_or_else(|| Error::UnknownState(format!("{}->{}", self.state, token)))?;
        self.state = next;
        self.history.push(token);
        Ok(Emission {
            token,
            text: self.spec.token_text(token).unwrap_or_default().to_string(),
        })
    }
}
