//! Domain vocabulary shared by every module: token ids, the special-token
//! map, trigger rules, interventions, and sampler settings.
//!
//! Every type here validates its invariants at construction. Deserialized
//! values go through the same checks, so a config file cannot smuggle in an
//! invalid value.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index into a backend vocabulary.
///
/// The id is only meaningful relative to the backend that owns it; range
/// checks happen wherever a vocabulary size is known.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    /// Placeholder id for remote tokens whose identity the server did not
    /// report and whose text matches no configured special. Such tokens
    /// only ever advance counters; they never match trigger patterns.
    pub const OPAQUE: TokenId = TokenId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for TokenId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A token reference in configuration: either a raw backend id or a textual
/// form that is resolved to an id once, when the backend is attached.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TokenSpec {
    Id(u32),
    Text(String),
}

/// The four structural tokens the trigger engine cares about, plus their
/// optional textual forms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSpecialTokenMap")]
pub struct SpecialTokenMap {
    pub think_open: TokenId,
    pub think_close: TokenId,
    pub double_newline: TokenId,
    pub eos: TokenId,
    pub think_open_text: Option<String>,
    pub think_close_text: Option<String>,
    pub double_newline_text: Option<String>,
    pub eos_text: Option<String>,
}

#[derive(Deserialize)]
struct RawSpecialTokenMap {
    think_open: TokenId,
    think_close: TokenId,
    double_newline: TokenId,
    eos: TokenId,
    #[serde(default)]
    think_open_text: Option<String>,
    #[serde(default)]
    think_close_text: Option<String>,
    #[serde(default)]
    double_newline_text: Option<String>,
    #[serde(default)]
    eos_text: Option<String>,
}

impl TryFrom<RawSpecialTokenMap> for SpecialTokenMap {
    type Error = Error;

    fn try_from(raw: RawSpecialTokenMap) -> Result<Self> {
        let map = SpecialTokenMap {
            think_open: raw.think_open,
            think_close: raw.think_close,
            double_newline: raw.double_newline,
            eos: raw.eos,
            think_open_text: raw.think_open_text,
            think_close_text: raw.think_close_text,
            double_newline_text: raw.double_newline_text,
            eos_text: raw.eos_text,
        };
        map.check_distinct()?;
        Ok(map)
    }
}

impl SpecialTokenMap {
    pub fn new(
        think_open: TokenId,
        think_close: TokenId,
        double_newline: TokenId,
        eos: TokenId,
    ) -> Result<Self> {
        let map = SpecialTokenMap {
            think_open,
            think_close,
            double_newline,
            eos,
            think_open_text: None,
            think_close_text: None,
            double_newline_text: None,
            eos_text: None,
        };
        map.check_distinct()?;
        Ok(map)
    }

    pub fn with_texts(
        mut self,
        think_open: impl Into<String>,
        think_close: impl Into<String>,
        double_newline: impl Into<String>,
        eos: impl Into<String>,
    ) -> Self {
        self.think_open_text = Some(think_open.into());
        self.think_close_text = Some(think_close.into());
        self.double_newline_text = Some(double_newline.into());
        self.eos_text = Some(eos.into());
        self
    }

    /// Named (field, id) pairs, in declaration order.
    pub fn fields(&self) -> [(&'static str, TokenId); 4] {
        [
            ("think_open", self.think_open),
            ("think_close", self.think_close),
            ("double_newline", self.double_newline),
            ("eos", self.eos),
        ]
    }

    /// Textual form of the think-open marker, defaulting to `<think>`.
    pub fn think_open_marker(&self) -> &str {
        self.think_open_text.as_deref().unwrap_or("<think>")
    }

    /// Textual form of the think-close marker, defaulting to `</think>`.
    pub fn think_close_marker(&self) -> &str {
        self.think_close_text.as_deref().unwrap_or("</think>")
    }

    fn check_distinct(&self) -> Result<()> {
        let fields = self.fields();
        for i in 0..fields.len() {
            for j in (i + 1)..fields.len() {
                if fields[i].1 == fields[j].1 {
                    return Err(Error::invalid_field(
                        format!("{}/{}", fields[i].0, fields[j].0),
                        format!("duplicate token id {}", fields[i].1),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Checks a special-token map against a concrete vocabulary size and
/// returns it unchanged if all four ids are distinct and in range.
pub fn validate_special_map(map: &SpecialTokenMap, vocab_size: usize) -> Result<SpecialTokenMap> {
    map.check_distinct()?;
    for (name, id) in map.fields() {
        if id.index() >= vocab_size {
            return Err(Error::invalid_field(
                name,
                format!("token id {} out of range (vocab size {})", id, vocab_size),
            ));
        }
    }
    Ok(map.clone())
}

/// How long a triggered rule stays active.
///
/// `Steps(n)` suppresses hard (probability exactly zero) for `n` generation
/// steps. `Decay` applies the listed additive penalties one per step and
/// expires when the schedule runs out; magnitudes must be non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleDuration {
    Steps(u32),
    Decay(Vec<f64>),
}

impl RuleDuration {
    fn validate(&self) -> Result<()> {
        match self {
            RuleDuration::Steps(n) => {
                if *n < 1 {
                    return Err(Error::invalid_field("duration", "step count must be >= 1"));
                }
            }
            RuleDuration::Decay(schedule) => {
                if schedule.is_empty() {
                    return Err(Error::invalid_field("duration", "decay schedule is empty"));
                }
                let mut prev_mag = f64::INFINITY;
                for (i, &p) in schedule.iter().enumerate() {
                    if !p.is_finite() {
                        return Err(Error::invalid_field(
                            "duration",
                            format!("decay penalty at position {i} is not finite"),
                        ));
                    }
                    if p > 0.0 {
                        return Err(Error::invalid_field(
                            "duration",
                            format!("decay penalty at position {i} is positive"),
                        ));
                    }
                    if p.abs() > prev_mag {
                        return Err(Error::invalid_field(
                            "duration",
                            format!("decay magnitudes increase at position {i}"),
                        ));
                    }
                    prev_mag = p.abs();
                }
            }
        }
        Ok(())
    }
}

/// A positional suppression rule: when the tail of the emitted stream
/// matches `trigger`, every token in `suppress` is penalized for the
/// following step(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTriggerRule")]
pub struct TriggerRule {
    pub name: String,
    pub trigger: Vec<TokenId>,
    pub suppress: BTreeSet<TokenId>,
    pub duration: RuleDuration,
}

#[derive(Deserialize)]
struct RawTriggerRule {
    name: String,
    trigger: Vec<TokenId>,
    suppress: BTreeSet<TokenId>,
    duration: RuleDuration,
}

impl TryFrom<RawTriggerRule> for TriggerRule {
    type Error = Error;

    fn try_from(raw: RawTriggerRule) -> Result<Self> {
        TriggerRule::new(raw.name, raw.trigger, raw.suppress, raw.duration)
    }
}

impl TriggerRule {
    pub fn new(
        name: impl Into<String>,
        trigger: Vec<TokenId>,
        suppress: impl IntoIterator<Item = TokenId>,
        duration: RuleDuration,
    ) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid_field("name", "rule name is empty"));
        }
        if trigger.is_empty() {
            return Err(Error::invalid_field("trigger", "trigger pattern is empty"));
        }
        let suppress: BTreeSet<TokenId> = suppress.into_iter().collect();
        if suppress.is_empty() {
            return Err(Error::invalid_field("suppress", "suppression set is empty"));
        }
        duration.validate()?;
        Ok(TriggerRule {
            name,
            trigger,
            suppress,
            duration,
        })
    }
}

/// A named set of trigger rules. The empty rule list is the valid
/// "baseline" intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntervention")]
pub struct Intervention {
    pub name: String,
    pub rules: Vec<TriggerRule>,
}

#[derive(Deserialize)]
struct RawIntervention {
    name: String,
    #[serde(default)]
    rules: Vec<TriggerRule>,
}

impl TryFrom<RawIntervention> for Intervention {
    type Error = Error;

    fn try_from(raw: RawIntervention) -> Result<Self> {
        Intervention::new(raw.name, raw.rules)
    }
}

impl Intervention {
    pub fn new(name: impl Into<String>, rules: Vec<TriggerRule>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::invalid_field("name", "intervention name is empty"));
        }
        let mut seen = BTreeSet::new();
        for rule in &rules {
            if !seen.insert(rule.name.as_str()) {
                return Err(Error::invalid_field(
                    "rules",
                    format!("duplicate rule name {:?}", rule.name),
                ));
            }
        }
        Ok(Intervention { name, rules })
    }

    /// The baseline intervention: no rules at all.
    pub fn baseline() -> Self {
        Intervention {
            name: "baseline".to_string(),
            rules: Vec::new(),
        }
    }

    /// Longest trigger pattern across all rules (0 when there are none).
    pub fn max_trigger_len(&self) -> usize {
        self.rules
            .iter()
            .map(|r| r.trigger.len())
            .max()
            .unwrap_or(0)
    }
}

/// Sampling hyperparameters for one generation session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSamplerConfig")]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub seed: u64,
    /// Whether repetition penalty should also cover prompt tokens where the
    /// backend exposes them. Defaults to generated tokens only.
    pub penalize_prompt: bool,
}

#[derive(Deserialize)]
struct RawSamplerConfig {
    temperature: f64,
    top_p: f64,
    repetition_penalty: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    penalize_prompt: bool,
}

impl TryFrom<RawSamplerConfig> for SamplerConfig {
    type Error = Error;

    fn try_from(raw: RawSamplerConfig) -> Result<Self> {
        SamplerConfig::new(raw.temperature, raw.top_p, raw.repetition_penalty, raw.seed).map(|c| {
            SamplerConfig {
                penalize_prompt: raw.penalize_prompt,
                ..c
            }
        })
    }
}

impl SamplerConfig {
    pub fn new(temperature: f64, top_p: f64, repetition_penalty: f64, seed: u64) -> Result<Self> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::invalid_field("temperature", "must be > 0"));
        }
        if !(top_p.is_finite() && top_p > 0.0 && top_p <= 1.0) {
            return Err(Error::invalid_field("top_p", "must be in (0, 1]"));
        }
        if !(repetition_penalty.is_finite() && repetition_penalty >= 1.0) {
            return Err(Error::invalid_field("repetition_penalty", "must be >= 1"));
        }
        Ok(SamplerConfig {
            temperature,
            top_p,
            repetition_penalty,
            seed,
            penalize_prompt: false,
        })
    }

    /// Identity pipeline: no temperature scaling, full nucleus, no
    /// repetition penalty. Sampling then follows the raw distribution.
    pub fn identity(seed: u64) -> Self {
        SamplerConfig {
            temperature: 1.0,
            top_p: 1.0,
            repetition_penalty: 1.0,
            seed,
            penalize_prompt: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

impl Default for SamplerConfig {
    /// Provider-recommended generation settings: temperature 0.6,
    /// top-p 0.95, repetition penalty 1.1.
    fn default() -> Self {
        SamplerConfig {
            temperature: 0.6,
            top_p: 0.95,
            repetition_penalty: 1.1,
            seed: 0,
            penalize_prompt: false,
        }
    }
}
