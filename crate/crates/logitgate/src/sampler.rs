//! Logit-to-token pipeline: repetition penalty, temperature, suppression
//! masking, softmax, nucleus filtering, and the categorical draw.
//!
//! Pipeline order is repetition penalty -> temperature -> mask -> softmax ->
//! top-p -> draw. Masking before top-p guarantees a suppressed token can
//! never ride into the nucleus.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{SamplerConfig, TokenId};

/// Stand-in for negative infinity: the most negative finite f64. Keeping the
/// sentinel finite means downstream arithmetic never produces NaN, while
/// softmax still assigns sentinel entries probability exactly zero.
pub const SUPPRESS_SENTINEL: f64 = f64::MIN;

/// One score per vocabulary entry. Entries are finite; a value equal to
/// [`SUPPRESS_SENTINEL`] marks a token as unsampleable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LogitVector {
    values: Vec<f64>,
}

impl TryFrom<Vec<f64>> for LogitVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        LogitVector::new(values)
    }
}

impl From<LogitVector> for Vec<f64> {
    fn from(v: LogitVector) -> Vec<f64> {
        v.values
    }
}

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid_field("values", "logit vector is empty"));
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid_field(
                    "values",
                    format!("non-finite logit at index {i}"),
                ));
            }
        }
        Ok(LogitVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, token: TokenId) -> Option<f64> {
        self.values.get(token.index()).copied()
    }
}

/// Per-token additive penalties. The sentinel means hard suppression; any
/// finite negative value is a decayed (soft) penalty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<TokenId, f64>", into = "BTreeMap<TokenId, f64>")]
pub struct SuppressionMask {
    entries: BTreeMap<TokenId, f64>,
}

impl TryFrom<BTreeMap<TokenId, f64>> for SuppressionMask {
    type Error = Error;

    fn try_from(entries: BTreeMap<TokenId, f64>) -> Result<Self> {
        let mut mask = SuppressionMask::empty();
        for (token, penalty) in entries {
            mask.insert(token, penalty)?;
        }
        Ok(mask)
    }
}

impl From<SuppressionMask> for BTreeMap<TokenId, f64> {
    fn from(m: SuppressionMask) -> BTreeMap<TokenId, f64> {
        m.entries
    }
}

impl SuppressionMask {
    pub fn empty() -> Self {
        SuppressionMask {
            entries: BTreeMap::new(),
        }
    }

    /// Hard suppression of every listed token.
    pub fn hard(tokens: impl IntoIterator<Item = TokenId>) -> Self {
        SuppressionMask {
            entries: tokens.into_iter().map(|t| (t, SUPPRESS_SENTINEL)).collect(),
        }
    }

    /// Adds `penalty` for `token`, keeping the most severe penalty when the
    /// token is already present.
    pub fn insert(&mut self, token: TokenId, penalty: f64) -> Result<()> {
        if penalty.is_nan() || penalty > 0.0 {
            return Err(Error::invalid_field(
                "penalty",
                format!("penalty for token {token} must be <= 0"),
            ));
        }
        self.entries
            .entry(token)
            .and_modify(|p| *p = p.min(penalty))
            .or_insert(penalty);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TokenId, f64)> + '_ {
        self.entries.iter().map(|(t, p)| (*t, *p))
    }

    pub fn get(&self, token: TokenId) -> Option<f64> {
        self.entries.get(&token).copied()
    }
}

/// Divides positive logits of history tokens by `penalty` and multiplies
/// non-positive ones, leaving every other entry untouched. A token is
/// penalized once no matter how often it appears in the history. Sentinel
/// entries stay sentinel.
pub fn apply_repetition_penalty(
    logits: &LogitVector,
    history: &[TokenId],
    penalty: f64,
) -> Result<LogitVector> {
    if !(penalty.is_finite() && penalty >= 1.0) {
        return Err(Error::invalid_field("penalty", "must be >= 1"));
    }
    let mut values = logits.values.clone();
    let distinct: std::collections::BTreeSet<TokenId> = history.iter().copied().collect();
    for token in distinct {
        let Some(v) = values.get_mut(token.index()) else {
            return Err(Error::TokenOutOfRange {
                id: token.0,
                vocab_size: logits.len(),
            });
        };
        if *v == SUPPRESS_SENTINEL {
            continue;
        }
        if *v > 0.0 {
            *v /= penalty;
        } else {
            *v *= penalty;
        }
    }
    LogitVector::new(values)
}

/// Divides every entry by `temperature`; sentinel entries stay sentinel.
pub fn apply_temperature(logits: &LogitVector, temperature: f64) -> Result<LogitVector> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid_field("temperature", "must be > 0"));
    }
    let values = logits
        .values
        .iter()
        .map(|&v| {
            if v == SUPPRESS_SENTINEL {
                v
            } else {
                v / temperature
            }
        })
        .collect();
    LogitVector::new(values)
}

/// Applies a suppression mask: sentinel penalties pin the entry to the
/// sentinel, finite penalties are added.
pub fn apply_mask(logits: &LogitVector, mask: &SuppressionMask) -> Result<LogitVector> {
    let mut values = logits.values.clone();
    for (token, penalty) in mask.iter() {
        let Some(v) = values.get_mut(token.index()) else {
            return Err(Error::TokenOutOfRange {
                id: token.0,
                vocab_size: logits.len(),
            });
        };
        if penalty == SUPPRESS_SENTINEL {
            *v = SUPPRESS_SENTINEL;
        } else if *v != SUPPRESS_SENTINEL {
            *v += penalty;
            if *v < SUPPRESS_SENTINEL {
                *v = SUPPRESS_SENTINEL;
            }
        }
    }
    LogitVector::new(values)
}

/// Numerically stable softmax. Sentinel entries get probability exactly
/// zero, not approximately.
pub fn softmax(logits: &LogitVector) -> Result<Vec<f64>> {
    let max = logits
        .values
        .iter()
        .copied()
        .filter(|&v| v != SUPPRESS_SENTINEL)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    let mut probs: Vec<f64> = logits
        .values
        .iter()
        .map(|&v| {
            if v == SUPPRESS_SENTINEL {
                0.0
            } else {
                (v - max).exp()
            }
        })
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    Ok(probs)
}

/// Keeps the minimal prefix of tokens, in descending-probability order, whose
/// cumulative probability reaches `top_p`; zeroes the rest and renormalizes.
/// Ties are broken by ascending token id so runs are bit-reproducible.
pub fn top_p_filter(probs: &[f64], top_p: f64) -> Result<Vec<f64>> {
    if !(top_p.is_finite() && top_p > 0.0 && top_p <= 1.0) {
        return Err(Error::invalid_field("top_p", "must be in (0, 1]"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid_field(
            "probs",
            format!("probabilities sum to {sum}, expected 1 within 1e-9"),
        ));
    }
    if top_p == 1.0 {
        return Ok(probs.to_vec());
    }

    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .unwrap()
            .then_with(|| a.cmp(&b))
    });

    let mut kept = vec![false; probs.len()];
    let mut cumulative = 0.0;
    let mut kept_mass = 0.0;
    for &i in &order {
        kept[i] = true;
        cumulative += probs[i];
        kept_mass += probs[i];
        if cumulative >= top_p {
            break;
        }
    }

    let out = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| if kept[i] { p / kept_mass } else { 0.0 })
        .collect();
    Ok(out)
}

/// Runs the full pipeline over `logits` and draws one token.
///
/// Deterministic given the rng state and inputs: one uniform draw per call,
/// resolved by inverse CDF over ascending token ids.
pub fn sample(
    logits: &LogitVector,
    config: &SamplerConfig,
    history: &[TokenId],
    mask: &SuppressionMask,
    rng: &mut ChaCha8Rng,
) -> Result<TokenId> {
    let penalized = apply_repetition_penalty(logits, history, config.repetition_penalty)?;
    let scaled = apply_temperature(&penalized, config.temperature)?;
    let masked = apply_mask(&scaled, mask)?;
    if masked.values.iter().all(|&v| v == SUPPRESS_SENTINEL) {
        return Err(Error::EmptySupport);
    }
    let probs = softmax(&masked)?;
    let filtered = top_p_filter(&probs, config.top_p)?;
    draw(&filtered, rng)
}

/// Inverse-CDF draw over ascending token ids; zero-probability entries can
/// never be selected.
fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> Result<TokenId> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = Some(i);
        if u < acc {
            return Ok(TokenId(i as u32));
        }
    }
    // Rounding can leave acc marginally below 1; fall back to the last
    // token that had any mass.
    last_positive
        .map(|i| TokenId(i as u32))
        .ok_or(Error::EmptySupport)
}
