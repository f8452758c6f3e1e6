//! Generation and classification records, plus the hashed line format they
//! are persisted in.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sampler::SuppressionMask;
use crate::types::TokenId;

/// One generation: everything needed to reproduce, audit, and classify it.
///
/// `timing` is measured wall-clock time and is not serialized: persisted
/// records must be byte-identical across reruns of the same config, so
/// timings go to a sidecar file instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub probe_id: String,
    pub dataset: String,
    pub intervention: String,
    pub prompt: String,
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub cot_text: String,
    pub answer_text: String,
    pub mask_log: Vec<SuppressionMask>,
    pub split_anomaly: Option<String>,
    pub seed: u64,
    pub engine: String,
    pub config_hash: String,
    pub error: Option<String>,
    #[serde(skip)]
    pub timing: Duration,
}

impl GenerationRecord {
    /// Stream contains `first` immediately followed by `second`.
    pub fn contains_bigram(&self, first: TokenId, second: TokenId) -> bool {
        self.tokens
            .windows(2)
            .any(|w| w[0] == first && w[1] == second)
    }
}

/// Reasoning-block classification labels. `RelevantCoherent`,
/// `RelevantIncoherent`, and `Irrelevant` are the classifier's vocabulary;
/// `Invalid` records an off-vocabulary reply and `Error` a failed call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CotClass {
    RelevantCoherent,
    RelevantIncoherent,
    Irrelevant,
    Error,
    Invalid,
}

impl CotClass {
    pub const ALL: [CotClass; 5] = [
        CotClass::RelevantCoherent,
        CotClass::RelevantIncoherent,
        CotClass::Irrelevant,
        CotClass::Error,
        CotClass::Invalid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            CotClass::RelevantCoherent => "relevant_coherent",
            CotClass::RelevantIncoherent => "relevant_incoherent",
            CotClass::Irrelevant => "irrelevant",
            CotClass::Error => "error",
            CotClass::Invalid => "invalid",
        }
    }

    /// Normalizes raw classifier output (trim + lowercase) and maps anything
    /// outside the closed label set to `Invalid`.
    pub fn parse_normalized(raw: &str) -> CotClass {
        match raw.trim().to_lowercase().as_str() {
            "relevant_coherent" => CotClass::RelevantCoherent,
            "relevant_incoherent" => CotClass::RelevantIncoherent,
            "irrelevant" => CotClass::Irrelevant,
            _ => CotClass::Invalid,
        }
    }
}

/// Final-response classification labels, verbatim from the classifier
/// instructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerClass {
    Answered,
    Refusal,
    EvasivePropaganda,
    FailureEmpty,
    FailureIrrelevant,
    Error,
    Invalid,
}

impl AnswerClass {
    pub const ALL: [AnswerClass; 7] = [
        AnswerClass::Answered,
        AnswerClass::Refusal,
        AnswerClass::EvasivePropaganda,
        AnswerClass::FailureEmpty,
        AnswerClass::FailureIrrelevant,
        AnswerClass::Error,
        AnswerClass::Invalid,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AnswerClass::Answered => "answered",
            AnswerClass::Refusal => "refusal",
            AnswerClass::EvasivePropaganda => "evasive_propaganda",
            AnswerClass::FailureEmpty => "failure_empty",
            AnswerClass::FailureIrrelevant => "failure_irrelevant",
            AnswerClass::Error => "error",
            AnswerClass::Invalid => "invalid",
        }
    }

    pub fn parse_normalized(raw: &str) -> AnswerClass {
        match raw.trim().to_lowercase().as_str() {
            "answered" => AnswerClass::Answered,
            "refusal" => AnswerClass::Refusal,
            "evasive_propaganda" => AnswerClass::EvasivePropaganda,
            "failure_empty" => AnswerClass::FailureEmpty,
            "failure_irrelevant" => AnswerClass::FailureIrrelevant,
            "error" => AnswerClass::Error,
            "invalid" => AnswerClass::Invalid,
            _ => AnswerClass::Invalid,
        }
    }
}

/// Classification outcome for one generation. Carries the generation's
/// content hash so results can always be traced back to the exact record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedResult {
    pub probe_id: String,
    pub dataset: String,
    pub intervention: String,
    pub cot_class: CotClass,
    pub answer_class: AnswerClass,
    pub generation_hash: String,
}

/// Hex SHA-256 of a serialized record, as stored next to it on disk.
pub fn content_hash(record_json: &str) -> String {
    hex::encode(Sha256::digest(record_json.as_bytes()))
}

/// Wraps a record for persistence as one JSONL line:
/// `{"sha256":"...","record":{...}}` where the hash covers the exact bytes
/// of the `record` value.
pub fn to_hashed_line<T: Serialize>(record: &T) -> Result<String> {
    let record_json = serde_json::to_string(record)?;
    let hash = content_hash(&record_json);
    Ok(format!(
        "{{\"sha256\":\"{hash}\",\"record\":{record_json}}}"
    ))
}

#[derive(Deserialize)]
struct HashedLine<'a> {
    sha256: String,
    #[serde(borrow)]
    record: &'a serde_json::value::RawValue,
}

/// Parses a persisted line, verifying the stored hash against the raw bytes
/// of the record. `describe` names the record in integrity errors.
pub fn from_hashed_line<T: for<'de> Deserialize<'de>>(
    line: &str,
    describe: impl Fn(&T) -> String,
) -> Result<T> {
    let parsed: HashedLine<'_> = serde_json::from_str(line).map_err(|e| Error::Integrity {
        record_id: "<unparsed>".to_string(),
        reason: format!("line is not a hashed record: {e}"),
    })?;
    let raw = parsed.record.get();
    let record: T = serde_json::from_str(raw).map_err(|e| Error::Integrity {
        record_id: "<unparsed>".to_string(),
        reason: format!("record does not parse: {e}"),
    })?;
    let actual = content_hash(raw);
    if actual != parsed.sha256 {
        return Err(Error::Integrity {
            record_id: describe(&record),
            reason: format!(
                "hash mismatch: stored {}, computed {}",
                parsed.sha256, actual
            ),
        });
    }
    Ok(record)
}
