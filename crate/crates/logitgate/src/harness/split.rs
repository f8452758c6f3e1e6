//! Splitting generated text into its reasoning block and final answer.

use serde::{Deserialize, Serialize};

use crate::types::SpecialTokenMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAnomaly {
    /// A think-open marker with no matching close: everything after the
    /// open marker is treated as reasoning and the answer is empty.
    UnclosedThink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CotSplit {
    pub cot_text: String,
    pub answer_text: String,
    pub anomaly: Option<SplitAnomaly>,
}

/// Splits `text` at the first think-open/think-close marker pair.
///
/// Total function: no markers means an empty reasoning block with the full
/// text as the answer; an unclosed block means the reverse, flagged. Special
/// markers (including the EOS textual form) are stripped from the answer.
pub fn split_cot(text: &str, specials: &SpecialTokenMap) -> CotSplit {
    let open = specials.think_open_marker();
    let close = specials.think_close_marker();

    let Some(open_at) = text.find(open) else {
        return CotSplit {
            cot_text: String::new(),
            answer_text: strip_markers(text, specials),
            anomaly: None,
        };
    };
    let after_open = &text[open_at + open.len()..];
    let Some(close_at) = after_open.find(close) else {
        return CotSplit {
            cot_text: after_open.to_string(),
            answer_text: String::new(),
            anomaly: Some(SplitAnomaly::UnclosedThink),
        };
    };
    let cot_text = after_open[..close_at].to_string();
    let answer_raw = &after_open[close_at + close.len()..];
    CotSplit {
        cot_text,
        answer_text: strip_markers(answer_raw, specials),
        anomaly: None,
    }
}

fn strip_markers(text: &str, specials: &SpecialTokenMap) -> String {
    let mut out = text.to_string();
    let mut markers: Vec<&str> = vec![specials.think_open_marker(), specials.think_close_marker()];
    if let Some(t) = specials.double_newline_text.as_deref() {
        // Double newline is ordinary whitespace in decoded text; only strip
        // it when it is a visible marker rather than literal newlines.
        if t != "\n\n" {
            markers.push(t);
        }
    }
    if let Some(t) = specials.eos_text.as_deref() {
        markers.push(t);
    }
    for marker in markers {
        if !marker.is_empty() {
            out = out.replace(marker, "");
        }
    }
    out
}
