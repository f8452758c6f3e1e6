//! Classification of generated outputs: reasoning-block quality and final
//! response type.
//!
//! Two classifier backends: an OpenAI-compatible chat client (temperature
//! pinned to 0 for label stability) and a rule-based stand-in for offline
//! runs against the toy model. Prompt templates are versioned files embedded
//! at compile time, with placeholders only for the probe prompt and the text
//! under classification.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::remote::RetryPolicy;
use crate::error::{Error, Result};
use crate::record::{AnswerClass, ClassifiedResult, CotClass, GenerationRecord};

/// Versioned classifier instructions. `{prompt}` and `{text}` are the only
/// placeholders.
pub const COT_CLASSIFIER_TEMPLATE: &str = include_str!("../../prompts/cot_classifier_v1.txt");
pub const RESPONSE_CLASSIFIER_TEMPLATE: &str =
    include_str!("../../prompts/response_classifier_v1.txt");

pub fn render_template(template: &str, prompt: &str, text: &str) -> String {
    template.replace("{prompt}", prompt).replace("{text}", text)
}

/// A classification backend. Implementations return the raw label text;
/// normalization and closed-set enforcement happen in [`classify`].
pub trait Classifier: Send + Sync {
    fn classify_cot(&self, probe_prompt: &str, cot_text: &str) -> Result<String>;
    fn classify_answer(&self, probe_prompt: &str, answer_text: &str) -> Result<String>;
    fn identity(&self) -> String;

    /// Fail-fast environment check run before any classification call.
    fn preflight(&self) -> Result<()> {
        Ok(())
    }
}

/// Connection settings for an OpenAI-compatible chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatClassifierConfig {
    pub endpoint: String,
    pub chat_path: String,
    pub model: String,
    pub api_key_env: Option<String>,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
}

impl ChatClassifierConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatClassifierConfig {
            endpoint: endpoint.into(),
            chat_path: "/v1/chat/completions".to_string(),
            model: model.into(),
            api_key_env: None,
            request_timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Chat-endpoint classifier client.
pub struct ChatClassifier {
    config: ChatClassifierConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl ChatClassifier {
    pub fn new(config: ChatClassifierConfig) -> Self {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .build()
            .into();
        ChatClassifier {
            config,
            api_key,
            agent,
        }
    }

    pub fn require_credentials(&self) -> Result<()> {
        if let Some(var) = self.config.api_key_env.as_deref() {
            if self.api_key.is_none() {
                return Err(Error::Environment(format!(
                    "environment variable {var} is not set (required for the classifier)"
                )));
            }
        }
        Ok(())
    }

    fn complete(&self, content: &str) -> Result<String> {
        let url = format!(
            "{}{}",
            self.config.endpoint.trim_end_matches('/'),
            self.config.chat_path
        );
        let request = ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage {
                role: "user",
                content,
            }],
            // Pinned to zero for label stability.
            temperature: 0.0,
        };
        let mut last_error: Option<String> = None;
        for attempt in 0..self.config.retry.attempts() {
            if attempt > 0 {
                std::thread::sleep(self.config.retry.backoff[attempt - 1]);
            }
            let mut req = self.agent.post(&url);
            if let Some(key) = &self.api_key {
                req = req.header("Authorization", format!("Bearer {key}"));
            }
            match req.send_json(&request) {
                Ok(mut resp) => {
                    let parsed: ChatResponse = resp
                        .body_mut()
                        .read_json()
                        .map_err(|e| Error::Classifier(format!("malformed reply: {e}")))?;
                    return parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| Error::Classifier("reply carried no choices".into()));
                }
                Err(ureq::Error::StatusCode(status)) if (400..500).contains(&status) => {
                    return Err(Error::ServerRejected {
                        status,
                        body: String::new(),
                    });
                }
                Err(e) => last_error = Some(e.to_string()),
            }
        }
        Err(Error::Transport {
            attempts: self.config.retry.attempts(),
            last: last_error.unwrap_or_default(),
        })
    }
}

impl Classifier for ChatClassifier {
    fn classify_cot(&self, probe_prompt: &str, cot_text: &str) -> Result<String> {
        self.complete(&render_template(
            COT_CLASSIFIER_TEMPLATE,
            probe_prompt,
            cot_text,
        ))
    }

    fn classify_answer(&self, probe_prompt: &str, answer_text: &str) -> Result<String> {
        self.complete(&render_template(
            RESPONSE_CLASSIFIER_TEMPLATE,
            probe_prompt,
            answer_text,
        ))
    }

    fn identity(&self) -> String {
        format!("chat:{}:{}", self.config.endpoint, self.config.model)
    }

    fn preflight(&self) -> Result<()> {
        self.require_credentials()
    }
}

/// Deterministic rule-based classifier for toy-model outputs: the refusal
/// script maps to `refusal`, the answer script to `answered`.
#[derive(Debug, Clone)]
pub struct RuleBasedClassifier {
    refusal_marker: String,
    answered_marker: String,
    reasoning_marker: String,
}

impl RuleBasedClassifier {
    pub fn new(
        refusal_marker: impl Into<String>,
        answered_marker: impl Into<String>,
        reasoning_marker: impl Into<String>,
    ) -> Self {
        RuleBasedClassifier {
            refusal_marker: refusal_marker.into(),
            answered_marker: answered_marker.into(),
            reasoning_marker: reasoning_marker.into(),
        }
    }

    /// Markers matching the canonical toy model's scripts.
    pub fn canonical_toy() -> Self {
        RuleBasedClassifier::new("cannot", "answer", "reason")
    }
}

impl Classifier for RuleBasedClassifier {
    fn classify_cot(&self, _probe_prompt: &str, cot_text: &str) -> Result<String> {
        if cot_text.contains(&self.reasoning_marker) {
            Ok("relevant_coherent".to_string())
        } else {
            Ok("irrelevant".to_string())
        }
    }

    fn classify_answer(&self, _probe_prompt: &str, answer_text: &str) -> Result<String> {
        if answer_text.contains(&self.refusal_marker) {
            Ok("refusal".to_string())
        } else if answer_text.contains(&self.answered_marker) {
            Ok("answered".to_string())
        } else {
            Ok("failure_irrelevant".to_string())
        }
    }

    fn identity(&self) -> String {
        "rule-based".to_string()
    }
}

/// Classifies one generation: two classifier calls, outputs normalized and
/// checked against the closed label sets. An empty (or whitespace-only)
/// answer short-circuits to `failure_empty` without an API call; transport
/// failures map to the `error` label and off-vocabulary replies to
/// `invalid`; results are recorded, never dropped.
pub fn classify(record: &GenerationRecord, classifier: &dyn Classifier) -> ClassifiedResult {
    let generation_hash = serde_json::to_string(record)
        .map(|json| crate::record::content_hash(&json))
        .unwrap_or_default();

    let answer_class = if record.error.is_some() {
        AnswerClass::Error
    } else if record.answer_text.trim().is_empty() {
        AnswerClass::FailureEmpty
    } else {
        match classifier.classify_answer(&record.prompt, &record.answer_text) {
            Ok(raw) => AnswerClass::parse_normalized(&raw),
            Err(_) => AnswerClass::Error,
        }
    };

    let cot_class = if record.error.is_some() {
        CotClass::Error
    } else {
        match classifier.classify_cot(&record.prompt, &record.cot_text) {
            Ok(raw) => CotClass::parse_normalized(&raw),
            Err(_) => CotClass::Error,
        }
    };

    ClassifiedResult {
        probe_id: record.probe_id.clone(),
        dataset: record.dataset.clone(),
        intervention: record.intervention.clone(),
        cot_class,
        answer_class,
        generation_hash,
    }
}
