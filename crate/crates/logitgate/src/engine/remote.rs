//! Step-wise driver for OpenAI-compatible completion servers.
//!
//! Positional suppression needs a fresh bias per emitted token, so the
//! driver requests exactly one token at a time and attaches the current
//! mask as the request's `logit_bias`. Hard suppression is expressed as the
//! most negative bias the wire interface permits (`min_bias`, commonly
//! -100); that is an approximation of true minus-infinity, which only the
//! local toy engine realizes exactly.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::engine::{Emission, Engine, StepSession};
use crate::error::{Error, Result};
use crate::sampler::{SuppressionMask, SUPPRESS_SENTINEL};
use crate::types::{SamplerConfig, SpecialTokenMap, TokenId, TokenSpec};

/// Bounded exponential backoff between retries of a failed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Sleep durations between attempts; `backoff.len() + 1` total attempts.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            backoff: vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ],
        }
    }
}

impl RetryPolicy {
    /// No retries at all; the first failure is final.
    pub fn none() -> Self {
        RetryPolicy {
            backoff: Vec::new(),
        }
    }

    pub fn attempts(&self) -> usize {
        self.backoff.len() + 1
    }
}

/// Connection settings for a remote completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://localhost:8000`.
    pub endpoint: String,
    /// Completion route appended to the base URL.
    pub completion_path: String,
    pub model: String,
    /// Environment variable holding the bearer token, if the server needs
    /// one. The variable is read at engine construction; requiring it to be
    /// set is deferred to [`RemoteEngine::require_credentials`].
    pub api_key_env: Option<String>,
    /// The most negative logit bias the server accepts.
    pub min_bias: f64,
    pub request_timeout: Duration,
    pub retry: RetryPolicy,
    pub specials: SpecialTokenMap,
}

impl RemoteConfig {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        specials: SpecialTokenMap,
    ) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            completion_path: "/v1/completions".to_string(),
            model: model.into(),
            api_key_env: None,
            min_bias: -100.0,
            request_timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            specials,
        }
    }
}

/// Single-token completion request. `max_tokens` is always 1: positional
/// masks depend on the previous emission, so steps cannot be batched.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRequest {
    pub model: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repetition_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logit_bias: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepResponse {
    pub choices: Vec<StepChoice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepChoice {
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub finish_reason: Option<String>,
    /// Extension carried by servers that report the sampled token's id
    /// (the bundled mock does). Optional on plain OpenAI-shaped servers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_id: Option<u32>,
}

/// Translates a suppression mask into the wire bias map: the sentinel
/// becomes `min_bias`, finite penalties are clamped into `[min_bias, 0]`.
pub fn mask_to_bias(mask: &SuppressionMask, min_bias: f64) -> Option<BTreeMap<String, f64>> {
    if mask.is_empty() {
        return None;
    }
    Some(
        mask.iter()
            .map(|(token, penalty)| {
                let bias = if penalty == SUPPRESS_SENTINEL {
                    min_bias
                } else {
                    penalty.max(min_bias)
                };
                (token.to_string(), bias)
            })
            .collect(),
    )
}

/// Remote engine speaking the OpenAI completion protocol one token at a
/// time.
pub struct RemoteEngine {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteEngine {
    pub fn new(config: RemoteConfig) -> Self {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok());
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.request_timeout))
            .build()
            .into();
        RemoteEngine {
            config,
            api_key,
            agent,
        }
    }

    /// Fails fast when an API key variable is configured but unset. Called
    /// before any request is issued.
    pub fn require_credentials(&self) -> Result<()> {
        if let Some(var) = self.config.api_key_env.as_deref() {
            if self.api_key.is_none() {
                return Err(Error::Environment(format!(
                    "environment variable {var} is not set (required for the remote engine)"
                )));
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self) -> String {
        format!(
            "{}{}",
            self.config.endpoint.trim_end_matches('/'),
            self.config.completion_path
        )
    }

    fn post_step(&self, request: &StepRequest) -> Result<StepResponse> {
        let mut last_error: Option<Error> = None;
        for attempt in 0..self.config.retry.attempts() {
            if attempt > 0 {
                std::thread::sleep(self.config.retry.backoff[attempt - 1]);
            }
            match self.post_once(request) {
                Ok(resp) => return Ok(resp),
                Err(err) => {
                    // 4xx is a configuration problem (e.g. the server does
                    // not support logit_bias); retrying cannot help.
                    if let Error::ServerRejected { status, .. } = &err {
                        if (400..500).contains(status) {
                            return Err(err);
                        }
                    }
                    last_error = Some(err);
                }
            }
        }
        Err(Error::Transport {
            attempts: self.config.retry.attempts(),
            last: last_error.map(|e| e.to_string()).unwrap_or_default(),
        })
    }

    fn post_once(&self, request: &StepRequest) -> Result<StepResponse> {
        let mut req = self.agent.post(self.url());
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        match req.send_json(request) {
            Ok(mut resp) => {
                resp.body_mut()
                    .read_json::<StepResponse>()
                    .map_err(|e| Error::ServerRejected {
                        status: 200,
                        body: format!("malformed response body: {e}"),
                    })
            }
            Err(ureq::Error::StatusCode(status)) => Err(Error::ServerRejected {
                status,
                body: String::new(),
            }),
            Err(e) => Err(Error::Transport {
                attempts: 1,
                last: e.to_string(),
            }),
        }
    }

    /// Resolves the emitted token's local identity and cross-checks any
    /// server-reported id against the configured special map.
    fn resolve_emission(&self, choice: &StepChoice) -> Result<Emission> {
        let sp = &self.config.specials;
        let stopped = choice.finish_reason.as_deref() == Some("stop");
        if stopped {
            if let Some(id) = choice.token_id {
                if id != sp.eos.0 {
                    return Err(Error::TokenIdentityMismatch(format!(
                        "server stopped with token id {id}, local eos id is {}",
                        sp.eos
                    )));
                }
            }
            return Ok(Emission {
                token: sp.eos,
                text: String::new(),
            });
        }

        let text_special = [
            (sp.think_open, sp.think_open_text.as_deref()),
            (sp.think_close, sp.think_close_text.as_deref()),
            (sp.double_newline, sp.double_newline_text.as_deref()),
            (sp.eos, sp.eos_text.as_deref()),
        ]
        .into_iter()
        .find_map(|(id, text)| (text == Some(choice.text.as_str())).then_some(id));

        match (choice.token_id, text_special) {
            (Some(server_id), Some(local_id)) if server_id != local_id.0 => {
                Err(Error::TokenIdentityMismatch(format!(
                    "token text {:?} is id {} locally but id {server_id} on the server",
                    choice.text, local_id
                )))
            }
            (Some(server_id), _) => Ok(Emission {
                token: TokenId(server_id),
                text: choice.text.clone(),
            }),
            (None, Some(local_id)) => Ok(Emission {
                token: local_id,
                text: choice.text.clone(),
            }),
            (None, None) => Ok(Emission {
                token: TokenId::OPAQUE,
                text: choice.text.clone(),
            }),
        }
    }
}

impl Engine for RemoteEngine {
    fn identity(&self) -> String {
        format!("remote:{}:{}", self.config.endpoint, self.config.model)
    }

    fn specials(&self) -> &SpecialTokenMap {
        &self.config.specials
    }

    fn vocab_size(&self) -> Option<usize> {
        None
    }

    fn preflight(&self) -> Result<()> {
        self.require_credentials()
    }

    fn resolve_token(&self, spec: &TokenSpec) -> Result<TokenId> {
        let sp = &self.config.specials;
        match spec {
            TokenSpec::Id(id) => Ok(TokenId(*id)),
            TokenSpec::Text(text) => [
                (sp.think_open, sp.think_open_text.as_deref()),
                (sp.think_close, sp.think_close_text.as_deref()),
                (sp.double_newline, sp.double_newline_text.as_deref()),
                (sp.eos, sp.eos_text.as_deref()),
            ]
            .into_iter()
            .find_map(|(id, t)| (t == Some(text.as_str())).then_some(id))
            .ok_or_else(|| Error::TokenResolution {
                spec: text.clone(),
                reason: "remote backends resolve only the configured special-token texts; \
                         use numeric ids for other tokens"
                    .to_string(),
            }),
        }
    }

    fn begin(&self, prompt: &str, config: &SamplerConfig) -> Result<Box<dyn StepSession + '_>> {
        self.require_credentials()?;
        Ok(Box::new(RemoteSession {
            engine: self,
            context: prompt.to_string(),
            sampler: config.clone(),
        }))
    }
}

struct RemoteSession<'a> {
    engine: &'a RemoteEngine,
    context: String,
    sampler: SamplerConfig,
}

impl StepSession for RemoteSession<'_> {
    fn step(&mut self, mask: &SuppressionMask) -> Result<Emission> {
        let emission = remote_step(self.engine, &mut self.context, mask, &self.sampler)?;
        Ok(emission)
    }
}

/// Issues a single-token completion carrying `mask` as the logit bias and
/// appends the emitted text to `context`.
pub fn remote_step(
    engine: &RemoteEngine,
    context: &mut String,
    mask: &SuppressionMask,
    sampler: &SamplerConfig,
) -> Result<Emission> {
    let request = StepRequest {
        model: engine.config.model.clone(),
        prompt: context.clone(),
        max_tokens: 1,
        temperature: sampler.temperature,
        top_p: sampler.top_p,
        repetition_penalty: Some(sampler.repetition_penalty),
        seed: Some(sampler.seed),
        logit_bias: mask_to_bias(mask, engine.config.min_bias),
    };
    let response = engine.post_step(&request)?;
    let choice = response
        .choices
        .first()
        .ok_or_else(|| Error::ServerRejected {
            status: 200,
            body: "response carried no choices".to_string(),
        })?;
    let emission = engine.resolve_emission(choice)?;
    context.push_str(&emission.text);
    Ok(emission)
}
