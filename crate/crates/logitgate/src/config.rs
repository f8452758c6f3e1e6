//! Run configuration: TOML schema, validation, and construction of the
//! engine, classifier, and intervention set a run needs.
//!
//! Relative paths inside a config file resolve against the directory the
//! file lives in, so configs are portable across working directories.
//! Textual token references in custom rules are resolved to ids once, when
//! the engine is attached.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::remote::{RemoteConfig, RemoteEngine};
use crate::engine::toy::{ToyEngine, ToyModelSpec};
use crate::engine::Engine;
use crate::error::{Error, Result};
use crate::harness::classifier::{
    ChatClassifier, ChatClassifierConfig, Classifier, RuleBasedClassifier,
};
use crate::trigger::standard_interventions_with_eos_hold;
use crate::types::{
    Intervention, RuleDuration, SamplerConfig, SpecialTokenMap, TokenSpec, TriggerRule,
};

pub const DEFAULT_MAX_STEPS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub output_dir: PathBuf,
    pub engine: EngineSection,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub specials: Option<SpecialTokenMap>,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub interventions: InterventionsSection,
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub fetch: BTreeMap<String, FetchPin>,
}

fn default_parallelism() -> usize {
    1
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EngineSection {
    Toy {
        #[serde(default)]
        refusal_probability: Option<f64>,
    },
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        completion_path: Option<String>,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        min_bias: Option<f64>,
        #[serde(default)]
        request_timeout_secs: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSection {
    pub temperature: f64,
    pub top_p: f64,
    pub repetition_penalty: f64,
    #[serde(default)]
    pub penalize_prompt: bool,
}

impl SamplerSection {
    pub fn to_sampler_config(&self, seed: u64) -> Result<SamplerConfig> {
        let mut config =
            SamplerConfig::new(self.temperature, self.top_p, self.repetition_penalty, seed)?;
        config.penalize_prompt = self.penalize_prompt;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionsSection {
    /// Include the three standard arms (baseline, suppress-nn,
    /// suppress-nn-eos).
    #[serde(default = "default_true")]
    pub standard: bool,
    /// How many steps the standard EOS suppression holds after think-close.
    #[serde(default = "default_one")]
    pub eos_hold_steps: u32,
    #[serde(default)]
    pub custom: Vec<CustomIntervention>,
}

fn default_true() -> bool {
    true
}

fn default_one() -> u32 {
    1
}

impl Default for InterventionsSection {
    fn default() -> Self {
        InterventionsSection {
            standard: true,
            eos_hold_steps: 1,
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomIntervention {
    pub name: String,
    /// Empty means a baseline arm (no rules).
    #[serde(default)]
    pub rules: Vec<CustomRule>,
}

/// A rule in configuration form: token references may be ids or text, and
/// exactly one of `duration` / `decay` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomRule {
    pub name: String,
    pub trigger: Vec<TokenSpec>,
    pub suppress: Vec<TokenSpec>,
    #[serde(default)]
    pub duration: Option<u32>,
    #[serde(default)]
    pub decay: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierSection {
    RuleBased {},
    Chat {
        endpoint: String,
        model: String,
        #[serde(default)]
        chat_path: Option<String>,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        request_timeout_secs: Option<u64>,
    },
}

/// Pinned source for `fetch`: overrides the built-in URL and pins the
/// expected content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchPin {
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub sha256: Option<String>,
}

/// Parses a config file. Returns the config and the directory relative
/// paths resolve against.
pub fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let config: RunConfig = toml::from_str(&content).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, dir))
}

/// Stable hash of the generation-relevant configuration, recorded in every
/// manifest and generation record.
///
/// The output directory and parallelism are excluded: they change where and
/// how fast records are produced, never what is produced.
pub fn config_hash(config: &RunConfig) -> Result<String> {
    let mut canonical = config.clone();
    canonical.output_dir = PathBuf::new();
    canonical.parallelism = 1;
    let json = serde_json::to_string(&canonical)?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}

/// Everything a run needs, constructed and validated from a [`RunConfig`].
pub struct ResolvedRun {
    pub engine: Box<dyn Engine>,
    pub classifier: Box<dyn Classifier>,
    pub interventions: Vec<Intervention>,
    pub sampler: SamplerConfig,
    pub dataset_path: PathBuf,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub max_steps: usize,
    pub config_hash: String,
}

impl ResolvedRun {
    /// Fail-fast environment checks that must pass before any request.
    pub fn preflight(&self) -> Result<()> {
        self.engine.preflight()?;
        self.classifier.preflight()
    }
}

/// Builds and validates every component of a run.
pub fn resolve_run(config: &RunConfig, config_dir: &Path) -> Result<ResolvedRun> {
    if config.parallelism < 1 {
        return Err(Error::invalid_field("parallelism", "must be >= 1"));
    }
    if config.max_steps < 1 {
        return Err(Error::invalid_field("max_steps", "must be >= 1"));
    }
    let sampler = config.sampler.to_sampler_config(config.seed)?;

    let engine: Box<dyn Engine> = match &config.engine {
        EngineSection::Toy {
            refusal_probability,
        } => {
            let spec = match refusal_probability {
                Some(p) => ToyModelSpec::with_refusal_probability(*p)?,
                None => ToyModelSpec::canonical(),
            };
            if let Some(declared) = &config.specials {
                let owned = &spec.specials;
                for ((name, declared_id), (_, owned_id)) in
                    declared.fields().into_iter().zip(owned.fields())
                {
                    if declared_id != owned_id {
                        return Err(Error::invalid_field(
                            format!("specials.{name}"),
                            format!(
                                "toy engine owns its special map ({name} is {owned_id}, config says {declared_id})"
                            ),
                        ));
                    }
                }
            }
            Box::new(ToyEngine::new(spec))
        }
        EngineSection::Remote {
            endpoint,
            model,
            completion_path,
            api_key_env,
            min_bias,
            request_timeout_secs,
        } => {
            let specials = config.specials.clone().ok_or_else(|| {
                Error::invalid_field(
                    "specials",
                    "a [specials] section is required for remote engines",
                )
            })?;
            let mut remote = RemoteConfig::new(endpoint.clone(), model.clone(), specials);
            if let Some(path) = completion_path {
                remote.completion_path = path.clone();
            }
            remote.api_key_env = api_key_env.clone();
            if let Some(b) = min_bias {
                if *b >= 0.0 {
                    return Err(Error::invalid_field("engine.min_bias", "must be negative"));
                }
                remote.min_bias = *b;
            }
            if let Some(secs) = request_timeout_secs {
                remote.request_timeout = Duration::from_secs(*secs);
            }
            Box::new(RemoteEngine::new(remote))
        }
    };

    let classifier = build_classifier(&config.classifier);

    let mut interventions = Vec::new();
    if config.interventions.standard {
        interventions.extend(standard_interventions_with_eos_hold(
            engine.specials(),
            config.interventions.eos_hold_steps,
        ));
    }
    for (ci, custom) in config.interventions.custom.iter().enumerate() {
        let mut rules = Vec::new();
        for (ri, rule) in custom.rules.iter().enumerate() {
            let field = |part: &str| format!("interventions.custom[{ci}].rules[{ri}].{part}");
            let duration = match (&rule.duration, &rule.decay) {
                (Some(steps), None) => RuleDuration::Steps(*steps),
                (None, Some(schedule)) => RuleDuration::Decay(schedule.clone()),
                _ => {
                    return Err(Error::invalid_field(
                        field("duration"),
                        "exactly one of duration/decay is required",
                    ));
                }
            };
            let resolve = |specs: &[TokenSpec], part: &str| -> Result<Vec<crate::types::TokenId>> {
                specs
                    .iter()
                    .enumerate()
                    .map(|(ti, spec)| {
                        engine.resolve_token(spec).map_err(|e| {
                            Error::invalid_field(field(&format!("{part}[{ti}]")), e.to_string())
                        })
                    })
                    .collect()
            };
            let trigger = resolve(&rule.trigger, "trigger")?;
            let suppress = resolve(&rule.suppress, "suppress")?;
            rules.push(TriggerRule::new(
                rule.name.clone(),
                trigger,
                suppress,
                duration,
            )?);
        }
        interventions.push(Intervention::new(custom.name.clone(), rules)?);
    }
    if interventions.is_empty() {
        return Err(Error::invalid_field(
            "interventions",
            "no interventions configured (enable standard or add custom ones)",
        ));
    }
    let mut names = std::collections::BTreeSet::new();
    for iv in &interventions {
        if !names.insert(iv.name.clone()) {
            return Err(Error::invalid_field(
                "interventions",
                format!("duplicate intervention name {:?}", iv.name),
            ));
        }
    }

    let dataset_path = resolve_path(config_dir, &config.dataset.path);
    if !dataset_path.exists() {
        return Err(Error::Config {
            path: dataset_path,
            reason: "dataset file does not exist".to_string(),
        });
    }

    Ok(ResolvedRun {
        interventions,
        sampler,
        dataset_path,
        output_dir: resolve_path(config_dir, &config.output_dir),
        parallelism: config.parallelism,
        max_steps: config.max_steps,
        config_hash: config_hash(config)?,
        engine,
        classifier,
    })
}

/// Builds a classifier from its config section (also used by the CLI's
/// re-classification command, which needs no engine).
pub fn build_classifier(section: &ClassifierSection) -> Box<dyn Classifier> {
    match section {
        ClassifierSection::RuleBased {} => Box::new(RuleBasedClassifier::canonical_toy()),
        ClassifierSection::Chat {
            endpoint,
            model,
            chat_path,
            api_key_env,
            request_timeout_secs,
        } => {
            let mut chat = ChatClassifierConfig::new(endpoint.clone(), model.clone());
            if let Some(path) = chat_path {
                chat.chat_path = path.clone();
            }
            chat.api_key_env = api_key_env.clone();
            if let Some(secs) = request_timeout_secs {
                chat.request_timeout = Duration::from_secs(*secs);
            }
            Box::new(ChatClassifier::new(chat))
        }
    }
}

fn resolve_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture_path() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ccp_sample.jsonl")
    }

    fn toy_config_toml() -> String {
        format!(
            r#"
seed = 42
parallelism = 2
max_steps = 64
output_dir = "out"

[engine]
kind = "toy"

[sampler]
temperature = 1.0
top_p = 1.0
repetition_penalty = 1.0

[dataset]
path = {path:?}

[classifier]
kind = "rule_based"
"#,
            path = fixture_path()
        )
    }

    fn write_config(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".toml").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn valid_toy_config_resolves_three_standard_arms() {
        let f = write_config(&toy_config_toml());
        let (config, dir) = load_config(f.path()).unwrap();
        let resolved = resolve_run(&config, &dir).unwrap();
        assert_eq!(resolved.interventions.len(), 3);
        assert_eq!(resolved.interventions[0].name, "baseline");
        assert_eq!(resolved.interventions[2].name, "suppress-nn-eos");
        assert_eq!(resolved.parallelism, 2);
        assert!(!resolved.config_hash.is_empty());
    }

    #[test]
    fn zero_temperature_is_rejected_naming_the_constraint() {
        let toml = toy_config_toml().replace("temperature = 1.0", "temperature = 0.0");
        let f = write_config(&toml);
        let (config, dir) = load_config(f.path()).unwrap();
        let err = resolve_run(&config, &dir).err().unwrap();
        assert!(err.to_string().contains("temperature"));
    }

    #[test]
    fn missing_dataset_file_is_rejected_naming_the_path() {
        let toml = toy_config_toml().replace(
            &format!("{:?}", fixture_path()),
            "\"/nonexistent/nowhere.jsonl\"",
        );
        let f = write_config(&toml);
        let (config, dir) = load_config(f.path()).unwrap();
        let err = resolve_run(&config, &dir).err().unwrap();
        assert!(err.to_string().contains("nowhere.jsonl"));
    }

    #[test]
    fn custom_decay_rule_resolves_text_tokens_through_the_engine() {
        let toml = format!(
            "{}\n{}",
            toy_config_toml(),
            r#"
[[interventions.custom]]
name = "ease-off-close"

[[interventions.custom.rules]]
name = "decay-close"
trigger = ["<think>"]
suppress = ["</think>"]
decay = [-12.0, -8.0, -4.0, -2.0, -1.0, 0.0]
"#
        );
        let f = write_config(&toml);
        let (config, dir) = load_config(f.path()).unwrap();
        let resolved = resolve_run(&config, &dir).unwrap();
        assert_eq!(resolved.interventions.len(), 4);
        let custom = &resolved.interventions[3];
        assert_eq!(custom.name, "ease-off-close");
        assert_eq!(custom.rules[0].trigger, vec![crate::types::TokenId(0)]);
        assert!(custom.rules[0].suppress.contains(&crate::types::TokenId(2)));
    }

    #[test]
    fn unresolvable_text_token_names_the_field_path() {
        let toml = format!(
            "{}\n{}",
            toy_config_toml(),
            r#"
[[interventions.custom]]
name = "bad"

[[interventions.custom.rules]]
name = "r"
trigger = ["<nope>"]
suppress = ["</think>"]
duration = 1
"#
        );
        let f = write_config(&toml);
        let (config, dir) = load_config(f.path()).unwrap();
        let err = resolve_run(&config, &dir).err().unwrap();
        assert!(err
            .to_string()
            .contains("interventions.custom[0].rules[0].trigger[0]"));
    }

    #[test]
    fn remote_engine_requires_specials_section() {
        let toml = toy_config_toml().replace(
            "[engine]\nkind = \"toy\"",
            "[engine]\nkind = \"remote\"\nendpoint = \"http://localhost:1\"\nmodel = \"m\"",
        );
        let f = write_config(&toml);
        let (config, dir) = load_config(f.path()).unwrap();
        let err = resolve_run(&config, &dir).err().unwrap();
        assert!(err.to_string().contains("specials"));
    }

    #[test]
    fn config_hash_is_stable_and_input_sensitive() {
        let f = write_config(&toy_config_toml());
        let (config, _) = load_config(f.path()).unwrap();
        let a = config_hash(&config).unwrap();
        let b = config_hash(&config).unwrap();
        assert_eq!(a, b);
        let mut changed = config.clone();
        changed.seed = 43;
        assert_ne!(a, config_hash(&changed).unwrap());
    }

    #[test]
    fn malformed_toml_reports_config_error() {
        let f = write_config("seed = ");
        assert!(matches!(load_config(f.path()), Err(Error::Config { .. })));
    }
}
