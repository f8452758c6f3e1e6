//! Fetching public probe datasets and converting them to the record schema.
//!
//! Sources are downloaded over HTTP, optionally verified against a pinned
//! SHA-256 (a mismatch quarantines the download and fails), converted to
//! JSONL probe records, and optionally subsampled per category with a
//! seeded shuffle so the subset is reproducible.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::dataset::ProbeRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    /// CSV with a header row; `prompt_column` holds the prompt and
    /// `category_column`, when present, the category.
    Csv,
    /// JSON array, either of strings or of objects with a prompt field.
    JsonArray,
    /// Already in the record schema, one JSON object per line.
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FetchSource {
    pub name: String,
    pub url: String,
    pub format: SourceFormat,
    /// Pinned content hash of the download. `None` means trust-on-first-use:
    /// the computed hash is reported so it can be pinned afterwards.
    pub sha256: Option<String>,
    pub prompt_column: String,
    pub category_column: Option<String>,
}

/// Built-in source descriptors for the two supported public datasets.
/// URLs and hashes can be overridden/pinned via the `[fetch.<name>]` config
/// section.
pub fn builtin_source(name: &str) -> Option<FetchSource> {
    match name {
        "ccp" => Some(FetchSource {
            name: "ccp".to_string(),
            url: "https://huggingface.co/datasets/promptfoo/CCP-sensitive-prompts/resolve/main/train.csv"
                .to_string(),
            format: SourceFormat::Csv,
            sha256: None,
            prompt_column: "prompt".to_string(),
            category_column: Some("subject".to_string()),
        }),
        "deccp" => Some(FetchSource {
            name: "deccp".to_string(),
            url: "https://huggingface.co/datasets/augmxnt/deccp/resolve/main/censored.json"
                .to_string(),
            format: SourceFormat::JsonArray,
            sha256: None,
            prompt_column: "prompt".to_string(),
            category_column: Some("category".to_string()),
        }),
        _ => None,
    }
}

#[derive(Debug, Clone, Default)]
pub struct FetchOptions {
    /// Keep only these categories (exact match), in this order.
    pub categories: Option<Vec<String>>,
    /// Sample this many records per category with a seeded shuffle.
    pub sample_per_category: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct FetchReport {
    pub records: usize,
    pub categories: BTreeMap<String, usize>,
    /// Hash of the downloaded source bytes.
    pub source_sha256: String,
    pub dest: PathBuf,
}

/// Downloads, verifies, converts, and writes a dataset. The destination is
/// a JSONL file in the probe-record schema.
pub fn fetch_dataset(
    source: &FetchSource,
    options: &FetchOptions,
    dest: &Path,
) -> Result<FetchReport> {
    let bytes = download(&source.url)?;
    let actual = hex::encode(Sha256::digest(&bytes));
    if let Some(expected) = &source.sha256 {
        if !expected.eq_ignore_ascii_case(&actual) {
            let quarantine = quarantine_path(dest);
            std::fs::write(&quarantine, &bytes)?;
            return Err(Error::Integrity {
                record_id: source.name.clone(),
                reason: format!(
                    "download hash {actual} does not match pinned {expected}; \
                     raw bytes quarantined at {}",
                    quarantine.display()
                ),
            });
        }
    }
    let records = convert(source, &bytes)?;
    let records = apply_sampling(records, options, &source.name)?;
    write_jsonl(&records, dest)?;
    Ok(FetchReport {
        records: records.len(),
        categories: crate::harness::dataset::category_counts(&records),
        source_sha256: actual,
        dest: dest.to_path_buf(),
    })
}

fn quarantine_path(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".quarantine");
    dest.with_file_name(name)
}

fn download(url: &str) -> Result<Vec<u8>> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(std::time::Duration::from_secs(120)))
        .build()
        .into();
    let mut last = String::new();
    for attempt in 0..3 {
        if attempt > 0 {
            std::thread::sleep(std::time::Duration::from_millis(500 * attempt as u64));
        }
        match agent.get(url).call() {
            Ok(mut resp) => {
                return resp.body_mut().read_to_vec().map_err(|e| Error::Transport {
                    attempts: attempt + 1,
                    last: e.to_string(),
                });
            }
            Err(ureq::Error::StatusCode(status)) if (400..500).contains(&status) => {
                return Err(Error::ServerRejected {
                    status,
                    body: url.to_string(),
                });
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::Transport { attempts: 3, last })
}

/// Converts raw source bytes into probe records.
pub fn convert(source: &FetchSource, bytes: &[u8]) -> Result<Vec<ProbeRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Dataset {
        path: PathBuf::from(&source.url),
        reason: format!("source is not UTF-8: {e}"),
    })?;
    let mut out = Vec::new();
    match source.format {
        SourceFormat::Csv => {
            let mut reader = csv::Reader::from_reader(text.as_bytes());
            let headers = reader
                .headers()
                .map_err(|e| conversion_error(source, e.to_string()))?
                .clone();
            let prompt_idx = headers
                .iter()
                .position(|h| h == source.prompt_column)
                .ok_or_else(|| {
                    conversion_error(
                        source,
                        format!("missing prompt column {:?}", source.prompt_column),
                    )
                })?;
            let category_idx = source
                .category_column
                .as_deref()
                .and_then(|c| headers.iter().position(|h| h == c));
            for (i, row) in reader.records().enumerate() {
                let row = row.map_err(|e| conversion_error(source, e.to_string()))?;
                let prompt = row.get(prompt_idx).unwrap_or_default().trim();
                if prompt.is_empty() {
                    continue;
                }
                let category = category_idx
                    .and_then(|c| row.get(c))
                    .unwrap_or("general")
                    .trim()
                    .to_string();
                out.push(make_record(&source.name, i, prompt, &category));
            }
        }
        SourceFormat::JsonArray => {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| conversion_error(source, e.to_string()))?;
            let array = value
                .as_array()
                .ok_or_else(|| conversion_error(source, "expected a JSON array".to_string()))?;
            for (i, item) in array.iter().enumerate() {
                let (prompt, category) = match item {
                    serde_json::Value::String(s) => (s.trim().to_string(), "general".to_string()),
                    serde_json::Value::Object(map) => {
                        let prompt = map
                            .get(&source.prompt_column)
                            .and_then(|v| v.as_str())
                            .unwrap_or_default()
                            .trim()
                            .to_string();
                        let category = source
                            .category_column
                            .as_deref()
                            .and_then(|c| map.get(c))
                            .and_then(|v| v.as_str())
                            .unwrap_or("general")
                            .trim()
                            .to_string();
                        (prompt, category)
                    }
                    _ => continue,
                };
                if prompt.is_empty() {
                    continue;
                }
                out.push(make_record(&source.name, i, &prompt, &category));
            }
        }
        SourceFormat::Jsonl => {
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: ProbeRecord = serde_json::from_str(line)
                    .map_err(|e| conversion_error(source, format!("line {}: {e}", i + 1)))?;
                out.push(record);
            }
        }
    }
    if out.is_empty() {
        return Err(conversion_error(source, "no records".to_string()));
    }
    Ok(out)
}

fn conversion_error(source: &FetchSource, reason: String) -> Error {
    Error::Dataset {
        path: PathBuf::from(&source.url),
        reason,
    }
}

fn make_record(dataset: &str, index: usize, prompt: &str, category: &str) -> ProbeRecord {
    let language = if prompt
        .chars()
        .any(|c| ('\u{4e00}'..='\u{9fff}').contains(&c))
    {
        "zh"
    } else {
        "en"
    };
    ProbeRecord {
        id: format!("{dataset}-{index:04}"),
        prompt: prompt.to_string(),
        dataset: dataset.to_string(),
        category: category.to_string(),
        language: language.to_string(),
    }
}

fn apply_sampling(
    records: Vec<ProbeRecord>,
    options: &FetchOptions,
    source_name: &str,
) -> Result<Vec<ProbeRecord>> {
    let mut records = records;
    if let Some(categories) = &options.categories {
        records.retain(|r| categories.contains(&r.category));
        if records.is_empty() {
            return Err(Error::Dataset {
                path: PathBuf::from(source_name),
                reason: format!("no records left after filtering to categories {categories:?}"),
            });
        }
    }
    let Some(k) = options.sample_per_category else {
        return Ok(records);
    };
    let mut by_category: BTreeMap<String, Vec<ProbeRecord>> = BTreeMap::new();
    for r in records {
        by_category.entry(r.category.clone()).or_default().push(r);
    }
    let order: Vec<String> = match &options.categories {
        Some(c) => c.clone(),
        None => by_category.keys().cloned().collect(),
    };
    let mut out = Vec::new();
    for category in order {
        let mut bucket = by_category.remove(&category).unwrap_or_default();
        if bucket.len() < k {
            return Err(Error::Dataset {
                path: PathBuf::from(source_name),
                reason: format!(
                    "category {category:?} has {} records, need {k}",
                    bucket.len()
                ),
            });
        }
        bucket.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        bucket.shuffle(&mut rng);
        bucket.truncate(k);
        bucket.sort_by(|a, b| a.id.cmp(&b.id));
        out.extend(bucket);
    }
    Ok(out)
}

fn write_jsonl(records: &[ProbeRecord], dest: &Path) -> Result<()> {
    if let Some(parent) = dest.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(dest, out)?;
    Ok(())
}
