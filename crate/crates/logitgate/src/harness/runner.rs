//! The run matrix: every (probe, intervention) pair exactly once, with
//! incremental hashed persistence, resume support, and bounded parallelism.
//!
//! Results are written in canonical pair order (probe-major) regardless of
//! which worker finishes first, so a finished run directory is byte-stable:
//! re-running the same config yields byte-identical record files, and an
//! interrupted run resumes by skipping the already-persisted prefix.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{generate, Engine};
use crate::error::{Error, Result};
use crate::harness::classifier::{classify, Classifier};
use crate::harness::dataset::ProbeRecord;
use crate::record::{from_hashed_line, to_hashed_line, ClassifiedResult, GenerationRecord};
use crate::types::{Intervention, SamplerConfig};

/// Per-pair seed: a stable hash of the run seed, probe id, and intervention
/// name, so results are independent of scheduling and parallelism.
pub fn derive_seed(base: u64, probe_id: &str, intervention: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(probe_id.as_bytes());
    hasher.update([0x1f]);
    hasher.update(intervention.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub path: String,
    pub sha256: String,
    pub records: usize,
    pub categories: BTreeMap<String, usize>,
}

/// Snapshot of everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub engine: String,
    pub classifier: String,
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub max_steps: usize,
    pub parallelism: usize,
    pub interventions: Vec<Intervention>,
    pub dataset: DatasetInfo,
    pub pairs_total: usize,
    pub started_at_unix: u64,
    pub finished_at_unix: Option<u64>,
}

/// Layout of one run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn generations_path(&self) -> PathBuf {
        self.root.join("generations.jsonl")
    }

    pub fn classifications_path(&self) -> PathBuf {
        self.root.join("classifications.jsonl")
    }

    pub fn timings_path(&self) -> PathBuf {
        self.root.join("timings.jsonl")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        std::fs::create_dir_all(&self.root)?;
        let json = serde_json::to_string_pretty(manifest)?;
        std::fs::write(self.manifest_path(), json)?;
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<RunManifest> {
        let path = self.manifest_path();
        let content = std::fs::read_to_string(&path).map_err(|e| Error::Config {
            path: path.clone(),
            reason: format!("cannot read manifest: {e}"),
        })?;
        Ok(serde_json::from_str(&content)?)
    }

    /// Reads all persisted generations, verifying each line's hash.
    pub fn load_generations(&self) -> Result<Vec<GenerationRecord>> {
        load_hashed_lines(&self.generations_path(), |r: &GenerationRecord| {
            format!("{}/{}", r.probe_id, r.intervention)
        })
    }

    /// Reads all persisted classifications, verifying each line's hash.
    pub fn load_classifications(&self) -> Result<Vec<ClassifiedResult>> {
        load_hashed_lines(&self.classifications_path(), |r: &ClassifiedResult| {
            format!("{}/{}", r.probe_id, r.intervention)
        })
    }
}

fn load_hashed_lines<T: for<'de> Deserialize<'de>>(
    path: &Path,
    describe: impl Fn(&T) -> String + Copy,
) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_hashed_line(&line, describe)?);
    }
    Ok(out)
}

/// Inputs for one matrix execution.
pub struct MatrixRun<'a> {
    pub probes: &'a [ProbeRecord],
    pub interventions: &'a [Intervention],
    pub engine: &'a dyn Engine,
    pub classifier: &'a dyn Classifier,
    pub sampler: &'a SamplerConfig,
    pub max_steps: usize,
    pub parallelism: usize,
    pub config_hash: String,
}

#[derive(Debug)]
pub struct MatrixOutcome {
    pub results: Vec<ClassifiedResult>,
    pub generated_now: usize,
    pub reused: usize,
}

/// Executes the matrix into `dir`.
///
/// With `resume`, already-persisted pairs are verified and skipped; without
/// it the directory must not contain a started run. Per-pair backend
/// failures become `error`-class results and never abort the matrix.
pub fn run_matrix(run: &MatrixRun<'_>, dir: &RunDir, resume: bool) -> Result<MatrixOutcome> {
    if run.probes.is_empty() {
        return Err(Error::invalid_field("probes", "empty dataset"));
    }
    if run.interventions.is_empty() {
        return Err(Error::invalid_field("interventions", "no interventions"));
    }
    std::fs::create_dir_all(dir.root())?;

    let pairs: Vec<(usize, usize)> = run
        .probes
        .iter()
        .enumerate()
        .flat_map(|(p, _)| (0..run.interventions.len()).map(move |i| (p, i)))
        .collect();

    let existing_generations = if resume {
        dir.load_generations()?
    } else {
        if dir.generations_path().exists() {
            return Err(Error::Config {
                path: dir.generations_path(),
                reason: "run directory already contains generations; pass resume to continue"
                    .to_string(),
            });
        }
        Vec::new()
    };
    let mut existing_classifications = if resume {
        dir.load_classifications()?
    } else {
        Vec::new()
    };

    let done: BTreeMap<(String, String), GenerationRecord> = existing_generations
        .into_iter()
        .map(|r| ((r.probe_id.clone(), r.intervention.clone()), r))
        .collect();
    let classified_keys: std::collections::BTreeSet<(String, String)> = existing_classifications
        .iter()
        .map(|r| (r.probe_id.clone(), r.intervention.clone()))
        .collect();
    for key in &classified_keys {
        if !done.contains_key(key) {
            return Err(Error::Integrity {
                record_id: format!("{}/{}", key.0, key.1),
                reason: "classification exists without a matching generation".to_string(),
            });
        }
    }

    let mut generations_file = line_writer(&dir.generations_path())?;
    let mut classifications_file = line_writer(&dir.classifications_path())?;
    let mut timings_file = line_writer(&dir.timings_path())?;

    // Stored generations missing their classification (e.g. a run killed
    // between the two writes) are re-classified without re-generation.
    for (p, i) in &pairs {
        let key = (
            run.probes[*p].id.clone(),
            run.interventions[*i].name.clone(),
        );
        if let Some(record) = done.get(&key) {
            if !classified_keys.contains(&key) {
                let result = classify(record, run.classifier);
                writeln!(classifications_file, "{}", to_hashed_line(&result)?)?;
                classifications_file.flush()?;
                existing_classifications.push(result);
            }
        }
    }

    let todo: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|(p, i)| {
            !done.contains_key(&(
                run.probes[*p].id.clone(),
                run.interventions[*i].name.clone(),
            ))
        })
        .collect();

    let generated_now = todo.len();
    let reused = pairs.len() - todo.len();
    let mut new_results: BTreeMap<usize, (GenerationRecord, ClassifiedResult)> = BTreeMap::new();

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, GenerationRecord, ClassifiedResult)>();
    let workers = run.parallelism.max(1).min(todo.len().max(1));

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let todo = &todo;
            scope.spawn(move || loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                if slot >= todo.len() {
                    break;
                }
                let (p, i) = todo[slot];
                let probe = &run.probes[p];
                let intervention = &run.interventions[i];
                let (record, result) = execute_pair(run, probe, intervention);
                if tx.send((slot, record, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Single writer drains completions and persists them in canonical
        // order, buffering out-of-order arrivals.
        let mut pending: BTreeMap<usize, (GenerationRecord, ClassifiedResult)> = BTreeMap::new();
        let mut write_cursor = 0usize;
        for (slot, record, result) in rx {
            pending.insert(slot, (record, result));
            while let Some((record, result)) = pending.remove(&write_cursor) {
                writeln!(generations_file, "{}", to_hashed_line(&record)?)?;
                generations_file.flush()?;
                writeln!(classifications_file, "{}", to_hashed_line(&result)?)?;
                classifications_file.flush()?;
                let timing = serde_json::json!({
                    "probe_id": record.probe_id,
                    "intervention": record.intervention,
                    "millis": record.timing.as_millis() as u64,
                });
                writeln!(timings_file, "{timing}")?;
                timings_file.flush()?;
                new_results.insert(write_cursor, (record, result));
                write_cursor += 1;
            }
        }
        Ok(())
    })?;

    // Assemble the full result list in canonical pair order.
    let mut by_key: BTreeMap<(String, String), ClassifiedResult> = existing_classifications
        .into_iter()
        .map(|r| ((r.probe_id.clone(), r.intervention.clone()), r))
        .collect();
    for (_, (record, result)) in new_results {
        by_key.insert(
            (record.probe_id.clone(), record.intervention.clone()),
            result,
        );
    }
    let mut results = Vec::with_capacity(pairs.len());
    for (p, i) in &pairs {
        let key = (
            run.probes[*p].id.clone(),
            run.interventions[*i].name.clone(),
        );
        let result = by_key.remove(&key).ok_or_else(|| Error::Integrity {
            record_id: format!("{}/{}", key.0, key.1),
            reason: "pair missing after matrix execution".to_string(),
        })?;
        results.push(result);
    }

    Ok(MatrixOutcome {
        results,
        generated_now,
        reused,
    })
}

fn line_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        OpenOptions::new().create(true).append(true).open(path)?,
    ))
}

fn execute_pair(
    run: &MatrixRun<'_>,
    probe: &ProbeRecord,
    intervention: &Intervention,
) -> (GenerationRecord, ClassifiedResult) {
    let seed = derive_seed(run.sampler.seed, &probe.id, &intervention.name);
    let config = run.sampler.clone().with_seed(seed);
    let started = std::time::Instant::now();
    let mut record = generate(
        run.engine,
        &probe.prompt,
        intervention,
        &config,
        run.max_steps,
    )
    .unwrap_or_else(|e| GenerationRecord {
        probe_id: String::new(),
        dataset: String::new(),
        intervention: intervention.name.clone(),
        prompt: probe.prompt.clone(),
        tokens: Vec::new(),
        text: String::new(),
        cot_text: String::new(),
        answer_text: String::new(),
        mask_log: Vec::new(),
        split_anomaly: None,
        seed,
        engine: run.engine.identity(),
        config_hash: String::new(),
        error: Some(e.to_string()),
        timing: started.elapsed(),
    });
    record.probe_id = probe.id.clone();
    record.dataset = probe.dataset.clone();
    record.config_hash = run.config_hash.clone();
    let result = classify(&record, run.classifier);
    (record, result)
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or(Duration::ZERO)
        .as_secs()
}
