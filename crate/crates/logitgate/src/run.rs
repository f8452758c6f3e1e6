//! High-level run operations: validate, execute, report, re-classify.
//! The CLI is a thin wrapper over these.

use std::path::{Path, PathBuf};

use crate::config::{resolve_run, RunConfig};
use crate::error::{Error, Result};
use crate::harness::classifier::Classifier;
use crate::harness::dataset::{category_counts, dataset_sha256, load_dataset};
use crate::harness::runner::{run_matrix, unix_now, DatasetInfo, MatrixRun, RunDir, RunManifest};
use crate::record::{to_hashed_line, ClassifiedResult};
use crate::report::render_report;
use crate::stats::{class_distribution, pvalue_matrix, ClassAxis, PvalueMatrix};
use crate::types::RuleDuration;

/// What `validate` reports for a well-formed config.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub engine: String,
    pub classifier: String,
    pub specials: Vec<(String, u32)>,
    pub interventions: Vec<String>,
    pub dataset_path: PathBuf,
    pub dataset_records: usize,
    pub dataset_categories: Vec<(String, usize)>,
    pub config_hash: String,
}

/// Parses, resolves, and cross-checks a run config, including the dataset
/// file it references.
pub fn validate_config(config: &RunConfig, config_dir: &Path) -> Result<ValidationReport> {
    let resolved = resolve_run(config, config_dir)?;
    let probes = load_dataset(&resolved.dataset_path)?;
    let counts = category_counts(&probes);
    Ok(ValidationReport {
        engine: resolved.engine.identity(),
        classifier: resolved.classifier.identity(),
        specials: resolved
            .engine
            .specials()
            .fields()
            .into_iter()
            .map(|(name, id)| (name.to_string(), id.0))
            .collect(),
        interventions: resolved
            .interventions
            .iter()
            .map(|iv| {
                let mut line = format!("{} ({} rules)", iv.name, iv.rules.len());
                for rule in &iv.rules {
                    let trigger: Vec<String> = rule.trigger.iter().map(|t| t.to_string()).collect();
                    let suppress: Vec<String> =
                        rule.suppress.iter().map(|t| t.to_string()).collect();
                    let duration = match &rule.duration {
                        RuleDuration::Steps(n) => format!("{n} step(s)"),
                        RuleDuration::Decay(s) => format!("decay {s:?}"),
                    };
                    line.push_str(&format!(
                        "\n    {}: trigger [{}] suppresses {{{}}} for {}",
                        rule.name,
                        trigger.join(", "),
                        suppress.join(", "),
                        duration
                    ));
                }
                line
            })
            .collect(),
        dataset_path: resolved.dataset_path.clone(),
        dataset_records: probes.len(),
        dataset_categories: counts.into_iter().collect(),
        config_hash: resolved.config_hash,
    })
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub results: Vec<ClassifiedResult>,
    pub generated_now: usize,
    pub reused: usize,
}

/// Executes the full experiment described by the config: dataset load,
/// matrix over all interventions, incremental persistence, manifest.
pub fn execute_run(config: &RunConfig, config_dir: &Path, resume: bool) -> Result<RunOutcome> {
    let resolved = resolve_run(config, config_dir)?;
    resolved.preflight()?;
    let probes = load_dataset(&resolved.dataset_path)?;
    let dir = RunDir::new(&resolved.output_dir);

    // Refuse a dirty directory before touching its manifest, so a failed
    // invocation cannot damage an existing run's metadata.
    if !resume && dir.generations_path().exists() {
        return Err(Error::Config {
            path: dir.generations_path(),
            reason: "run directory already contains generations; pass resume to continue"
                .to_string(),
        });
    }

    if resume && dir.manifest_path().exists() {
        let manifest = dir.load_manifest()?;
        if manifest.config_hash != resolved.config_hash {
            return Err(Error::Integrity {
                record_id: "manifest".to_string(),
                reason: format!(
                    "resume config hash {} does not match run manifest {}",
                    resolved.config_hash, manifest.config_hash
                ),
            });
        }
        let current_dataset = dataset_sha256(&resolved.dataset_path)?;
        if manifest.dataset.sha256 != current_dataset {
            return Err(Error::Integrity {
                record_id: "manifest".to_string(),
                reason: format!(
                    "dataset {} changed since the run started (was {}, now {})",
                    resolved.dataset_path.display(),
                    manifest.dataset.sha256,
                    current_dataset
                ),
            });
        }
    }

    let dataset_name = probes
        .first()
        .map(|p| p.dataset.clone())
        .unwrap_or_default();
    let mut manifest = RunManifest {
        config_hash: resolved.config_hash.clone(),
        engine: resolved.engine.identity(),
        classifier: resolved.classifier.identity(),
        sampler: resolved.sampler.clone(),
        seed: config.seed,
        max_steps: resolved.max_steps,
        parallelism: resolved.parallelism,
        interventions: resolved.interventions.clone(),
        dataset: DatasetInfo {
            name: dataset_name,
            path: resolved.dataset_path.display().to_string(),
            sha256: dataset_sha256(&resolved.dataset_path)?,
            records: probes.len(),
            categories: category_counts(&probes),
        },
        pairs_total: probes.len() * resolved.interventions.len(),
        started_at_unix: unix_now(),
        finished_at_unix: None,
    };
    if resume && dir.manifest_path().exists() {
        // Keep the original start time on resume.
        manifest.started_at_unix = dir.load_manifest()?.started_at_unix;
    }
    dir.write_manifest(&manifest)?;

    let run = MatrixRun {
        probes: &probes,
        interventions: &resolved.interventions,
        engine: resolved.engine.as_ref(),
        classifier: resolved.classifier.as_ref(),
        sampler: &resolved.sampler,
        max_steps: resolved.max_steps,
        parallelism: resolved.parallelism,
        config_hash: resolved.config_hash.clone(),
    };
    let outcome = run_matrix(&run, &dir, resume)?;

    manifest.finished_at_unix = Some(unix_now());
    dir.write_manifest(&manifest)?;

    Ok(RunOutcome {
        run_dir: resolved.output_dir,
        results: outcome.results,
        generated_now: outcome.generated_now,
        reused: outcome.reused,
    })
}

/// Target classes for the significance matrices.
#[derive(Debug, Clone)]
pub struct ReportTargets {
    pub answer_target: String,
    pub cot_target: String,
}

impl Default for ReportTargets {
    fn default() -> Self {
        ReportTargets {
            answer_target: "answered".to_string(),
            cot_target: "relevant_coherent".to_string(),
        }
    }
}

/// Builds distribution tables and p-value matrices from a completed run
/// directory and writes the report files.
pub fn write_reports(
    run_dir: &Path,
    out_dir: Option<&Path>,
    targets: &ReportTargets,
) -> Result<Vec<PathBuf>> {
    let dir = RunDir::new(run_dir);
    let manifest = dir.load_manifest()?;
    let results = dir.load_classifications()?;
    if results.is_empty() {
        return Err(Error::Report(format!(
            "{} contains no classifications",
            run_dir.display()
        )));
    }
    let order: Vec<String> = manifest
        .interventions
        .iter()
        .map(|iv| iv.name.clone())
        .collect();

    let distributions = vec![
        class_distribution(&results, ClassAxis::Answer, &order),
        class_distribution(&results, ClassAxis::Cot, &order),
    ];
    let matrices = if order.len() >= 2 {
        vec![
            pvalue_matrix(&results, ClassAxis::Answer, &targets.answer_target, &order)?,
            pvalue_matrix(&results, ClassAxis::Cot, &targets.cot_target, &order)?,
        ]
    } else {
        // A single-arm run still renders (header-only) p-value files.
        vec![
            PvalueMatrix {
                axis: ClassAxis::Answer,
                target_class: targets.answer_target.clone(),
                interventions: order.clone(),
                pairs: Vec::new(),
            },
            PvalueMatrix {
                axis: ClassAxis::Cot,
                target_class: targets.cot_target.clone(),
                interventions: order.clone(),
                pairs: Vec::new(),
            },
        ]
    };
    let out = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dir.reports_dir());
    render_report(&distributions, &matrices, &out)
}

/// Re-classifies every stored generation with the given classifier,
/// rewriting the classifications file. Generations are never touched.
pub fn reclassify(run_dir: &Path, classifier: &dyn Classifier) -> Result<usize> {
    let dir = RunDir::new(run_dir);
    let generations = dir.load_generations()?;
    if generations.is_empty() {
        return Err(Error::Report(format!(
            "{} contains no generations",
            run_dir.display()
        )));
    }
    let mut lines = String::new();
    let mut count = 0;
    for record in &generations {
        let result = crate::harness::classifier::classify(record, classifier);
        lines.push_str(&to_hashed_line(&result)?);
        lines.push('\n');
        count += 1;
    }
    std::fs::write(dir.classifications_path(), lines)?;
    Ok(count)
}
