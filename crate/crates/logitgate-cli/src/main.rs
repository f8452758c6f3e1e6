//! Thin command-line front end over the `logitgate` library.
//!
//! Exit codes: 0 success, 2 configuration errors, 3 environment errors
//! (missing API keys, unreachable servers), 4 data-integrity failures,
//! 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use logitgate::config::{build_classifier, load_config};
use logitgate::harness::ingest::{builtin_source, fetch_dataset, FetchOptions, FetchSource};
use logitgate::run::{execute_run, reclassify, validate_config, write_reports, ReportTargets};
use logitgate::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "logitgate",
    version,
    about = "Positional logit suppression experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a run config; print the resolved setup.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Execute the run matrix: generations, classifications, manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Continue an interrupted run without re-running completed pairs.
        #[arg(long)]
        resume: bool,
        /// Override the config's parallelism.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render distribution tables and p-value matrices from a run.
    Report {
        run_dir: PathBuf,
        /// Write report files here instead of <run_dir>/reports.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Target class for the answer-side significance matrix.
        #[arg(long, default_value = "answered")]
        answer_target: String,
        /// Target class for the reasoning-side significance matrix.
        #[arg(long, default_value = "relevant_coherent")]
        cot_target: String,
    },
    /// Re-classify stored generations with the config's classifier.
    Classify {
        run_dir: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Download a public probe dataset and convert it to the record schema.
    Fetch {
        /// Built-in source name (`ccp`, `deccp`) or any name pinned in the
        /// config's `[fetch.<name>]` section.
        dataset: String,
        /// Destination JSONL file.
        #[arg(long)]
        out: PathBuf,
        /// Config file providing `[fetch.<name>]` URL/hash pins and the seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the source URL.
        #[arg(long)]
        url: Option<String>,
        /// Pin the expected SHA-256 of the download.
        #[arg(long)]
        sha256: Option<String>,
        /// Keep only these categories (comma-separated).
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
        /// Sample this many records per category (seeded shuffle).
        #[arg(long)]
        sample_per_category: Option<usize>,
        /// Shuffle seed; defaults to the config seed or 0.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Environment => 3,
                ErrorKind::Integrity => 4,
                ErrorKind::Runtime => 1,
            })
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Validate { config } => {
            let (parsed, dir) = load_config(&config)?;
            let report = validate_config(&parsed, &dir)?;
            println!("config: valid");
            println!("engine: {}", report.engine);
            println!("classifier: {}", report.classifier);
            println!("config hash: {}", report.config_hash);
            println!("special tokens:");
            for (name, id) in &report.specials {
                println!("  {name} = {id}");
            }
            println!("interventions:");
            for iv in &report.interventions {
                println!("  {iv}");
            }
            println!(
                "dataset: {} ({} records)",
                report.dataset_path.display(),
                report.dataset_records
            );
            for (category, count) in &report.dataset_categories {
                println!("  {category}: {count}");
            }
            Ok(())
        }
        Command::Run {
            config,
            resume,
            parallelism,
            out,
        } => {
            let (mut parsed, dir) = load_config(&config)?;
            if let Some(p) = parallelism {
                parsed.parallelism = p;
            }
            if let Some(out) = out {
                // CLI paths are relative to the caller's working directory.
                parsed.output_dir = std::env::current_dir()?.join(out);
            }
            let outcome = execute_run(&parsed, &dir, resume)?;
            println!("run directory: {}", outcome.run_dir.display());
            println!(
                "pairs: {} total, {} generated now, {} reused",
                outcome.results.len(),
                outcome.generated_now,
                outcome.reused
            );
            Ok(())
        }
        Command::Report {
            run_dir,
            out,
            answer_target,
            cot_target,
        } => {
            let targets = ReportTargets {
                answer_target,
                cot_target,
            };
            let files = write_reports(&run_dir, out.as_deref(), &targets)?;
            for file in files {
                println!("wrote {}", file.display());
            }
            Ok(())
        }
        Command::Classify { run_dir, config } => {
            let (parsed, _) = load_config(&config)?;
            let classifier = build_classifier(&parsed.classifier);
            classifier.preflight()?;
            let count = reclassify(&run_dir, classifier.as_ref())?;
            println!("re-classified {count} generations");
            Ok(())
        }
        Command::Fetch {
            dataset,
            out,
            config,
            url,
            sha256,
            categories,
            sample_per_category,
            seed,
        } => {
            let mut source = builtin_source(&dataset).unwrap_or(FetchSource {
                name: dataset.clone(),
                url: String::new(),
                format: logitgate::harness::ingest::SourceFormat::Jsonl,
                sha256: None,
                prompt_column: "prompt".to_string(),
                category_column: None,
            });
            let mut options = FetchOptions {
                categories,
                sample_per_category,
                seed: seed.unwrap_or(0),
            };
            if let Some(config_path) = config {
                let (parsed, _) = load_config(&config_path)?;
                if seed.is_none() {
                    options.seed = parsed.seed;
                }
                if let Some(pin) = parsed.fetch.get(&dataset) {
                    if let Some(u) = &pin.url {
                        source.url = u.clone();
                    }
                    if let Some(h) = &pin.sha256 {
                        source.sha256 = Some(h.clone());
                    }
                }
            }
            if let Some(u) = url {
                source.url = u;
            }
            if let Some(h) = sha256 {
                source.sha256 = Some(h);
            }
            if source.url.is_empty() {
                return Err(Error::invalid_field(
                    "url",
                    format!("no built-in source named {dataset:?} and no URL provided"),
                ));
            }
            let report = fetch_dataset(&source, &options, &out)?;
            println!(
                "wrote {} ({} records)",
                report.dest.display(),
                report.records
            );
            println!("source sha256: {}", report.source_sha256);
            if source.sha256.is_none() {
                println!("note: no pinned hash; pin this one in [fetch.{dataset}] to verify future fetches");
            }
            for (category, count) in &report.categories {
                println!("  {category}: {count}");
            }
            Ok(())
        }
    }
}
