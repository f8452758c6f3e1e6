//! Resumable, hash-protected run persistence.
//!
//! Runs a matrix, truncates the record files to simulate a kill, resumes,
//! and shows that the resumed directory is byte-identical to one produced
//! without any interruption.
//!
//! ```bash
//! cargo run -p logitgate --example resumable_runs
//! ```

use std::path::Path;

use logitgate::engine::toy::ToyEngine;
use logitgate::engine::Engine;
use logitgate::harness::classifier::RuleBasedClassifier;
use logitgate::harness::dataset::load_dataset;
use logitgate::harness::runner::{run_matrix, MatrixRun, RunDir};
use logitgate::trigger::standard_interventions;
use logitgate::types::SamplerConfig;

fn main() -> logitgate::Result<()> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ccp_sample.jsonl");
    let probes = load_dataset(&fixture)?;
    let engine = ToyEngine::canonical();
    let classifier = RuleBasedClassifier::canonical_toy();
    let interventions = standard_interventions(engine.specials());
    let sampler = SamplerConfig::identity(7);
    let run = MatrixRun {
        probes: &probes,
        interventions: &interventions,
        engine: &engine,
        classifier: &classifier,
        sampler: &sampler,
        max_steps: 64,
        parallelism: 4,
        config_hash: "resume-example".to_string(),
    };

    let base = std::env::temp_dir().join(format!("logitgate-resume-{}", std::process::id()));
    let complete = RunDir::new(base.join("complete"));
    let outcome = run_matrix(&run, &complete, false)?;
    println!(
        "uninterrupted run: {} pairs into {}",
        outcome.results.len(),
        complete.root().display()
    );

    // Simulate a crash: keep only the first 100 of 180 generation lines
    // (and 99 classifications, as if killed between the two writes).
    let interrupted = RunDir::new(base.join("interrupted"));
    std::fs::create_dir_all(interrupted.root())?;
    let generations = std::fs::read_to_string(complete.generations_path())?;
    let classifications = std::fs::read_to_string(complete.classifications_path())?;
    let keep = |text: &str, n: usize| -> String {
        text.lines().take(n).map(|l| format!("{l}\n")).collect()
    };
    std::fs::write(interrupted.generations_path(), keep(&generations, 100))?;
    std::fs::write(
        interrupted.classifications_path(),
        keep(&classifications, 99),
    )?;
    println!("simulated kill at 100/180 generations (99 classifications)");

    let resumed = run_matrix(&run, &interrupted, true)?;
    println!(
        "resume: {} pairs generated now, {} reused",
        resumed.generated_now, resumed.reused
    );

    let identical = std::fs::read(complete.generations_path())?
        == std::fs::read(interrupted.generations_path())?
        && std::fs::read(complete.classifications_path())?
            == std::fs::read(interrupted.classifications_path())?;
    println!("resumed files byte-identical to the uninterrupted run: {identical}");

    // Every persisted line carries a hash over the record's exact bytes,
    // so tampering is caught at read time and named.
    let path = interrupted.classifications_path();
    let tampered = std::fs::read_to_string(&path)?.replacen("\"refusal\"", "\"answered\"", 1);
    std::fs::write(&path, tampered)?;
    match interrupted.load_classifications() {
        Err(e) => println!("tamper detection: {e}"),
        Ok(_) => println!("tamper detection failed!"),
    }
    Ok(())
}
