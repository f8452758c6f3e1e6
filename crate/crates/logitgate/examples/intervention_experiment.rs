//! The full experiment in-process: run matrix over the bundled fixture,
//! rule-based classification, class distributions, and significance tests.
//!
//! ```bash
//! cargo run -p logitgate --example intervention_experiment
//! ```

use std::path::Path;

use logitgate::engine::toy::ToyEngine;
use logitgate::engine::Engine;
use logitgate::harness::classifier::RuleBasedClassifier;
use logitgate::harness::dataset::load_dataset;
use logitgate::harness::runner::{run_matrix, MatrixRun, RunDir};
use logitgate::report::render_report;
use logitgate::stats::{class_distribution, pvalue_matrix, ClassAxis};
use logitgate::trigger::standard_interventions;
use logitgate::types::SamplerConfig;

fn main() -> logitgate::Result<()> {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ccp_sample.jsonl");
    let probes = load_dataset(&fixture)?;
    println!("loaded {} probes from {}", probes.len(), fixture.display());

    let engine = ToyEngine::canonical();
    let classifier = RuleBasedClassifier::canonical_toy();
    let interventions = standard_interventions(engine.specials());
    let sampler = SamplerConfig::identity(2024);

    let out = std::env::temp_dir().join(format!("logitgate-example-{}", std::process::id()));
    let run = MatrixRun {
        probes: &probes,
        interventions: &interventions,
        engine: &engine,
        classifier: &classifier,
        sampler: &sampler,
        max_steps: 64,
        parallelism: 4,
        config_hash: "example".to_string(),
    };
    let outcome = run_matrix(&run, &RunDir::new(&out), false)?;
    println!(
        "executed {} (probe, intervention) pairs\n",
        outcome.results.len()
    );

    let order: Vec<String> = interventions.iter().map(|iv| iv.name.clone()).collect();
    let answer_dist = class_distribution(&outcome.results, ClassAxis::Answer, &order);
    println!("answer-class proportions:");
    for group in &answer_dist.groups {
        let mut parts = Vec::new();
        for (label, proportion) in &group.proportions {
            if *proportion > 0.0 {
                parts.push(format!("{label} {:.2}", proportion));
            }
        }
        println!("  {:<16} {}", group.intervention, parts.join(", "));
    }

    let matrix = pvalue_matrix(&outcome.results, ClassAxis::Answer, "answered", &order)?;
    println!("\npairwise p-values for the answered proportion:");
    for pair in &matrix.pairs {
        println!(
            "  {} vs {:<16} p = {:.3e}",
            pair.intervention_a, pair.intervention_b, pair.result.p_two_sided
        );
    }

    let cot_dist = class_distribution(&outcome.results, ClassAxis::Cot, &order);
    let cot_matrix = pvalue_matrix(
        &outcome.results,
        ClassAxis::Cot,
        "relevant_coherent",
        &order,
    )?;
    let files = render_report(
        &[answer_dist, cot_dist],
        &[matrix, cot_matrix],
        &out.join("reports"),
    )?;
    println!("\nreport files:");
    for f in files {
        println!("  {}", f.display());
    }
    Ok(())
}
