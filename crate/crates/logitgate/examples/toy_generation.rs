//! Generating from the scripted refusal-branching model under the three
//! intervention arms, plus the refusal frequency over many seeds.
//!
//! ```bash
//! cargo run -p logitgate --example toy_generation
//! ```

use logitgate::engine::toy::ToyEngine;
use logitgate::engine::{generate, Engine};
use logitgate::trigger::standard_interventions;
use logitgate::types::SamplerConfig;

fn main() -> logitgate::Result<()> {
    let engine = ToyEngine::canonical();
    let specials = engine.specials().clone();
    let arms = standard_interventions(&specials);

    println!("single seeded generation per arm:");
    for arm in &arms {
        // The toy model's transition probabilities are the distribution we
        // want to sample, so use the identity pipeline.
        let config = SamplerConfig::identity(12);
        let record = generate(&engine, "a probe question", arm, &config, 64)?;
        println!("\n[{}]", arm.name);
        println!(
            "  tokens: {:?}",
            record.tokens.iter().map(|t| t.0).collect::<Vec<_>>()
        );
        println!("  text:   {:?}", record.text);
        println!("  cot:    {:?}", record.cot_text);
        println!("  answer: {:?}", record.answer_text);
    }

    println!("\nrefusal-pattern frequency over 500 seeds:");
    for arm in &arms {
        let mut refusals = 0;
        let mut empty_answers = 0;
        for seed in 0..500 {
            let config = SamplerConfig::identity(seed);
            let record = generate(&engine, "a probe question", arm, &config, 64)?;
            if record.contains_bigram(specials.think_open, specials.double_newline) {
                refusals += 1;
            }
            if record.answer_text.trim().is_empty() {
                empty_answers += 1;
            }
        }
        println!(
            "  {:<16} refusal branch {:>5.1}%   empty answer {:>5.1}%",
            arm.name,
            refusals as f64 / 5.0,
            empty_answers as f64 / 5.0
        );
    }
    Ok(())
}
