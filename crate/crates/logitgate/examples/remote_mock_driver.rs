//! Driving an OpenAI-compatible server one token at a time, with the
//! current suppression mask re-issued as the request's logit bias.
//!
//! The server here is the bundled mock (backed by the toy model); point
//! `RemoteConfig` at a real endpoint to drive an actual model the same way.
//!
//! ```bash
//! cargo run -p logitgate --example remote_mock_driver
//! ```

use logitgate::engine::mock::MockServer;
use logitgate::engine::remote::{RemoteConfig, RemoteEngine};
use logitgate::engine::toy::ToyModelSpec;
use logitgate::engine::{generate, Engine};
use logitgate::trigger::standard_interventions;
use logitgate::types::SamplerConfig;

fn main() -> logitgate::Result<()> {
    let server = MockServer::start(ToyModelSpec::canonical())?;
    println!("mock completion server listening at {}", server.url());

    let spec = ToyModelSpec::canonical();
    let remote = RemoteConfig::new(server.url(), "toy-canonical", spec.specials.clone());
    let engine = RemoteEngine::new(remote);

    for intervention in standard_interventions(engine.specials()) {
        let config = SamplerConfig::identity(5);
        let before = server.request_count();
        let record = generate(&engine, "a probe question", &intervention, &config, 64)?;
        let requests = server.request_count() - before;

        println!("\n[{}]", intervention.name);
        println!(
            "  emitted {} tokens in {} requests",
            record.tokens.len(),
            requests
        );
        println!("  text: {:?}", record.text);
        for (step, mask) in record.mask_log.iter().enumerate() {
            if !mask.is_empty() {
                let bias: Vec<String> = mask
                    .iter()
                    .map(|(token, _)| format!("{token}: -100"))
                    .collect();
                println!("  step {step} carried logit_bias {{{}}}", bias.join(", "));
            }
        }
    }

    println!("\ntotal requests served: {}", server.request_count());
    Ok(())
}
