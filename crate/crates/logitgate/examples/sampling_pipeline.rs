//! The logit-to-token pipeline, stage by stage.
//!
//! ```bash
//! cargo run -p logitgate --example sampling_pipeline
//! ```

use logitgate::sampler::{
    apply_mask, apply_repetition_penalty, apply_temperature, sample, softmax, top_p_filter,
    LogitVector, SuppressionMask, SUPPRESS_SENTINEL,
};
use logitgate::types::{SamplerConfig, TokenId};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(label: &str, values: &[f64]) {
    let rendered: Vec<String> = values
        .iter()
        .map(|v| {
            if *v == SUPPRESS_SENTINEL {
                "-inf".to_string()
            } else {
                format!("{v:.4}")
            }
        })
        .collect();
    println!("{label:<22} [{}]", rendered.join(", "));
}

fn main() -> logitgate::Result<()> {
    let logits = LogitVector::new(vec![2.0, 1.2, 0.4, -0.6, -2.0])?;
    show("raw logits", logits.values());

    // Token 0 already appeared, so the repetition penalty shrinks it.
    let history = vec![TokenId(0)];
    let penalized = apply_repetition_penalty(&logits, &history, 1.1)?;
    show("after penalty 1.1", penalized.values());

    let scaled = apply_temperature(&penalized, 0.6)?;
    show("after temperature", scaled.values());

    // Hard-suppress token 1: its probability must end at exactly zero.
    let mut mask = SuppressionMask::empty();
    mask.insert(TokenId(1), SUPPRESS_SENTINEL)?;
    mask.insert(TokenId(2), -0.5)?; // soft penalty
    let masked = apply_mask(&scaled, &mask)?;
    show("after mask", masked.values());

    let probs = softmax(&masked)?;
    show("softmax", &probs);
    assert_eq!(probs[1], 0.0);

    let nucleus = top_p_filter(&probs, 0.95)?;
    show("top-p 0.95", &nucleus);

    // Draw a few tokens; the masked token can never appear.
    let config = SamplerConfig::default().with_seed(7);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draws = Vec::new();
    for _ in 0..12 {
        let token = sample(&logits, &config, &history, &mask, &mut rng)?;
        assert_ne!(token, TokenId(1));
        draws.push(token.0.to_string());
    }
    println!("{:<22} [{}]", "12 seeded draws", draws.join(", "));

    // The worked nucleus example: [0.5, 0.3, 0.2] at top-p 0.7 keeps the
    // first two tokens and renormalizes to [0.625, 0.375, 0].
    let filtered = top_p_filter(&[0.5, 0.3, 0.2], 0.7)?;
    show("nucleus of [.5,.3,.2]", &filtered);
    Ok(())
}
