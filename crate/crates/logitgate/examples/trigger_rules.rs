//! Trigger rules in action: the standard arms plus a custom decaying rule.
//!
//! ```bash
//! cargo run -p logitgate --example trigger_rules
//! ```

use logitgate::sampler::SUPPRESS_SENTINEL;
use logitgate::trigger::{current_mask, observe, standard_interventions, TriggerState};
use logitgate::types::{Intervention, RuleDuration, SpecialTokenMap, TokenId, TriggerRule};

fn mask_text(state: &TriggerState) -> String {
    let mask = current_mask(state);
    if mask.is_empty() {
        return "(empty)".to_string();
    }
    mask.iter()
        .map(|(token, penalty)| {
            if penalty == SUPPRESS_SENTINEL {
                format!("{token}: hard")
            } else {
                format!("{token}: {penalty}")
            }
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn walk(name: &str, intervention: &Intervention, specials: &SpecialTokenMap, stream: &[TokenId]) {
    println!(
        "\n== {name} over stream {:?}",
        stream.iter().map(|t| t.0).collect::<Vec<_>>()
    );
    let mut state = TriggerState::new(intervention);
    for token in stream {
        state = observe(&state, *token, intervention, specials);
        println!(
            "  after token {:>2}: phase {:?}, next-step mask: {}",
            token.0,
            state.phase,
            mask_text(&state)
        );
    }
}

fn main() -> logitgate::Result<()> {
    let specials = SpecialTokenMap::new(TokenId(0), TokenId(2), TokenId(1), TokenId(3))?
        .with_texts("<think>", "</think>", "\n\n", "<|eos|>");

    // A plausible emission: <think>, reasoning tokens, </think>, answer.
    let stream = [
        TokenId(0), // <think>
        TokenId(7),
        TokenId(8),
        TokenId(2), // </think>
        TokenId(10),
        TokenId(3), // eos
    ];

    for intervention in standard_interventions(&specials) {
        walk(&intervention.name, &intervention, &specials, &stream);
    }

    // The abandoned early-close variant, expressed as a decaying rule:
    // after <think>, discourage </think> with penalties that ease off.
    let decay = TriggerRule::new(
        "ease-off-close",
        vec![specials.think_open],
        [specials.think_close],
        RuleDuration::Decay(vec![-12.0, -8.0, -4.0, -2.0, -1.0, 0.0]),
    )?;
    let intervention = Intervention::new("decay-close", vec![decay])?;
    walk("decay-close", &intervention, &specials, &stream);

    Ok(())
}
