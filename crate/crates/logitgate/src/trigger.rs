//! Token-level trigger engine: watches the emitted stream, activates
//! suppression rules at boundary points, and produces the per-step mask.
//!
//! The engine is purely positional. It never looks at decoded text, only at
//! token ids, and a rule fires whenever its trigger pattern matches the tail
//! of the stream, including on malformed streams that repeat a boundary
//! token (rules re-arm).

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::sampler::{SuppressionMask, SUPPRESS_SENTINEL};
use crate::types::{Intervention, RuleDuration, SpecialTokenMap, TokenId, TriggerRule};

/// Where the stream currently sits relative to the reasoning block.
/// Transitions only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenerationPhase {
    PreThink,
    InThink,
    PostThink,
    Terminated,
}

/// A rule that has fired and is still suppressing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveRule {
    pub name: String,
    pub suppress: BTreeSet<TokenId>,
    pub progress: ActiveProgress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActiveProgress {
    /// Hard suppression for this many more steps (always >= 1).
    Remaining(u32),
    /// Soft suppression following a decay schedule; `position` indexes the
    /// penalty applied at the next step.
    Decay { schedule: Vec<f64>, position: usize },
}

/// Per-session trigger state: the phase, currently active rules, and enough
/// of the stream tail to match trigger patterns against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerState {
    pub phase: GenerationPhase,
    pub active: Vec<ActiveRule>,
    pub emitted_count: u64,
    tail: VecDeque<TokenId>,
    tail_capacity: usize,
}

impl TriggerState {
    /// Fresh state sized for the given intervention's trigger patterns.
    pub fn new(intervention: &Intervention) -> Self {
        TriggerState {
            phase: GenerationPhase::PreThink,
            active: Vec::new(),
            emitted_count: 0,
            tail: VecDeque::new(),
            tail_capacity: intervention.max_trigger_len().max(1),
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.phase == GenerationPhase::Terminated
    }

    fn tail_matches(&self, pattern: &[TokenId]) -> bool {
        if pattern.is_empty() || pattern.len() > self.tail.len() {
            return false;
        }
        self.tail
            .iter()
            .rev()
            .zip(pattern.iter().rev())
            .all(|(a, b)| a == b)
    }
}

/// Advances the state by one emitted token.
///
/// In order: the token joins the stream tail, the phase advances on special
/// tokens, rules active before this emission consume one step (and expire),
/// and finally every rule whose trigger matches the new tail activates.
/// Pure function: the input state is untouched.
pub fn observe(
    state: &TriggerState,
    token: TokenId,
    intervention: &Intervention,
    specials: &SpecialTokenMap,
) -> TriggerState {
    if state.is_terminated() {
        // Callers stop at termination; observing further is a no-op.
        return state.clone();
    }
    let mut next = state.clone();
    next.emitted_count += 1;
    next.tail.push_back(token);
    while next.tail.len() > next.tail_capacity.max(intervention.max_trigger_len()) {
        next.tail.pop_front();
    }

    next.phase = advance_phase(next.phase, token, specials);

    // Rules active before this emission were consumed by the step that
    // produced it.
    next.active.retain_mut(|rule| match &mut rule.progress {
        ActiveProgress::Remaining(n) => {
            *n -= 1;
            *n >= 1
        }
        ActiveProgress::Decay { schedule, position } => {
            *position += 1;
            *position < schedule.len()
        }
    });

    for rule in &intervention.rules {
        if next.tail_matches(&rule.trigger) {
            next.active.push(activate(rule));
        }
    }

    next
}

fn advance_phase(
    phase: GenerationPhase,
    token: TokenId,
    specials: &SpecialTokenMap,
) -> GenerationPhase {
    use GenerationPhase::*;
    if token == specials.eos {
        return Terminated;
    }
    match phase {
        PreThink if token == specials.think_open => InThink,
        PreThink | InThink if token == specials.think_close => PostThink,
        other => other,
    }
}

fn activate(rule: &TriggerRule) -> ActiveRule {
    let progress = match &rule.duration {
        RuleDuration::Steps(n) => ActiveProgress::Remaining(*n),
        RuleDuration::Decay(schedule) => ActiveProgress::Decay {
            schedule: schedule.clone(),
            position: 0,
        },
    };
    ActiveRule {
        name: rule.name.clone(),
        suppress: rule.suppress.clone(),
        progress,
    }
}

/// Union of the suppression sets of all active rules. Step-duration rules
/// contribute the hard sentinel; decay rules contribute their scheduled
/// penalty. When rules overlap on a token the most severe penalty wins.
pub fn current_mask(state: &TriggerState) -> SuppressionMask {
    let mut mask = SuppressionMask::empty();
    for rule in &state.active {
        let penalty = match &rule.progress {
            ActiveProgress::Remaining(_) => SUPPRESS_SENTINEL,
            ActiveProgress::Decay { schedule, position } => schedule[*position],
        };
        for &token in &rule.suppress {
            mask.insert(token, penalty)
                .expect("active rule penalties are always <= 0");
        }
    }
    mask
}

/// Rule: once the think-open token appears, suppress the double-newline
/// token for the immediately following step.
pub fn suppress_nn_rule(specials: &SpecialTokenMap) -> TriggerRule {
    TriggerRule::new(
        "no-nn",
        vec![specials.think_open],
        [specials.double_newline],
        RuleDuration::Steps(1),
    )
    .expect("rule shape is statically valid")
}

/// Rule: once the think-close token appears, suppress EOS for `steps`
/// following steps (1 reproduces the standard intervention).
pub fn suppress_eos_rule(specials: &SpecialTokenMap, steps: u32) -> TriggerRule {
    TriggerRule::new(
        "no-eos",
        vec![specials.think_close],
        [specials.eos],
        RuleDuration::Steps(steps.max(1)),
    )
    .expect("rule shape is statically valid")
}

/// The three experimental arms: baseline (no rules), suppress-nn (block
/// double newline right after think-open), and suppress-nn-eos (additionally
/// block EOS right after think-close).
pub fn standard_interventions(specials: &SpecialTokenMap) -> Vec<Intervention> {
    standard_interventions_with_eos_hold(specials, 1)
}

/// Same as [`standard_interventions`] but holding the EOS suppression for
/// `eos_steps` steps after think-close.
pub fn standard_interventions_with_eos_hold(
    specials: &SpecialTokenMap,
    eos_steps: u32,
) -> Vec<Intervention> {
    vec![
        Intervention::baseline(),
        Intervention::new("suppress-nn", vec![suppress_nn_rule(specials)])
            .expect("static intervention"),
        Intervention::new(
            "suppress-nn-eos",
            vec![
                suppress_nn_rule(specials),
                suppress_eos_rule(specials, eos_steps),
            ],
        )
        .expect("static intervention"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SpecialTokenMap;

    fn specials() -> SpecialTokenMap {
        SpecialTokenMap::new(TokenId(0), TokenId(2), TokenId(1), TokenId(3)).unwrap()
    }

    fn nn_intervention() -> Intervention {
        Intervention::new("suppress-nn", vec![suppress_nn_rule(&specials())]).unwrap()
    }

    #[test]
    fn think_open_activates_nn_rule_for_one_step() {
        let sp = specials();
        let iv = nn_intervention();
        let state = TriggerState::new(&iv);
        assert_eq!(state.phase, GenerationPhase::PreThink);

        let state = observe(&state, sp.think_open, &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::InThink);
        assert_eq!(state.active.len(), 1);
        assert_eq!(state.active[0].name, "no-nn");

        let mask = current_mask(&state);
        assert_eq!(mask.get(sp.double_newline), Some(SUPPRESS_SENTINEL));

        // One ordinary token later the rule has expired.
        let state = observe(&state, TokenId(7), &iv, &sp);
        assert!(state.active.is_empty());
        assert!(current_mask(&state).is_empty());
    }

    #[test]
    fn think_close_activates_eos_rule() {
        let sp = specials();
        let iv = Intervention::new("x", vec![suppress_eos_rule(&sp, 1)]).unwrap();
        let state = TriggerState::new(&iv);
        let state = observe(&state, sp.think_open, &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::InThink);
        let state = observe(&state, sp.think_close, &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::PostThink);
        assert_eq!(state.active.len(), 1);
        assert_eq!(current_mask(&state).get(sp.eos), Some(SUPPRESS_SENTINEL));
    }

    #[test]
    fn ordinary_tokens_only_decrement_and_prune() {
        let sp = specials();
        let rule = TriggerRule::new(
            "hold",
            vec![sp.think_close],
            [sp.eos],
            RuleDuration::Steps(2),
        )
        .unwrap();
        let iv = Intervention::new("x", vec![rule]).unwrap();
        let mut state = TriggerState::new(&iv);
        state = observe(&state, sp.think_close, &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::PostThink);
        assert!(matches!(
            state.active[0].progress,
            ActiveProgress::Remaining(2)
        ));

        state = observe(&state, TokenId(9), &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::PostThink);
        assert!(matches!(
            state.active[0].progress,
            ActiveProgress::Remaining(1)
        ));

        state = observe(&state, TokenId(9), &iv, &sp);
        assert!(state.active.is_empty());
    }

    #[test]
    fn decay_schedule_penalty_follows_position() {
        let sp = specials();
        let rule = TriggerRule::new(
            "ease-off",
            vec![sp.think_open],
            [sp.think_close],
            RuleDuration::Decay(vec![-10.0, -5.0, -1.0, 0.0]),
        )
        .unwrap();
        let iv = Intervention::new("x", vec![rule]).unwrap();
        let mut state = TriggerState::new(&iv);
        state = observe(&state, sp.think_open, &iv, &sp);
        assert_eq!(current_mask(&state).get(sp.think_close), Some(-10.0));
        state = observe(&state, TokenId(7), &iv, &sp);
        assert_eq!(current_mask(&state).get(sp.think_close), Some(-5.0));
        state = observe(&state, TokenId(7), &iv, &sp);
        assert_eq!(current_mask(&state).get(sp.think_close), Some(-1.0));
        state = observe(&state, TokenId(7), &iv, &sp);
        assert_eq!(current_mask(&state).get(sp.think_close), Some(0.0));
        state = observe(&state, TokenId(7), &iv, &sp);
        assert!(current_mask(&state).is_empty());
    }

    #[test]
    fn eos_terminates_and_observation_becomes_noop() {
        let sp = specials();
        let iv = nn_intervention();
        let state = TriggerState::new(&iv);
        let state = observe(&state, sp.eos, &iv, &sp);
        assert!(state.is_terminated());
        let again = observe(&state, TokenId(5), &iv, &sp);
        assert_eq!(again, state);
    }

    #[test]
    fn phases_never_move_backward() {
        let sp = specials();
        let iv = nn_intervention();
        let mut state = TriggerState::new(&iv);
        state = observe(&state, sp.think_open, &iv, &sp);
        state = observe(&state, sp.think_close, &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::PostThink);
        // A second think-open cannot regress the phase...
        state = observe(&state, sp.think_open, &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::PostThink);
        // ...but the rule re-arms anyway.
        assert_eq!(state.active.len(), 1);
    }

    #[test]
    fn stray_think_close_still_moves_forward() {
        // Malformed stream: close marker with no open. Forward-only means
        // the phase jumps straight to PostThink.
        let sp = specials();
        let iv = nn_intervention();
        let state = observe(&TriggerState::new(&iv), sp.think_close, &iv, &sp);
        assert_eq!(state.phase, GenerationPhase::PostThink);
    }

    #[test]
    fn rules_rearm_on_repeated_trigger() {
        let sp = specials();
        let iv = nn_intervention();
        let mut state = TriggerState::new(&iv);
        state = observe(&state, sp.think_open, &iv, &sp);
        state = observe(&state, sp.think_open, &iv, &sp);
        // First activation expired, second is live.
        assert_eq!(state.active.len(), 1);
        assert_eq!(
            current_mask(&state).get(sp.double_newline),
            Some(SUPPRESS_SENTINEL)
        );
    }

    #[test]
    fn multi_token_trigger_matches_exact_tail() {
        let sp = specials();
        let rule = TriggerRule::new(
            "pair",
            vec![TokenId(7), TokenId(8)],
            [TokenId(9)],
            RuleDuration::Steps(1),
        )
        .unwrap();
        let iv = Intervention::new("x", vec![rule]).unwrap();
        let mut state = TriggerState::new(&iv);
        state = observe(&state, TokenId(8), &iv, &sp);
        assert!(state.active.is_empty());
        state = observe(&state, TokenId(7), &iv, &sp);
        assert!(state.active.is_empty());
        state = observe(&state, TokenId(8), &iv, &sp);
        assert_eq!(state.active.len(), 1);
    }

    #[test]
    fn observe_is_pure() {
        let sp = specials();
        let iv = nn_intervention();
        let state = TriggerState::new(&iv);
        let a = observe(&state, sp.think_open, &iv, &sp);
        let b = observe(&state, sp.think_open, &iv, &sp);
        assert_eq!(a, b);
        assert_eq!(state.phase, GenerationPhase::PreThink);
        assert_eq!(state.emitted_count, 0);
    }

    #[test]
    fn standard_interventions_have_expected_shapes() {
        let sp = specials();
        let arms = standard_interventions(&sp);
        assert_eq!(arms.len(), 3);
        assert_eq!(arms[0].name, "baseline");
        assert_eq!(arms[0].rules.len(), 0);
        assert_eq!(arms[1].name, "suppress-nn");
        assert_eq!(arms[1].rules.len(), 1);
        assert_eq!(arms[2].name, "suppress-nn-eos");
        assert_eq!(arms[2].rules.len(), 2);

        let nn = &arms[1].rules[0];
        assert_eq!(nn.trigger, vec![sp.think_open]);
        assert!(nn.suppress.contains(&sp.double_newline));
        assert_eq!(nn.duration, RuleDuration::Steps(1));

        let eos = &arms[2].rules[1];
        assert_eq!(eos.trigger, vec![sp.think_close]);
        assert!(eos.suppress.contains(&sp.eos));
        assert_eq!(eos.duration, RuleDuration::Steps(1));
    }

    #[test]
    fn overlapping_rules_keep_most_severe_penalty() {
        let sp = specials();
        let hard = TriggerRule::new(
            "hard",
            vec![sp.think_open],
            [TokenId(9)],
            RuleDuration::Steps(1),
        )
        .unwrap();
        let soft = TriggerRule::new(
            "soft",
            vec![sp.think_open],
            [TokenId(9)],
            RuleDuration::Decay(vec![-2.0]),
        )
        .unwrap();
        let iv = Intervention::new("x", vec![hard, soft]).unwrap();
        let state = observe(&TriggerState::new(&iv), sp.think_open, &iv, &sp);
        assert_eq!(
            current_mask(&state).get(TokenId(9)),
            Some(SUPPRESS_SENTINEL)
        );
    }
}
