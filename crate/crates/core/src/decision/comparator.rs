//! Toxicity-only BOIN: the classical interval design that ignores efficacy and selects
//! the isotonic MTD at the target DLT rate. Used as a reference in simulation studies.

use super::{
    admissible_set, boin_toxicity_decision, estimate_mtd, tested_doses, Decision, DecisionContext, DecisionKind,
    TerminationReason, ToxDecision,
};
use crate::error::{Error, Result};
use crate::model::{DesignConfig, DoseState, UtilitySpec};

/// Next dose under toxicity-only BOIN: escalate, stay or de-escalate by the DLT rate at the
/// current dose, never into a dose eliminated by the toxic gate.
pub fn toxicity_only_next_dose(ctx: &DecisionContext<'_>, config: &DesignConfig) -> Result<Decision> {
    let num_doses = ctx.states.len();
    let c = ctx.current;
    if c == 0 || c > num_doses {
        return Err(Error::InvalidArgument(format!("current dose {c} outside 1..={num_doses}")));
    }
    let terminate = |reason, rationale: String| Decision {
        kind: DecisionKind::Terminate,
        next_dose: None,
        cohort_size: None,
        termination: Some(reason),
        rationale,
    };
    let enrolled: u32 = ctx.states.iter().map(|s| s.n_enrolled).sum();
    if enrolled >= config.max_n {
        return Ok(terminate(
            TerminationReason::MaxSampleSize,
            format!("maximum sample size {} reached", config.max_n),
        ));
    }
    let remaining = config.max_n - enrolled;
    let state = &ctx.states[c - 1];

    if ctx.titration_active && state.toxicity_count(ctx.spec) == 0 && c < num_doses {
        return Ok(Decision {
            kind: DecisionKind::Escalate,
            next_dose: Some(c + 1),
            cohort_size: Some(1),
            termination: None,
            rationale: "accelerated titration: escalate with a single patient".into(),
        });
    }

    let floor = admissible_set(ctx.summaries, config).elimination_floor();
    if floor == Some(1) {
        return Ok(terminate(
            TerminationReason::LowestDoseEliminated,
            "lowest dose fails the toxicity criterion".into(),
        ));
    }
    let top = floor.map_or(num_doses, |f| f - 1);

    let gate = if state.n() == 0 {
        ToxDecision::Stay
    } else {
        boin_toxicity_decision(state.toxicity_count(ctx.spec), state.n(), config.lambda_e, config.lambda_d)?
    };
    let filling = state.n_enrolled < config.cohort_size && gate != ToxDecision::DeEscalate && c <= top;
    let target = if filling {
        c
    } else {
        match gate {
            ToxDecision::Escalate => (c + 1).min(top),
            ToxDecision::Stay => c.min(top),
            ToxDecision::DeEscalate => c.saturating_sub(1).max(1).min(top),
        }
    };
    let rationale = format!("toxicity-only BOIN: {} at dose {c}", gate.as_str());
    if ctx.states[target - 1].n_enrolled >= config.per_dose_cap {
        return Ok(terminate(
            TerminationReason::PerDoseCap,
            format!("{rationale}; dose {target} has reached the per-dose cap"),
        ));
    }
    let kind = match target.cmp(&c) {
        std::cmp::Ordering::Greater => DecisionKind::Escalate,
        std::cmp::Ordering::Equal => DecisionKind::Stay,
        std::cmp::Ordering::Less if floor.is_some_and(|f| c >= f) => DecisionKind::EliminateAndDeEscalate,
        std::cmp::Ordering::Less => DecisionKind::DeEscalate,
    };
    Ok(Decision {
        kind,
        next_dose: Some(target),
        cohort_size: Some(
            config
                .cohort_size
                .min(remaining)
                .min(config.per_dose_cap - ctx.states[target - 1].n_enrolled),
        ),
        termination: None,
        rationale,
    })
}

/// Isotonic MTD at the target DLT rate among tested doses below any eliminated dose.
pub fn toxicity_only_selection(
    states: &[DoseState],
    spec: &UtilitySpec,
    config: &DesignConfig,
    elimination_floor: Option<usize>,
) -> Option<usize> {
    let tested: Vec<_> = tested_doses(states, spec)
        .into_iter()
        .filter(|d| elimination_floor.is_none_or(|f| d.dose_index < f))
        .collect();
    estimate_mtd(&tested, config.target_phi).ok()
}
