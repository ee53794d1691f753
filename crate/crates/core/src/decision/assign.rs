use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{admissible_set, boin_toxicity_decision, AdmissibleSet, ToxDecision};
use crate::error::{Error, Result};
use crate::model::{AssignmentMode, DesignConfig, DoseState, UtilitySpec};
use crate::posterior::PosteriorSummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    Escalate,
    Stay,
    DeEscalate,
    EliminateAndDeEscalate,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    MaxSampleSize,
    PerDoseCap,
    LowestDoseEliminated,
    NoAdmissibleDose,
}

impl TerminationReason {
    /// Stops that end the trial with a dose selection rather than for safety or futility.
    pub fn is_completion(self) -> bool {
        matches!(self, TerminationReason::MaxSampleSize | TerminationReason::PerDoseCap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub kind: DecisionKind,
    pub next_dose: Option<usize>,
    /// Size of the next cohort; absent on termination.
    pub cohort_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<TerminationReason>,
    pub rationale: String,
}

impl Decision {
    fn terminate(reason: TerminationReason, rationale: impl Into<String>) -> Self {
        Decision {
            kind: DecisionKind::Terminate,
            next_dose: None,
            cohort_size: None,
            termination: Some(reason),
            rationale: rationale.into(),
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.kind == DecisionKind::Terminate
    }
}

/// Normalized assignment probabilities over a set of doses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationWeights {
    pub dose_indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl RandomizationWeights {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (d, w) in self.dose_indices.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *d;
            }
        }
        *self.dose_indices.last().expect("non-empty weights")
    }
}

/// `omega_j = U_j / sum U` over the admissible set, uniform if every utility is zero.
pub fn randomization_weights(summaries: &[PosteriorSummary], admissible: &AdmissibleSet) -> Result<RandomizationWeights> {
    weights_over(summaries, &admissible.dose_indices, AssignmentMode::AdaptiveRandomization)
}

fn weights_over(summaries: &[PosteriorSummary], doses: &[usize], mode: AssignmentMode) -> Result<RandomizationWeights> {
    if doses.is_empty() {
        return Err(Error::EmptyAdmissibleSet);
    }
    let utilities = doses
        .iter()
        .map(|d| {
            summaries
                .iter()
                .find(|s| s.dose_index == *d)
                .map(|s| s.mean_utility.max(0.0))
                .ok_or_else(|| Error::InvalidArgument(format!("no summary for dose {d}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = utilities.iter().sum();
    let weights = if mode == AssignmentMode::EqualRandomization || total <= 0.0 {
        vec![1.0 / doses.len() as f64; doses.len()]
    } else {
        utilities.iter().map(|u| u / total).collect()
    };
    Ok(RandomizationWeights {
        dose_indices: doses.to_vec(),
        weights,
    })
}

/// Everything [`next_dose`] looks at.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    /// One-based index of the dose the last cohort received.
    pub current: usize,
    /// Per-dose states, index `j - 1` for dose `j`.
    pub states: &'a [DoseState],
    pub summaries: &'a [PosteriorSummary],
    pub spec: &'a UtilitySpec,
    /// Single-patient titration still running.
    pub titration_active: bool,
}

/// Chooses the dose for the next cohort.
///
/// In order: the sample-size cap; accelerated titration; elimination of the lowest
/// toxic dose and everything above it; the BOIN gate on the current dose's DLT rate, which
/// limits candidates to the neighbors `{current - 1, current, current + 1}`; exploration of
/// an untested next dose on escalation; and finally the assignment mode over admissible
/// tested candidates. A selected dose that has reached the per-dose cap ends the trial.
pub fn next_dose<R: Rng + ?Sized>(ctx: &DecisionContext<'_>, config: &DesignConfig, rng: &mut R) -> Result<Decision> {
    let num_doses = ctx.states.len();
    let c = ctx.current;
    if c == 0 || c > num_doses {
        return Err(Error::InvalidArgument(format!("current dose {c} outside 1..={num_doses}")));
    }
    if ctx.summaries.len() != num_doses {
        return Err(Error::DimensionMismatch {
            expected: num_doses,
            actual: ctx.summaries.len(),
        });
    }
    let enrolled: u32 = ctx.states.iter().map(|s| s.n_enrolled).sum();
    if enrolled >= config.max_n {
        return Ok(Decision::terminate(
            TerminationReason::MaxSampleSize,
            format!("maximum sample size {} reached", config.max_n),
        ));
    }
    let remaining = config.max_n - enrolled;
    let state = &ctx.states[c - 1];
    let mut notes = Vec::new();

    if ctx.titration_active {
        if state.toxicity_count(ctx.spec) == 0 && c < num_doses {
            return Ok(Decision {
                kind: DecisionKind::Escalate,
                next_dose: Some(c + 1),
                cohort_size: Some(1),
                termination: None,
                rationale: "accelerated titration: no trigger-grade toxicity; escalate with a single patient".into(),
            });
        }
        notes.push("accelerated titration over".to_string());
    }

    let admissible = admissible_set(ctx.summaries, config);
    let floor = admissible.elimination_floor();
    if floor == Some(1) {
        return Ok(Decision::terminate(
            TerminationReason::LowestDoseEliminated,
            "lowest dose fails the toxicity criterion",
        ));
    }
    if let Some(f) = floor {
        notes.push(format!("doses {f}..={num_doses} eliminated for toxicity"));
    }
    let eliminated = |d: usize| floor.is_some_and(|f| d >= f);
    let viable_anywhere =
        (1..=num_doses).any(|d| !eliminated(d) && (admissible.contains(d) || ctx.states[d - 1].n() == 0));
    if !viable_anywhere {
        return Ok(Decision::terminate(TerminationReason::NoAdmissibleDose, "no admissible dose remains"));
    }

    let n = state.n();
    let gate = if n == 0 {
        notes.push(format!("no evaluable patients at dose {c}"));
        ToxDecision::Stay
    } else {
        let n_tox = state.toxicity_count(ctx.spec);
        let g = boin_toxicity_decision(n_tox, n, config.lambda_e, config.lambda_d)?;
        notes.push(format!(
            "DLT rate {n_tox}/{n} = {:.4} against ({:.4}, {:.4}): {}",
            n_tox as f64 / n as f64,
            config.lambda_e,
            config.lambda_d,
            g.as_str()
        ));
        g
    };

    let decide = |target: usize, mut notes: Vec<String>| -> Decision {
        let enrolled = ctx.states[target - 1].n_enrolled;
        if enrolled >= config.per_dose_cap {
            notes.push(format!("dose {target} has reached the per-dose cap of {}", config.per_dose_cap));
            return Decision::terminate(TerminationReason::PerDoseCap, notes.join("; "));
        }
        let kind = if target > c {
            DecisionKind::Escalate
        } else if target == c {
            DecisionKind::Stay
        } else if eliminated(c) {
            DecisionKind::EliminateAndDeEscalate
        } else {
            DecisionKind::DeEscalate
        };
        Decision {
            kind,
            next_dose: Some(target),
            cohort_size: Some(config.cohort_size.min(remaining).min(config.per_dose_cap - enrolled)),
            termination: None,
            rationale: notes.join("; "),
        }
    };

    // A dose left with a partial cohort when titration ends is filled first.
    if state.n_enrolled < config.cohort_size && gate != ToxDecision::DeEscalate && !eliminated(c) {
        notes.push(format!("completing a full cohort at dose {c}"));
        return Ok(decide(c, notes));
    }

    let neighbors: Vec<usize> = match gate {
        ToxDecision::Escalate => vec![c.saturating_sub(1), c, c + 1],
        ToxDecision::Stay => vec![c.saturating_sub(1), c],
        ToxDecision::DeEscalate => vec![c.saturating_sub(1).max(1)],
    };
    let neighbors: Vec<usize> = neighbors
        .into_iter()
        .filter(|&d| d >= 1 && d <= num_doses && !eliminated(d))
        .collect();

    if gate == ToxDecision::Escalate && neighbors.contains(&(c + 1)) && ctx.states[c].n() == 0 {
        notes.push(format!("dose {} untested; escalate without skipping", c + 1));
        return Ok(decide(c + 1, notes));
    }

    let options: Vec<usize> = neighbors.iter().copied().filter(|&d| admissible.contains(d)).collect();
    if options.is_empty() {
        if c > 1 && !eliminated(c - 1) && (admissible.contains(c - 1) || ctx.states[c - 2].n() == 0) {
            notes.push("no admissible candidate among neighbors; move down".into());
            return Ok(decide(c - 1, notes));
        }
        notes.push("no admissible candidate among neighbors".into());
        return Ok(Decision::terminate(TerminationReason::NoAdmissibleDose, notes.join("; ")));
    }

    let target = match config.assignment_mode {
        AssignmentMode::Deterministic => {
            let mut best = options[0];
            for &d in &options[1..] {
                if ctx.summaries[d - 1].mean_utility > ctx.summaries[best - 1].mean_utility {
                    best = d;
                }
            }
            notes.push(format!("highest posterior mean utility among {options:?}"));
            best
        }
        mode => {
            let w = weights_over(ctx.summaries, &options, mode)?;
            let d = w.sample(rng);
            notes.push(format!("randomized over {:?} with weights {:?}", w.dose_indices, round4(&w.weights)));
            d
        }
    };
    Ok(decide(target, notes))
}

fn round4(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
