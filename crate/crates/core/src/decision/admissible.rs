use serde::{Deserialize, Serialize};

use super::TestedDose;
use crate::error::Result;
use crate::model::{DesignConfig, DoseState, UtilitySpec};
use crate::posterior::{summarize, PosteriorSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseFlags {
    pub dose_index: usize,
    pub toxic: bool,
    pub futile: bool,
    pub untested: bool,
}

/// Doses passing both the toxic and futile gates. Untested doses carry no flags and are
/// never members; they remain reachable by escalation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissibleSet {
    pub dose_indices: Vec<usize>,
    pub flags: Vec<DoseFlags>,
}

impl AdmissibleSet {
    pub fn contains(&self, dose_index: usize) -> bool {
        self.dose_indices.contains(&dose_index)
    }

    pub fn flags_of(&self, dose_index: usize) -> Option<&DoseFlags> {
        self.flags.iter().find(|f| f.dose_index == dose_index)
    }

    pub fn is_empty(&self) -> bool {
        self.dose_indices.is_empty()
    }

    /// Lowest tested dose failing the toxic gate. It and every dose above it are eliminated.
    pub fn elimination_floor(&self) -> Option<usize> {
        self.flags.iter().filter(|f| f.toxic).map(|f| f.dose_index).min()
    }

    pub fn is_eliminated(&self, dose_index: usize) -> bool {
        self.elimination_floor().is_some_and(|floor| dose_index >= floor)
    }
}

/// Applies the admissibility gates: toxic if `prob_toxic > delta_t`, futile if
/// `prob_futile > delta_e`.
pub fn admissible_set(summaries: &[PosteriorSummary], config: &DesignConfig) -> AdmissibleSet {
    let flags: Vec<DoseFlags> = summaries
        .iter()
        .map(|s| {
            let untested = s.n == 0;
            DoseFlags {
                dose_index: s.dose_index,
                toxic: !untested && s.prob_toxic > config.delta_t,
                futile: !untested && s.prob_futile > config.delta_e,
                untested,
            }
        })
        .collect();
    let dose_indices = flags
        .iter()
        .filter(|f| !(f.untested || f.toxic || f.futile))
        .map(|f| f.dose_index)
        .collect();
    AdmissibleSet { dose_indices, flags }
}

/// Posterior summaries of every dose, in dose order.
pub fn evaluate_doses(states: &[DoseState], spec: &UtilitySpec, config: &DesignConfig) -> Result<Vec<PosteriorSummary>> {
    states.iter().map(|s| summarize(s, spec, config)).collect()
}

/// Toxicity data of doses with evaluable patients.
pub fn tested_doses(states: &[DoseState], spec: &UtilitySpec) -> Vec<TestedDose> {
    states
        .iter()
        .filter(|s| s.is_tested())
        .map(|s| TestedDose::new(s.dose_index, s.toxicity_count(spec), s.n()))
        .collect()
}
