//! Trial conduct: the state machine that takes cohorts of patient records, derives their
//! outcomes under the current strategy map and issues the next decision.
//!
//! [`TrialState`] is deliberately free of randomness and I/O. A decision is computed by
//! [`TrialState::recommend`] and committed separately by [`TrialState::apply_decision`], so
//! a replay of recorded decisions reproduces the state without re-drawing random
//! assignments.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decision::{
    admissible_set, evaluate_doses, next_dose, obd_from_states, toxicity_only_next_dose, toxicity_only_selection,
    Decision, DecisionContext, ObdSelection, TerminationReason,
};
use crate::error::{Error, Result};
use crate::estimand::{derive_outcome, PatientRecord, StrategyMap};
use crate::model::{tally_outcomes, DerivedOutcome, DesignConfig, DoseGrid, DoseState, UtilitySpec};
use crate::posterior::PosteriorSummary;

/// Which dose-finding rule drives the trial.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignVariant {
    #[default]
    Boin12,
    ToxicityOnly,
}

/// The fixed inputs of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    pub config: DesignConfig,
    pub spec: UtilitySpec,
    pub grid: DoseGrid,
    #[serde(default)]
    pub strategy_map: StrategyMap,
}

impl TrialDesign {
    pub fn new(config: DesignConfig, spec: UtilitySpec, grid: DoseGrid, strategy_map: StrategyMap) -> Self {
        TrialDesign {
            config,
            spec,
            grid,
            strategy_map,
        }
    }

    /// The case-study design on its eight-level grid with the default strategy map.
    pub fn case_study() -> Self {
        TrialDesign::new(
            DesignConfig::case_study(),
            UtilitySpec::example(),
            DoseGrid::case_study(),
            StrategyMap::case_study_default(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let report = self.spec.validate();
        if !report.is_valid() {
            return Err(Error::InvalidUtilitySpec(report.violations.join("; ")));
        }
        self.grid.validate()?;
        self.config.check(&self.spec, self.grid.len())
    }

    pub fn num_doses(&self) -> usize {
        self.grid.len()
    }
}

/// Mutable conduct state of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub variant: DesignVariant,
    pub records: Vec<PatientRecord>,
    pub outcomes: Vec<DerivedOutcome>,
    pub states: Vec<DoseState>,
    /// Dose the next cohort receives.
    pub current_dose: usize,
    /// Size of the next cohort.
    pub next_cohort_size: u32,
    /// Single-patient titration still running.
    pub titration_active: bool,
    pub cohorts_entered: u32,
    pub decisions: Vec<Decision>,
    pub termination: Option<TerminationReason>,
}

impl TrialState {
    pub fn new(design: &TrialDesign, variant: DesignVariant) -> Result<Self> {
        design.validate()?;
        let cfg = &design.config;
        let titration_active = cfg
            .accelerated_titration
            .is_some_and(|at| cfg.start_dose < at.trigger_dose_index);
        Ok(TrialState {
            variant,
            records: Vec::new(),
            outcomes: Vec::new(),
            states: (1..=design.num_doses()).map(|d| DoseState::empty(d, design.spec.k())).collect(),
            current_dose: cfg.start_dose,
            next_cohort_size: if titration_active { 1 } else { cfg.cohort_size.min(cfg.max_n) },
            titration_active,
            cohorts_entered: 0,
            decisions: Vec::new(),
            termination: None,
        })
    }

    pub fn is_terminated(&self) -> bool {
        self.termination.is_some()
    }

    pub fn total_enrolled(&self) -> u32 {
        self.states.iter().map(|s| s.n_enrolled).sum()
    }

    /// Adds a cohort treated at the current dose and re-derives all outcomes.
    pub fn enter_cohort(&mut self, design: &TrialDesign, cohort: Vec<PatientRecord>) -> Result<Vec<DerivedOutcome>> {
        if let Some(reason) = self.termination {
            return Err(Error::TrialTerminated(format!("{reason:?}")));
        }
        if cohort.is_empty() {
            return Err(Error::InvalidArgument("a cohort needs at least one patient".into()));
        }
        let enrolled = self.total_enrolled() as usize;
        if enrolled + cohort.len() > design.config.max_n as usize {
            return Err(Error::InvalidArgument(format!(
                "cohort of {} would exceed the maximum sample size {} ({enrolled} enrolled)",
                cohort.len(),
                design.config.max_n
            )));
        }
        let mut seen: std::collections::HashSet<&str> = self.records.iter().map(|r| r.patient_id.as_str()).collect();
        for r in &cohort {
            r.validate()?;
            if r.dose_index != self.current_dose {
                return Err(Error::InvalidRecord {
                    patient_id: r.patient_id.clone(),
                    reason: format!("treated at dose {}, but the current dose is {}", r.dose_index, self.current_dose),
                });
            }
            if !seen.insert(r.patient_id.as_str()) {
                return Err(Error::InvalidRecord {
                    patient_id: r.patient_id.clone(),
                    reason: "duplicate patient id".into(),
                });
            }
        }
        let derived = cohort
            .iter()
            .map(|r| derive_outcome(r, &design.strategy_map, &design.spec))
            .collect::<Result<Vec<_>>>()?;

        if let Some(at) = design.config.accelerated_titration {
            if cohort.iter().any(|r| r.max_toxicity_grade() >= at.trigger_grade) {
                self.titration_active = false;
            }
        }
        self.records.extend(cohort);
        self.outcomes.extend(derived.iter().cloned());
        self.states = tally_outcomes(&self.outcomes, design.num_doses(), design.spec.k())?;
        self.cohorts_entered += 1;
        Ok(derived)
    }

    /// Replaces the strategy map and re-derives every outcome.
    pub fn rederive(&mut self, design: &TrialDesign) -> Result<()> {
        self.outcomes = self
            .records
            .iter()
            .map(|r| derive_outcome(r, &design.strategy_map, &design.spec))
            .collect::<Result<Vec<_>>>()?;
        self.states = tally_outcomes(&self.outcomes, design.num_doses(), design.spec.k())?;
        Ok(())
    }

    fn titration_in_force(&self, design: &TrialDesign) -> bool {
        self.titration_active
            && design
                .config
                .accelerated_titration
                .is_some_and(|at| self.current_dose < at.trigger_dose_index)
    }

    pub fn summaries(&self, design: &TrialDesign) -> Result<Vec<PosteriorSummary>> {
        evaluate_doses(&self.states, &design.spec, &design.config)
    }

    /// The decision the rules give on the current data, without committing it.
    pub fn recommend<R: Rng + ?Sized>(&self, design: &TrialDesign, rng: &mut R) -> Result<Decision> {
        if let Some(last) = self.decisions.last().filter(|d| d.is_terminal()) {
            return Ok(last.clone());
        }
        let summaries = self.summaries(design)?;
        let ctx = DecisionContext {
            current: self.current_dose,
            states: &self.states,
            summaries: &summaries,
            spec: &design.spec,
            titration_active: self.titration_in_force(design),
        };
        match self.variant {
            DesignVariant::Boin12 => next_dose(&ctx, &design.config, rng),
            DesignVariant::ToxicityOnly => toxicity_only_next_dose(&ctx, &design.config),
        }
    }

    /// Commits a decision: moves the current dose or ends the trial.
    pub fn apply_decision(&mut self, decision: Decision) -> Result<()> {
        if self.termination.is_some() {
            return Err(Error::TrialTerminated("decision after termination".into()));
        }
        match (decision.next_dose, decision.termination) {
            (Some(next), None) => {
                if next == 0 || next > self.states.len() {
                    return Err(Error::InvalidArgument(format!("decision targets unknown dose {next}")));
                }
                self.current_dose = next;
                self.next_cohort_size = decision.cohort_size.unwrap_or(1).max(1);
                if self.next_cohort_size > 1 {
                    self.titration_active = false;
                }
            }
            (None, Some(reason)) => self.termination = Some(reason),
            _ => {
                return Err(Error::InvalidArgument(
                    "a decision carries either a next dose or a termination reason".into(),
                ))
            }
        }
        self.decisions.push(decision);
        Ok(())
    }

    /// Final selection: the OBD for BOIN12, the isotonic MTD for the toxicity-only design.
    /// No selection after a safety or futility stop.
    pub fn selection(&self, design: &TrialDesign) -> Result<FinalSelection> {
        let early = self.termination.is_some_and(|t| !t.is_completion());
        let (summaries, obd) = obd_from_states(&self.states, &design.spec, &design.config)?;
        let selected = match (early, self.variant) {
            (true, _) => None,
            (false, DesignVariant::Boin12) => obd.obd,
            (false, DesignVariant::ToxicityOnly) => {
                let floor = admissible_set(&summaries, &design.config).elimination_floor();
                toxicity_only_selection(&self.states, &design.spec, &design.config, floor)
            }
        };
        Ok(FinalSelection {
            selected,
            early_termination: early,
            obd,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalSelection {
    pub selected: Option<usize>,
    pub early_termination: bool,
    pub obd: ObdSelection,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::DecisionKind;
    use crate::estimand::{Event, ResponseGrade};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn patient(id: &str, dose: usize, resp: ResponseGrade, grade: Option<(u8, bool)>) -> PatientRecord {
        let mut r = PatientRecord::new(id, dose);
        if let Some((g, dlt)) = grade {
            r = r.with_event(Event::toxicity(7, g, dlt));
        }
        r.with_event(Event::assessment(56, resp))
    }

    #[test]
    fn titration_then_cohorts() {
        let design = TrialDesign::case_study();
        let mut st = TrialState::new(&design, DesignVariant::Boin12).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert_eq!((st.current_dose, st.next_cohort_size), (1, 1));
        st.enter_cohort(&design, vec![patient("a", 1, ResponseGrade::SD, None)]).unwrap();
        let d = st.recommend(&design, &mut rng).unwrap();
        assert_eq!((d.kind, d.next_dose, d.cohort_size), (DecisionKind::Escalate, Some(2), Some(1)));
        st.apply_decision(d).unwrap();
        st.enter_cohort(&design, vec![patient("b", 2, ResponseGrade::PR, Some((2, false)))]).unwrap();
        assert!(!st.titration_active);
        let d = st.recommend(&design, &mut rng).unwrap();
        assert_eq!((d.next_dose, d.cohort_size), (Some(2), Some(3)));
    }

    #[test]
    fn titration_ends_at_trigger_dose() {
        let design = TrialDesign::case_study();
        let mut st = TrialState::new(&design, DesignVariant::Boin12).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        for dose in 1..=5 {
            assert_eq!(st.current_dose, dose);
            st.enter_cohort(&design, vec![patient(&format!("p{dose}"), dose, ResponseGrade::PR, None)])
                .unwrap();
            let d = st.recommend(&design, &mut rng).unwrap();
            st.apply_decision(d).unwrap();
        }
        assert_eq!((st.current_dose, st.next_cohort_size), (5, 3));
    }

    #[test]
    fn rejects_wrong_dose_duplicates_and_terminated() {
        let design = TrialDesign::case_study();
        let mut st = TrialState::new(&design, DesignVariant::Boin12).unwrap();
        assert!(st.enter_cohort(&design, vec![patient("a", 2, ResponseGrade::SD, None)]).is_err());
        assert!(st
            .enter_cohort(
                &design,
                vec![patient("a", 1, ResponseGrade::SD, None), patient("a", 1, ResponseGrade::SD, None)]
            )
            .is_err());
        st.enter_cohort(&design, vec![patient("a", 1, ResponseGrade::SD, Some((3, true)))]).unwrap();
        assert!(st.enter_cohort(&design, vec![patient("a", 1, ResponseGrade::SD, None)]).is_err());
        st.apply_decision(Decision {
            kind: DecisionKind::Terminate,
            next_dose: None,
            cohort_size: None,
            termination: Some(TerminationReason::NoAdmissibleDose),
            rationale: String::new(),
        })
        .unwrap();
        let err = st.enter_cohort(&design, vec![patient("z", 1, ResponseGrade::SD, None)]).unwrap_err();
        assert!(matches!(err, Error::TrialTerminated(_)));
        assert_eq!(st.selection(&design).unwrap().selected, None);
    }
}
