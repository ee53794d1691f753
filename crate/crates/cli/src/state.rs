//! The `trial.json` snapshot read by `decide`, `obd` and `tipping`.

use doseopt::conduct::{DesignVariant, TrialDesign};
use doseopt::estimand::{derive_outcome, PatientRecord, StrategyMap};
use doseopt::model::{tally_outcomes, DerivedOutcome, DesignConfig, DoseGrid, DoseState, SchemaVersion, UtilitySpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateFile {
    #[serde(default)]
    pub version: SchemaVersion,
    #[serde(default)]
    pub config: Option<DesignConfig>,
    #[serde(default, alias = "spec")]
    pub utility: Option<UtilitySpec>,
    #[serde(default)]
    pub grid: Option<DoseGrid>,
    #[serde(default)]
    pub strategy_map: Option<StrategyMap>,
    #[serde(default)]
    pub records: Vec<PatientRecord>,
    #[serde(default)]
    pub current_dose: Option<usize>,
    #[serde(default)]
    pub titration_active: bool,
    #[serde(default)]
    pub variant: DesignVariant,
    #[serde(default)]
    pub seed: u64,
}

pub const STATE_HELP: &str = "\
trial.json fields (all optional except where noted):
  version            schema version, \"v1\"
  config             design config (defaults to the case-study design): prior_alpha, phi_t,
                     phi_e, delta_t, delta_e, lambda_e, lambda_d, target_phi, cohort_size,
                     max_n, per_dose_cap, assignment_mode (deterministic |
                     adaptive_randomization | equal_randomization), accelerated_titration
                     {trigger_grade, trigger_dose_index}, futility_rule
                     (efficacy_below_limit | efficacy_above_limit), start_dose
  utility            utility spec {categories: [{efficacy_flag, toxicity_flag, psi}]};
                     alias `spec`; defaults to scores (0, 10, 60, 100)
  grid               dose grid {doses: [{index, label, amount, unit}]}; defaults to the eight
                     case-study levels
  strategy_map       ICE strategy map {entries: {ice_key: strategy}, efficacy_success_set,
                     dlt_window_days, dose_switch_attribution, analysis_stratum}
  records            patient records [{patient_id, dose_index, first_dose_day, events,
                     stratum_label, baseline_ok}]
  current_dose       dose of the most recent cohort; defaults to the last record's dose
  titration_active   single-patient titration still running (default false)
  variant            boin12 | toxicity_only
  seed               seed for randomized assignment modes";

impl StateFile {
    pub fn design(&self) -> TrialDesign {
        let base = TrialDesign::case_study();
        TrialDesign::new(
            self.config.clone().unwrap_or(base.config),
            self.utility.clone().unwrap_or(base.spec),
            self.grid.clone().unwrap_or(base.grid),
            self.strategy_map.clone().unwrap_or(base.strategy_map),
        )
    }

    pub fn current(&self, design: &TrialDesign) -> usize {
        self.current_dose
            .or_else(|| self.records.last().map(|r| r.dose_index))
            .unwrap_or(design.config.start_dose)
    }

    pub fn derive(&self, design: &TrialDesign) -> doseopt::Result<(Vec<DerivedOutcome>, Vec<DoseState>)> {
        let outcomes = self
            .records
            .iter()
            .map(|r| derive_outcome(r, &design.strategy_map, &design.spec))
            .collect::<doseopt::Result<Vec<_>>>()?;
        let states = tally_outcomes(&outcomes, design.num_doses(), design.spec.k())?;
        Ok((outcomes, states))
    }
}
