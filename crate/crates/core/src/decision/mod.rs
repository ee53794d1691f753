//! Dose-finding rules: BOIN toxicity boundaries, admissibility gates, the isotonic MTD,
//! OBD selection and next-cohort assignment.

mod admissible;
mod assign;
mod boin;
mod comparator;
mod isotonic;
mod obd;
mod table;

pub use admissible::{admissible_set, evaluate_doses, tested_doses, AdmissibleSet, DoseFlags};
pub use assign::{
    next_dose, randomization_weights, Decision, DecisionContext, DecisionKind, RandomizationWeights, TerminationReason,
};
pub use comparator::{toxicity_only_next_dose, toxicity_only_selection};
pub use boin::{boin_boundaries, boin_toxicity_decision, ToxDecision};
pub use isotonic::{estimate_mtd, isotonic_tox_estimates, pava, TestedDose};
pub use obd::{obd_from_states, select_obd, ObdSelection};
pub use table::{decision_table, DecisionTable, DecisionTableRow};
