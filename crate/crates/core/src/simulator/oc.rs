use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{replication_rng, simulate_patient, Scenario, RNG_ALGORITHM};
use crate::conduct::{DesignVariant, TrialDesign, TrialState};
use crate::decision::{Decision, TerminationReason};
use crate::error::{Error, Result};
use crate::model::{Category, SchemaVersion};

/// One cohort of a simulated trial and the decision that followed it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortLog {
    pub cohort: u32,
    pub dose_index: usize,
    pub patient_ids: Vec<String>,
    pub categories: Vec<Option<Category>>,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub variant: DesignVariant,
    /// Selected dose: the OBD for BOIN12, the MTD for the toxicity-only design.
    pub selected: Option<usize>,
    pub mtd: Option<usize>,
    pub per_dose_n: Vec<u32>,
    pub per_dose_dlt: Vec<u32>,
    pub total_n: u32,
    pub termination: TerminationReason,
    pub early_termination: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<CohortLog>,
}

fn check_dims(scenario: &Scenario, design: &TrialDesign) -> Result<()> {
    scenario.validate()?;
    design.validate()?;
    if scenario.num_doses() != design.num_doses() {
        return Err(Error::DimensionMismatch {
            expected: design.num_doses(),
            actual: scenario.num_doses(),
        });
    }
    Ok(())
}

fn simulate(
    scenario: &Scenario,
    design: &TrialDesign,
    variant: DesignVariant,
    rng: &mut ChaCha20Rng,
    keep_trace: bool,
) -> Result<TrialResult> {
    let mut state = TrialState::new(design, variant)?;
    let j = design.num_doses();
    let mut dlt = vec![0u32; j];
    let mut trace = Vec::new();
    let mut next_id = 1u32;
    loop {
        let dose = state.current_dose;
        let mut cohort = Vec::with_capacity(state.next_cohort_size as usize);
        for _ in 0..state.next_cohort_size {
            let rec = simulate_patient(scenario, dose, format!("P{next_id:03}"), rng)?;
            next_id += 1;
            if rec.events.iter().any(|e| matches!(e.kind, crate::estimand::EventKind::Toxicity { dlt: true, .. })) {
                dlt[dose - 1] += 1;
            }
            cohort.push(rec);
        }
        let ids: Vec<String> = cohort.iter().map(|r| r.patient_id.clone()).collect();
        let derived = state.enter_cohort(design, cohort)?;
        let decision = state.recommend(design, rng)?;
        if keep_trace {
            trace.push(CohortLog {
                cohort: state.cohorts_entered,
                dose_index: dose,
                patient_ids: ids,
                categories: derived.iter().map(|o| o.category).collect(),
                decision: decision.clone(),
            });
        }
        let terminal = decision.is_terminal();
        state.apply_decision(decision)?;
        if terminal {
            break;
        }
    }
    let selection = state.selection(design)?;
    let termination = state.termination.expect("loop ends on termination");
    Ok(TrialResult {
        variant,
        selected: selection.selected,
        mtd: selection.obd.mtd,
        per_dose_n: state.states.iter().map(|s| s.n_enrolled).collect(),
        per_dose_dlt: dlt,
        total_n: state.total_enrolled(),
        termination,
        early_termination: selection.early_termination,
        trace,
    })
}

/// Runs one complete virtual trial: accelerated titration, then cohort-wise enrollment
/// until a stopping rule fires. Seeded like replication 0 of a study with this seed.
pub fn run_trial(scenario: &Scenario, design: &TrialDesign, variant: DesignVariant, seed: u64) -> Result<TrialResult> {
    check_dims(scenario, design)?;
    simulate(scenario, design, variant, &mut replication_rng(seed, 0), true)
}

/// Summary of many replications of the same design under one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub version: SchemaVersion,
    pub rng_algorithm: String,
    pub master_seed: u64,
    pub reps: u64,
    pub variant: DesignVariant,
    pub scenario_name: String,
    /// Number of replications selecting each dose.
    pub selection_counts: Vec<u64>,
    pub none_count: u64,
    pub obd_selection_pct: Vec<f64>,
    pub none_selection_pct: f64,
    pub mean_patients: Vec<f64>,
    pub mean_total_n: f64,
    pub early_termination_pct: f64,
    pub mean_dlt_count: f64,
    /// Highest true utility among truly admissible doses.
    pub true_optimal_dose: Option<usize>,
    pub correct_selection_pct: f64,
}

impl OperatingCharacteristics {
    /// Per-dose CSV summary: `dose,selection_pct,mean_patients`, then a `none` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dose,selection_pct,mean_patients\n");
        for (i, (s, m)) in self.obd_selection_pct.iter().zip(&self.mean_patients).enumerate() {
            out.push_str(&format!("{},{s:.2},{m:.4}\n", i + 1));
        }
        out.push_str(&format!("none,{:.2},\n", self.none_selection_pct));
        out
    }

    /// Most frequently selected dose (ties to the lower dose), ignoring "none".
    pub fn modal_selection(&self) -> Option<usize> {
        let max = *self.selection_counts.iter().max()?;
        (max > 0).then(|| self.selection_counts.iter().position(|c| *c == max).unwrap() + 1)
    }
}

/// Runs `reps` replications on `parallelism` threads and aggregates them.
///
/// Replication `r` uses [`replication_rng`]`(master_seed, r)` and results are merged in
/// replication order, so the output does not depend on `parallelism`.
pub fn operating_characteristics(
    scenario: &Scenario,
    design: &TrialDesign,
    variant: DesignVariant,
    reps: u64,
    master_seed: u64,
    parallelism: usize,
) -> Result<OperatingCharacteristics> {
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    check_dims(scenario, design)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<TrialResult> = pool.install(|| {
        (0..reps)
            .into_par_iter()
            .map(|r| simulate(scenario, design, variant, &mut replication_rng(master_seed, r), false))
            .collect::<Result<Vec<_>>>()
    })?;

    let j = design.num_doses();
    let mut selection_counts = vec![0u64; j];
    let mut none_count = 0u64;
    let mut patients = vec![0u64; j];
    let mut total_dlt = 0u64;
    let mut early = 0u64;
    for r in &results {
        match r.selected {
            Some(d) => selection_counts[d - 1] += 1,
            None => none_count += 1,
        }
        for (p, n) in patients.iter_mut().zip(&r.per_dose_n) {
            *p += u64::from(*n);
        }
        total_dlt += r.per_dose_dlt.iter().map(|x| u64::from(*x)).sum::<u64>();
        early += u64::from(r.early_termination);
    }
    let n = reps as f64;
    let pct = |c: u64| 100.0 * c as f64 / n;
    let true_optimal_dose = scenario.optimal_dose(&design.spec, design.config.phi_t, design.config.phi_e)?;
    let correct = match true_optimal_dose {
        Some(d) => selection_counts[d - 1],
        None => none_count,
    };
    Ok(OperatingCharacteristics {
        version: SchemaVersion::V1,
        rng_algorithm: RNG_ALGORITHM.to_string(),
        master_seed,
        reps,
        variant,
        scenario_name: scenario.name.clone(),
        obd_selection_pct: selection_counts.iter().map(|c| pct(*c)).collect(),
        none_selection_pct: pct(none_count),
        mean_patients: patients.iter().map(|p| *p as f64 / n).collect(),
        mean_total_n: patients.iter().sum::<u64>() as f64 / n,
        early_termination_pct: pct(early),
        mean_dlt_count: total_dlt as f64 / n,
        true_optimal_dose,
        correct_selection_pct: pct(correct),
        selection_counts,
        none_count,
    })
}
