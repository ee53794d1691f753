//! Monte Carlo simulation of complete trials under known true dose-outcome curves.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`). Replication `r` of a study with master
//! seed `s` draws from the generator seeded with `s` on stream `r`, so each replication
//! is a pure function of `(s, r)` no matter how replications are scheduled over threads.

mod oc;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimand::{Event, IceKey, IceType, PatientRecord, ResponseGrade, SurgeryReason};
use crate::model::{DoseGrid, SchemaVersion, UtilitySpec};

pub use oc::{operating_characteristics, run_trial, CohortLog, OperatingCharacteristics, TrialResult};

/// Identity of the random number generator, pinned in every simulation output.
pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.3); replication r uses stream r of the master seed";

/// Generator for replication `rep` of a study seeded with `master_seed`.
pub fn replication_rng(master_seed: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(rep);
    rng
}

/// Probability of an intercurrent event, either shared by all doses or per dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IceProbability {
    Constant(f64),
    PerDose(Vec<f64>),
}

impl IceProbability {
    pub fn at(&self, dose_index: usize) -> f64 {
        match self {
            IceProbability::Constant(p) => *p,
            IceProbability::PerDose(v) => v[dose_index - 1],
        }
    }
}

/// True state of nature for a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub version: SchemaVersion,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub dose_grid: DoseGrid,
    /// True DLT probability per dose.
    pub true_tox: Vec<f64>,
    /// True response probability per dose.
    pub true_eff: Vec<f64>,
    /// Odds ratio between efficacy and toxicity; 1 means independence.
    #[serde(default = "one")]
    pub eff_tox_correlation: f64,
    #[serde(default)]
    pub ice_probabilities: BTreeMap<IceKey, IceProbability>,
    /// Fraction of patients labeled with the principal stratum `S1` (the rest get `S0`).
    #[serde(default = "one")]
    pub stratum_fraction: f64,
    /// Chance that a patient who discontinues is later seen in complete response.
    #[serde(default)]
    pub post_ice_response_prob: f64,
    /// Chance of a grade-2 adverse event, below the DLT threshold, per dose.
    #[serde(default)]
    pub low_grade_ae_prob: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

/// Day of the efficacy assessment in synthetic timelines.
pub const ASSESSMENT_DAY: i64 = 56;
/// Day of the dose-limiting toxicity in synthetic timelines.
pub const DLT_DAY: i64 = 14;
/// Day of the grade-2 adverse event in synthetic timelines.
pub const LOW_GRADE_AE_DAY: i64 = 7;
/// Stratum label of principal-stratum members.
pub const PRINCIPAL_STRATUM: &str = "S1";

/// Day on which each ICE type is placed in a synthetic timeline.
pub fn ice_day(key: IceKey) -> i64 {
    match key {
        IceKey::AdaOccurrence => 8,
        IceKey::Nonadherence => 12,
        IceKey::DoseSwitch => 21,
        IceKey::ToxDiscontinuation => 24,
        IceKey::ProgressionDiscontinuation => 30,
        IceKey::SymptomaticDeterioration => 35,
        IceKey::AdditionalTherapy => 42,
        IceKey::SurgeryClinicianChoice | IceKey::SurgeryTumorShrinkage | IceKey::SurgeryExternalFactors => 45,
        IceKey::Death => 50,
    }
}

impl Scenario {
    pub fn num_doses(&self) -> usize {
        self.dose_grid.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.dose_grid.validate()?;
        let j = self.num_doses();
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.true_tox.len() != j || self.true_eff.len() != j {
            return bad(format!("true_tox and true_eff need {j} entries"));
        }
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !self.true_tox.iter().chain(&self.true_eff).all(|p| prob(*p)) {
            return bad("true probabilities must lie in [0, 1]".into());
        }
        if !prob(self.stratum_fraction) || !prob(self.post_ice_response_prob) {
            return bad("stratum_fraction and post_ice_response_prob must lie in [0, 1]".into());
        }
        if let Some(ae) = &self.low_grade_ae_prob {
            if ae.len() != j || !ae.iter().all(|p| prob(*p)) {
                return bad(format!("low_grade_ae_prob needs {j} probabilities"));
            }
        }
        for (key, p) in &self.ice_probabilities {
            let ok = match p {
                IceProbability::Constant(x) => prob(*x),
                IceProbability::PerDose(v) => v.len() == j && v.iter().all(|x| prob(*x)),
            };
            if !ok {
                return bad(format!("probabilities for `{key}` must be one value or {j} values in [0, 1]"));
            }
        }
        for d in 1..=j {
            joint_outcome_table(self.true_eff[d - 1], self.true_tox[d - 1], self.eff_tox_correlation)?;
        }
        Ok(())
    }

    /// True probabilities of the four canonical outcome categories at each dose.
    pub fn true_cells(&self) -> Result<Vec<[f64; 4]>> {
        (0..self.num_doses())
            .map(|i| joint_outcome_table(self.true_eff[i], self.true_tox[i], self.eff_tox_correlation))
            .collect()
    }

    /// True mean utility per dose.
    pub fn true_utilities(&self, spec: &UtilitySpec) -> Result<Vec<f64>> {
        let cells = self.true_cells()?;
        Ok(cells
            .iter()
            .map(|p| {
                [(false, true), (false, false), (true, true), (true, false)]
                    .iter()
                    .zip(p)
                    .map(|((e, t), pk)| spec.classify(*e, *t).map(|c| spec.psi_of(c) * pk).unwrap_or(0.0))
                    .sum()
            })
            .collect())
    }

    /// Dose with the highest true utility among doses with `pi_t <= phi_t` and
    /// `pi_e >= phi_e`; ties go to the lower dose.
    pub fn optimal_dose(&self, spec: &UtilitySpec, phi_t: f64, phi_e: f64) -> Result<Option<usize>> {
        let u = self.true_utilities(spec)?;
        let mut best: Option<usize> = None;
        for d in 1..=self.num_doses() {
            if self.true_tox[d - 1] > phi_t || self.true_eff[d - 1] < phi_e {
                continue;
            }
            if best.is_none_or(|b| u[d - 1] > u[b - 1]) {
                best = Some(d);
            }
        }
        Ok(best)
    }
}

/// Joint distribution of `(Y_e, Y_t)` with the given marginals and odds ratio.
///
/// Cells are `(p1, p2, p3, p4)` for `(e, t) = (0, 1), (0, 0), (1, 1), (1, 0)`, so that
/// `p3 + p4 = pe` and `p1 + p3 = pt`.
pub fn joint_outcome_table(pe: f64, pt: f64, odds_ratio: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&pe) || !(0.0..=1.0).contains(&pt) {
        return Err(Error::InfeasibleAssociation(format!("marginals ({pe}, {pt}) outside [0, 1]")));
    }
    if !(odds_ratio.is_finite() && odds_ratio > 0.0) {
        return Err(Error::InfeasibleAssociation(format!("odds ratio must be positive, got {odds_ratio}")));
    }
    let p3 = if (odds_ratio - 1.0).abs() < 1e-12 {
        pe * pt
    } else {
        let s = 1.0 + (pe + pt) * (odds_ratio - 1.0);
        let disc = s * s - 4.0 * odds_ratio * (odds_ratio - 1.0) * pe * pt;
        (s - disc.max(0.0).sqrt()) / (2.0 * (odds_ratio - 1.0))
    };
    let cells = [pt - p3, 1.0 - pe - pt + p3, p3, pe - p3];
    const TOL: f64 = 1e-12;
    if cells.iter().any(|c| *c < -TOL || !c.is_finite()) {
        return Err(Error::InfeasibleAssociation(format!(
            "odds ratio {odds_ratio} with marginals ({pe}, {pt}) gives cells {cells:?}"
        )));
    }
    Ok(cells.map(|c| c.max(0.0)))
}

fn draw_cell<R: Rng + ?Sized>(cells: &[f64; 4], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in cells.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    cells.iter().rposition(|p| *p > 0.0).unwrap_or(1)
}

/// Synthesizes one patient's timeline at `dose_index`.
///
/// The joint outcome is drawn first: a DLT on day 14 when `Y_t = 1` (otherwise possibly a
/// grade-2 event on day 7) and a day-56 assessment that is CR or PR when `Y_e = 1` and SD
/// otherwise. ICEs are then layered on at fixed days per type. Discontinuations add an
/// assessment on the event day (PD for progression, SD otherwise) and the day-56
/// assessment becomes CR with `post_ice_response_prob`, or SD/PD. Death removes every later
/// event.
pub fn simulate_patient<R: Rng + ?Sized>(
    scenario: &Scenario,
    dose_index: usize,
    patient_id: impl Into<String>,
    rng: &mut R,
) -> Result<PatientRecord> {
    if dose_index == 0 || dose_index > scenario.num_doses() {
        return Err(Error::InvalidArgument(format!("dose {dose_index} not in the scenario grid")));
    }
    let i = dose_index - 1;
    let cells = joint_outcome_table(scenario.true_eff[i], scenario.true_tox[i], scenario.eff_tox_correlation)?;
    let cell = draw_cell(&cells, rng);
    let (efficacy, toxicity) = [(false, true), (false, false), (true, true), (true, false)][cell];

    let mut rec = PatientRecord::new(patient_id, dose_index);
    if toxicity {
        rec.events.push(Event::toxicity(DLT_DAY, 3, true));
    } else {
        let p_ae = scenario.low_grade_ae_prob.as_ref().map_or(0.0, |v| v[i]);
        if rng.gen::<f64>() < p_ae {
            rec.events.push(Event::toxicity(LOW_GRADE_AE_DAY, 2, false));
        }
    }
    let mut response = if efficacy {
        if rng.gen::<f64>() < 0.3 {
            ResponseGrade::CR
        } else {
            ResponseGrade::PR
        }
    } else {
        ResponseGrade::SD
    };

    let mut death_day = None;
    for key in IceKey::ALL {
        let Some(p) = scenario.ice_probabilities.get(&key) else { continue };
        if rng.gen::<f64>() >= p.at(dose_index) {
            continue;
        }
        let day = ice_day(key);
        let ice = match key {
            IceKey::ToxDiscontinuation => IceType::ToxDiscontinuation,
            IceKey::Death => IceType::Death,
            IceKey::AdditionalTherapy => IceType::AdditionalTherapy,
            IceKey::ProgressionDiscontinuation => IceType::ProgressionDiscontinuation,
            IceKey::AdaOccurrence => IceType::AdaOccurrence,
            IceKey::DoseSwitch => IceType::DoseSwitch {
                new_dose_index: dose_index.saturating_sub(1).max(1),
            },
            IceKey::SurgeryClinicianChoice => IceType::Surgery {
                reason: SurgeryReason::ClinicianChoice,
            },
            IceKey::SurgeryTumorShrinkage => IceType::Surgery {
                reason: SurgeryReason::TumorShrinkage,
            },
            IceKey::SurgeryExternalFactors => IceType::Surgery {
                reason: SurgeryReason::ExternalFactors,
            },
            IceKey::Nonadherence => IceType::Nonadherence,
            IceKey::SymptomaticDeterioration => IceType::SymptomaticDeterioration,
        };
        if key == IceKey::Death {
            death_day = Some(day);
        }
        if matches!(
            key,
            IceKey::ToxDiscontinuation | IceKey::ProgressionDiscontinuation | IceKey::SymptomaticDeterioration
        ) {
            let at_event = if key == IceKey::ProgressionDiscontinuation {
                ResponseGrade::PD
            } else {
                ResponseGrade::SD
            };
            rec.events.push(Event::assessment(day, at_event));
            response = if rng.gen::<f64>() < scenario.post_ice_response_prob {
                ResponseGrade::CR
            } else {
                at_event
            };
        }
        rec.events.push(Event::ice(day, ice));
    }
    rec.events.push(Event::assessment(ASSESSMENT_DAY, response));

    if rng.gen::<f64>() < scenario.stratum_fraction {
        rec.stratum_label = Some(PRINCIPAL_STRATUM.to_string());
    } else {
        rec.stratum_label = Some("S0".to_string());
    }
    if let Some(d) = death_day {
        rec.events.retain(|e| e.day <= d);
    }
    rec.events.sort_by_key(|e| e.day);
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimand::EventKind;

    pub(crate) fn flat(j: usize, tox: f64, eff: f64) -> Scenario {
        Scenario {
            version: SchemaVersion::V1,
            name: "flat".into(),
            description: String::new(),
            dose_grid: DoseGrid::numbered(j),
            true_tox: vec![tox; j],
            true_eff: vec![eff; j],
            eff_tox_correlation: 1.0,
            ice_probabilities: BTreeMap::new(),
            stratum_fraction: 1.0,
            post_ice_response_prob: 0.0,
            low_grade_ae_prob: None,
        }
    }

    /// Solves `p3 (1 - pe - pt + p3) = or (pe - p3)(pt - p3)` by bisection over the feasible range.
    fn odds_ratio_root(pe: f64, pt: f64, or: f64) -> f64 {
        let f = |p3: f64| p3 * (1.0 - pe - pt + p3) - or * (pe - p3) * (pt - p3);
        let (mut lo, mut hi) = ((pe + pt - 1.0).max(0.0), pe.min(pt));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(lo) * f(mid) <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn joint_table_examples() {
        let c = joint_outcome_table(0.5, 0.2, 1.0).unwrap();
        for (a, b) in c.iter().zip([0.1, 0.4, 0.1, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        let c = joint_outcome_table(0.0, 0.3, 3.0).unwrap();
        assert_eq!((c[2], c[3]), (0.0, 0.0));
        let c = joint_outcome_table(0.6, 0.3, 2.0).unwrap();
        assert!((c[2] - odds_ratio_root(0.6, 0.3, 2.0)).abs() < 1e-12);
        assert!((c[2] + c[3] - 0.6).abs() < 1e-12);
        assert!((c[0] + c[2] - 0.3).abs() < 1e-12);
        assert!((c[2] * c[1] / (c[0] * c[3]) - 2.0).abs() < 1e-9);
        assert!(joint_outcome_table(0.5, 0.5, 0.0).is_err());
        assert!(joint_outcome_table(0.5, 0.5, f64::NAN).is_err());
    }

    #[test]
    fn joint_table_frequencies() {
        let cells = joint_outcome_table(0.45, 0.25, 0.5).unwrap();
        let mut rng = replication_rng(11, 0);
        let n = 100_000;
        let mut obs = [0f64; 4];
        for _ in 0..n {
            obs[draw_cell(&cells, &mut rng)] += 1.0;
        }
        let chi2: f64 = obs
            .iter()
            .zip(&cells)
            .map(|(o, p)| (o - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        // chi-square(3) upper 0.001 quantile
        assert!(chi2 < 16.266, "{chi2}");
    }

    #[test]
    fn no_ice_patient() {
        let sc = flat(3, 0.0, 1.0);
        let rec = simulate_patient(&sc, 2, "x", &mut replication_rng(1, 0)).unwrap();
        assert!(!rec.has_ice());
        assert_eq!(rec.max_toxicity_grade(), 0);
        let assessments: Vec<_> = rec
            .events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Assessment { response } => Some(response),
                _ => None,
            })
            .collect();
        assert_eq!(assessments.len(), 1);
        assert!(matches!(assessments[0], ResponseGrade::CR | ResponseGrade::PR));
    }

    #[test]
    fn forced_death_precedes_assessment() {
        let mut sc = flat(3, 0.2, 0.5);
        sc.ice_probabilities.insert(IceKey::Death, IceProbability::Constant(1.0));
        let rec = simulate_patient(&sc, 1, "x", &mut replication_rng(1, 0)).unwrap();
        let death = rec.events.iter().find(|e| e.ice_type() == Some(IceType::Death)).unwrap();
        assert!(death.day < ASSESSMENT_DAY);
        assert!(rec.events.iter().all(|e| e.day <= death.day));
        assert!(rec.validate().is_ok());
    }

    #[test]
    fn fixed_seed_reproduces_record() {
        let mut sc = flat(4, 0.3, 0.4);
        sc.ice_probabilities.insert(IceKey::ToxDiscontinuation, IceProbability::Constant(0.5));
        sc.post_ice_response_prob = 0.5;
        let a = simulate_patient(&sc, 3, "x", &mut replication_rng(5, 9)).unwrap();
        let b = simulate_patient(&sc, 3, "x", &mut replication_rng(5, 9)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn scenario_validation() {
        let mut sc = flat(3, 0.2, 0.5);
        assert!(sc.validate().is_ok());
        sc.true_tox.pop();
        assert!(sc.validate().is_err());
        let mut sc = flat(3, 0.2, 0.5);
        sc.ice_probabilities.insert(IceKey::Death, IceProbability::PerDose(vec![0.1, 0.2]));
        assert!(sc.validate().is_err());
    }

    #[test]
    fn optimal_dose_respects_admissibility() {
        let mut sc = flat(3, 0.1, 0.5);
        sc.true_tox = vec![0.1, 0.2, 0.5];
        sc.true_eff = vec![0.2, 0.5, 0.9];
        let spec = UtilitySpec::example();
        assert_eq!(sc.optimal_dose(&spec, 0.35, 0.25).unwrap(), Some(2));
    }
}
