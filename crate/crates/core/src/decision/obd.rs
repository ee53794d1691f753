use serde::{Deserialize, Serialize};

use super::{admissible_set, estimate_mtd, evaluate_doses, tested_doses, AdmissibleSet, TestedDose};
use crate::error::Result;
use crate::model::{DesignConfig, DoseState, UtilitySpec};
use crate::posterior::PosteriorSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObdSelection {
    pub obd: Option<usize>,
    pub mtd: Option<usize>,
    pub admissible: AdmissibleSet,
    pub rationale: String,
}

/// Highest-utility admissible tested dose not above the isotonic MTD (ties go to the
/// lower dose). `None` when no tested dose qualifies.
pub fn select_obd(summaries: &[PosteriorSummary], tested: &[TestedDose], config: &DesignConfig) -> ObdSelection {
    let admissible = admissible_set(summaries, config);
    let mtd = estimate_mtd(tested, config.phi_t).ok();
    let Some(mtd) = mtd else {
        return ObdSelection {
            obd: None,
            mtd: None,
            admissible,
            rationale: "no tested doses".into(),
        };
    };

    let mut best: Option<&PosteriorSummary> = None;
    for s in summaries {
        if s.dose_index > mtd || !admissible.contains(s.dose_index) {
            continue;
        }
        if best.is_none_or(|b| s.mean_utility > b.mean_utility) {
            best = Some(s);
        }
    }
    let rationale = match best {
        Some(b) => format!(
            "dose {} has the highest posterior mean utility ({:.4}) among admissible doses {:?} at or below MTD {}",
            b.dose_index, b.mean_utility, admissible.dose_indices, mtd
        ),
        None => format!(
            "no admissible tested dose at or below MTD {mtd} (admissible: {:?})",
            admissible.dose_indices
        ),
    };
    ObdSelection {
        obd: best.map(|b| b.dose_index),
        mtd: Some(mtd),
        admissible,
        rationale,
    }
}

/// Summaries of every dose together with the OBD they imply.
pub fn obd_from_states(
    states: &[DoseState],
    spec: &UtilitySpec,
    config: &DesignConfig,
) -> Result<(Vec<PosteriorSummary>, ObdSelection)> {
    let summaries = evaluate_doses(states, spec, config)?;
    let selection = select_obd(&summaries, &tested_doses(states, spec), config);
    Ok((summaries, selection))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(dose: usize, u: f64, tox: f64, fut: f64, n: u32) -> PosteriorSummary {
        PosteriorSummary {
            dose_index: dose,
            mean_utility: u,
            mean_tox: 0.0,
            mean_eff: 0.0,
            prob_toxic: tox,
            prob_futile: fut,
            n,
        }
    }

    #[test]
    fn mtd_caps_the_obd() {
        let cfg = DesignConfig::case_study();
        let summaries = [s(1, 30.0, 0.0, 0.95, 3), s(2, 55.0, 0.1, 0.1, 3), s(3, 62.0, 0.2, 0.1, 3), s(4, 70.0, 0.5, 0.1, 3)];
        // isotonic rates (0, 0, 1/3, 2/3): closest to 0.35 is dose 3
        let tested = [
            TestedDose::new(1, 0, 3),
            TestedDose::new(2, 0, 3),
            TestedDose::new(3, 1, 3),
            TestedDose::new(4, 2, 3),
        ];
        let sel = select_obd(&summaries, &tested, &cfg);
        assert_eq!(sel.admissible.dose_indices, vec![2, 3, 4]);
        assert_eq!(sel.mtd, Some(3));
        assert_eq!(sel.obd, Some(3));
    }

    #[test]
    fn none_when_all_inadmissible() {
        let cfg = DesignConfig::case_study();
        let summaries = [s(1, 30.0, 0.99, 0.0, 3), s(2, 40.0, 0.0, 0.99, 3)];
        let tested = [TestedDose::new(1, 3, 3), TestedDose::new(2, 0, 3)];
        assert_eq!(select_obd(&summaries, &tested, &cfg).obd, None);
    }

    #[test]
    fn single_dose_and_ties() {
        let cfg = DesignConfig::case_study();
        let sel = select_obd(&[s(1, 20.0, 0.0, 0.0, 3)], &[TestedDose::new(1, 0, 3)], &cfg);
        assert_eq!(sel.obd, Some(1));
        let sel = select_obd(
            &[s(1, 60.0, 0.0, 0.0, 3), s(2, 60.0, 0.0, 0.0, 3)],
            &[TestedDose::new(1, 0, 3), TestedDose::new(2, 0, 3)],
            &cfg,
        );
        assert_eq!(sel.obd, Some(1));
        assert_eq!(select_obd(&[s(1, 20.0, 0.0, 0.0, 0)], &[], &cfg).obd, None);
    }
}
