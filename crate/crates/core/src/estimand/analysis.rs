use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{derive_outcome, EventKind, PatientRecord, ResponseGrade, StrategyMap};
use crate::error::Result;
use crate::model::{DerivedOutcome, UtilitySpec};

/// Which treated patients enter the analysis denominators.
#[derive(Clone, Default)]
pub enum AnalysisSetRule {
    /// Baseline assessment, plus either an adequate post-baseline response assessment or a
    /// treatment discontinuation before the first one.
    #[default]
    AllTreatedWithBaselineAndPostbaseline,
    AllTreated,
    Custom(Arc<dyn Fn(&PatientRecord) -> bool + Send + Sync>),
}

impl fmt::Debug for AnalysisSetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisSetRule::AllTreatedWithBaselineAndPostbaseline => f.write_str("AllTreatedWithBaselineAndPostbaseline"),
            AnalysisSetRule::AllTreated => f.write_str("AllTreated"),
            AnalysisSetRule::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub patient_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisSet {
    pub outcomes: Vec<DerivedOutcome>,
    pub excluded: Vec<Exclusion>,
}

fn exclusion_reason(record: &PatientRecord, rule: &AnalysisSetRule) -> Option<String> {
    match rule {
        AnalysisSetRule::AllTreated => None,
        AnalysisSetRule::Custom(pred) => (!pred(record)).then(|| "excluded by custom analysis-set rule".to_string()),
        AnalysisSetRule::AllTreatedWithBaselineAndPostbaseline => {
            if !record.baseline_ok {
                return Some("no baseline assessment".into());
            }
            let first_assessment = record
                .events
                .iter()
                .filter(|e| {
                    e.day > record.first_dose_day
                        && matches!(e.kind, EventKind::Assessment { response } if response != ResponseGrade::NE)
                })
                .map(|e| e.day)
                .next();
            if first_assessment.is_some() {
                return None;
            }
            let discontinued = record
                .events
                .iter()
                .any(|e| e.ice_type().is_some_and(|ice| ice.key().is_discontinuation()));
            if discontinued {
                None
            } else {
                Some("no adequate post-baseline response assessment and no discontinuation before one".into())
            }
        }
    }
}

/// Filters records by the analysis-set rule and derives outcomes for the rest.
pub fn build_analysis_set(
    records: &[PatientRecord],
    map: &StrategyMap,
    spec: &UtilitySpec,
    rule: &AnalysisSetRule,
) -> Result<AnalysisSet> {
    let mut set = AnalysisSet::default();
    for r in records {
        match exclusion_reason(r, rule) {
            Some(reason) => set.excluded.push(Exclusion {
                patient_id: r.patient_id.clone(),
                reason,
            }),
            None => set.outcomes.push(derive_outcome(r, map, spec)?),
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::super::{Event, IceType};
    use super::*;

    fn run(records: &[PatientRecord], rule: &AnalysisSetRule) -> AnalysisSet {
        build_analysis_set(records, &StrategyMap::case_study_default(), &UtilitySpec::example(), rule).unwrap()
    }

    #[test]
    fn excludes_record_without_assessment_or_ice() {
        let r = PatientRecord::new("a", 1).with_event(Event::toxicity(4, 1, false));
        let s = run(&[r], &AnalysisSetRule::default());
        assert!(s.outcomes.is_empty());
        assert_eq!(s.excluded.len(), 1);
        assert_eq!(s.excluded[0].patient_id, "a");
    }

    #[test]
    fn includes_early_discontinuation() {
        let r = PatientRecord::new("b", 1).with_event(Event::ice(9, IceType::ToxDiscontinuation));
        let s = run(&[r], &AnalysisSetRule::default());
        assert_eq!(s.outcomes.len(), 1);
        assert!(s.excluded.is_empty());
    }

    #[test]
    fn baseline_required_and_ne_not_adequate() {
        let mut r = PatientRecord::new("c", 1).with_event(Event::assessment(28, ResponseGrade::PR));
        r.baseline_ok = false;
        let s = run(&[r.clone()], &AnalysisSetRule::default());
        assert_eq!(s.excluded[0].reason, "no baseline assessment");
        assert_eq!(run(&[r], &AnalysisSetRule::AllTreated).outcomes.len(), 1);

        let ne = PatientRecord::new("d", 1).with_event(Event::assessment(28, ResponseGrade::NE));
        assert_eq!(run(&[ne], &AnalysisSetRule::default()).excluded.len(), 1);
    }

    #[test]
    fn empty_and_custom() {
        assert_eq!(run(&[], &AnalysisSetRule::default()), AnalysisSet::default());
        let only_dose_two = AnalysisSetRule::Custom(Arc::new(|r| r.dose_index == 2));
        let s = run(&[PatientRecord::new("x", 1), PatientRecord::new("y", 2)], &only_dose_two);
        assert_eq!(s.outcomes.len(), 1);
        assert_eq!(s.outcomes[0].patient_id, "y");
    }
}
