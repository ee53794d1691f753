use super::{DoseAttribution, EventKind, IceKey, IceType, PatientRecord, Strategy, StrategyMap};
use crate::error::{Error, Result};
use crate::model::{DerivedOutcome, TraceEntry, UtilitySpec};

enum Terminal {
    Composite { day: i64, key: IceKey, favorable: bool },
    Hypothetical,
}

/// Derives a patient's outcome category under a strategy map.
///
/// ICEs are applied in chronological order. Treatment policy and principal stratum leave
/// the timeline intact, while-on-treatment truncates it at the ICE day (same-day
/// observations still count), and the first composite or hypothetical ICE ends processing.
/// ICEs after a truncation point are not part of the observed timeline and are ignored.
///
/// A response on or after the day of death never counts as efficacy.
pub fn derive_outcome(record: &PatientRecord, map: &StrategyMap, spec: &UtilitySpec) -> Result<DerivedOutcome> {
    record.validate()?;

    let mut cutoff: Option<i64> = None;
    let mut dose_index = record.dose_index;
    let mut evaluable = true;
    let mut terminal = None;
    let mut trace = Vec::new();

    for event in &record.events {
        let Some(ice) = event.ice_type() else { continue };
        let key = ice.key();
        let entry = map.entry(key)?;
        let mut push = |effect: String| {
            trace.push(TraceEntry {
                day: event.day,
                ice_type: key,
                strategy: entry.strategy,
                effect,
            })
        };

        if let Some(c) = cutoff {
            if event.day > c {
                push(format!("after truncation at day {c}; not part of the analysed timeline"));
                continue;
            }
        }

        match entry.strategy {
            Strategy::TreatmentPolicy => match ice {
                IceType::DoseSwitch { new_dose_index } if map.dose_switch_attribution == DoseAttribution::Last => {
                    dose_index = new_dose_index;
                    push(format!("data retained; outcome attributed to dose {new_dose_index}"));
                }
                _ => push("ignored; data before and after the event retained".into()),
            },
            Strategy::WhileOnTreatment => {
                cutoff = Some(cutoff.map_or(event.day, |c| c.min(event.day)));
                push(format!("timeline truncated at day {} (inclusive)", event.day));
            }
            Strategy::PrincipalStratum => {
                let label = record.stratum_label.as_ref().ok_or_else(|| {
                    Error::MissingStratumLabel(format!("patient {} has no stratum label", record.patient_id))
                })?;
                let declared = map.analysis_stratum.as_ref().ok_or_else(|| {
                    Error::MissingStratumLabel(format!("strategy map `{}` declares no analysis stratum", map.label()))
                })?;
                if label == declared {
                    push(format!("patient in analysis stratum `{declared}`"));
                } else {
                    evaluable = false;
                    push(format!("patient stratum `{label}` outside analysis stratum `{declared}`; not evaluable"));
                }
            }
            Strategy::Composite => {
                let effect = if entry.favorable {
                    "composite: event counted as efficacy success; later data ignored"
                } else if key.is_toxicity_linked() {
                    "composite: event counted as efficacy failure with toxicity; later data ignored"
                } else {
                    "composite: event counted as efficacy failure; later data ignored"
                };
                push(effect.into());
                terminal = Some(Terminal::Composite {
                    day: event.day,
                    key,
                    favorable: entry.favorable,
                });
                break;
            }
            Strategy::Hypothetical => {
                push("hypothetical: outcome set missing and flagged for sensitivity analysis".into());
                terminal = Some(Terminal::Hypothetical);
                break;
            }
        }
    }

    let death_day = record
        .events
        .iter()
        .find(|e| matches!(e.ice_type(), Some(IceType::Death)))
        .map(|e| e.day);
    let dlt_end = record.first_dose_day + map.dlt_window_days;

    let efficacy_by = |horizon: i64| {
        record.events.iter().any(|e| match e.kind {
            EventKind::Assessment { response } => {
                e.day <= horizon && map.efficacy_success_set.contains(&response) && death_day.is_none_or(|d| e.day < d)
            }
            _ => false,
        })
    };
    let toxicity_by = |horizon: i64| {
        record.events.iter().any(|e| match e.kind {
            EventKind::Toxicity { dlt, .. } => dlt && e.day <= horizon.min(dlt_end),
            _ => false,
        })
    };

    let (efficacy, toxicity) = match terminal {
        Some(Terminal::Hypothetical) => {
            return Ok(DerivedOutcome {
                patient_id: record.patient_id.clone(),
                dose_index,
                category: None,
                efficacy: None,
                toxicity: None,
                evaluable: false,
                flagged_for_sensitivity: true,
                strategy_trace: trace,
            });
        }
        Some(Terminal::Composite { day, key, favorable }) => {
            let horizon = cutoff.map_or(day, |c| c.min(day));
            (favorable, key.is_toxicity_linked() || toxicity_by(horizon))
        }
        None => {
            let horizon = cutoff.unwrap_or(i64::MAX);
            (efficacy_by(horizon), toxicity_by(horizon))
        }
    };

    Ok(DerivedOutcome {
        patient_id: record.patient_id.clone(),
        dose_index,
        category: Some(spec.classify(efficacy, toxicity)?),
        efficacy: Some(efficacy),
        toxicity: Some(toxicity),
        evaluable,
        flagged_for_sensitivity: false,
        strategy_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{Event, ResponseGrade::*, StrategyEntry, SurgeryReason};
    use super::*;
    use crate::model::Category;

    fn spec() -> UtilitySpec {
        UtilitySpec::example()
    }

    /// SD at the discontinuation visit, CR during follow-up.
    fn discontinued_then_cr() -> PatientRecord {
        PatientRecord::new("disc", 2)
            .with_event(Event::toxicity(20, 2, false))
            .with_event(Event::assessment(30, SD))
            .with_event(Event::ice(30, IceType::ToxDiscontinuation))
            .with_event(Event::assessment(60, CR))
    }

    #[test]
    fn treatment_policy_keeps_follow_up_response() {
        let m = StrategyMap::uniform(Strategy::TreatmentPolicy);
        let o = derive_outcome(&discontinued_then_cr(), &m, &spec()).unwrap();
        assert_eq!(o.efficacy, Some(true));
        assert_eq!(o.toxicity, Some(false));
        assert_eq!(o.category, Some(Category::new(4)));
        assert_eq!(o.strategy_trace.len(), 1);
    }

    #[test]
    fn while_on_treatment_drops_follow_up_response() {
        let m = StrategyMap::uniform(Strategy::WhileOnTreatment);
        let o = derive_outcome(&discontinued_then_cr(), &m, &spec()).unwrap();
        assert_eq!(o.efficacy, Some(false));
        assert_eq!(o.category, Some(Category::new(2)));
        assert!(o.evaluable);
    }

    #[test]
    fn while_on_treatment_counts_same_day_response() {
        let r = PatientRecord::new("p", 1)
            .with_event(Event::ice(30, IceType::AdditionalTherapy))
            .with_event(Event::assessment(30, PR))
            .with_event(Event::toxicity(31, 3, true));
        let m = StrategyMap::uniform(Strategy::WhileOnTreatment);
        let o = derive_outcome(&r, &m, &spec()).unwrap();
        assert_eq!((o.efficacy, o.toxicity), (Some(true), Some(false)));
    }

    #[test]
    fn composite_toxicity_discontinuation_is_worst() {
        let m = StrategyMap::uniform(Strategy::Composite);
        let o = derive_outcome(&discontinued_then_cr(), &m, &spec()).unwrap();
        assert_eq!(o.category, Some(Category::new(1)));
        assert_eq!(spec().psi_of(o.category.unwrap()), 0.0);
    }

    #[test]
    fn death_before_response_is_worst_under_composite() {
        let r = PatientRecord::new("d", 3).with_event(Event::ice(12, IceType::Death));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!(o.category, Some(Category::new(1)));
        assert_eq!((o.efficacy, o.toxicity), (Some(false), Some(true)));
    }

    #[test]
    fn same_day_response_at_death_never_counts() {
        let r = PatientRecord::new("d", 1)
            .with_event(Event::assessment(12, PR))
            .with_event(Event::ice(12, IceType::Death));
        for s in [Strategy::TreatmentPolicy, Strategy::WhileOnTreatment, Strategy::Composite] {
            let o = derive_outcome(&r, &StrategyMap::uniform(s), &spec()).unwrap();
            assert_eq!(o.efficacy, Some(false), "{s}");
        }
    }

    #[test]
    fn composite_progression_keeps_observed_toxicity() {
        let r = PatientRecord::new("p", 1)
            .with_event(Event::toxicity(5, 3, true))
            .with_event(Event::assessment(20, PR))
            .with_event(Event::ice(25, IceType::ProgressionDiscontinuation));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!((o.efficacy, o.toxicity), (Some(false), Some(true)));

        let r = PatientRecord::new("p", 1)
            .with_event(Event::ice(25, IceType::ProgressionDiscontinuation))
            .with_event(Event::toxicity(26, 3, true));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!((o.efficacy, o.toxicity), (Some(false), Some(false)));
    }

    #[test]
    fn favorable_composite_for_tumor_shrinkage_surgery() {
        let r = PatientRecord::new("s", 2)
            .with_event(Event::assessment(28, SD))
            .with_event(Event::ice(
                40,
                IceType::Surgery {
                    reason: SurgeryReason::TumorShrinkage,
                },
            ));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!(o.category, Some(Category::new(4)));
    }

    #[test]
    fn hypothetical_marks_missing() {
        let r = PatientRecord::new("h", 1)
            .with_event(Event::ice(
                10,
                IceType::Surgery {
                    reason: SurgeryReason::ExternalFactors,
                },
            ))
            .with_event(Event::assessment(30, CR));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!(o.category, None);
        assert!(!o.evaluable);
        assert!(o.flagged_for_sensitivity);
        assert_eq!(o.strategy_trace.len(), 1);
    }

    #[test]
    fn first_terminal_wins() {
        let r = PatientRecord::new("t", 1)
            .with_event(Event::ice(10, IceType::SymptomaticDeterioration))
            .with_event(Event::ice(12, IceType::Death));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!(o.category, None, "hypothetical came first");
    }

    #[test]
    fn ices_after_truncation_are_ignored() {
        let r = PatientRecord::new("t", 1)
            .with_event(Event::assessment(20, PR))
            .with_event(Event::ice(21, IceType::AdditionalTherapy))
            .with_event(Event::ice(40, IceType::Death));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!(o.category, Some(Category::new(4)));
        assert_eq!(o.strategy_trace.len(), 2);
        assert!(o.strategy_trace[1].effect.contains("after truncation"));
    }

    #[test]
    fn dlt_outside_window_is_ignored() {
        let r = PatientRecord::new("w", 1).with_event(Event::toxicity(29, 4, true));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!(o.toxicity, Some(false));
        let r = PatientRecord::new("w", 1).with_event(Event::toxicity(28, 4, true));
        let o = derive_outcome(&r, &StrategyMap::case_study_default(), &spec()).unwrap();
        assert_eq!(o.toxicity, Some(true));
    }

    #[test]
    fn dose_switch_attribution() {
        let r = PatientRecord::new("sw", 3)
            .with_event(Event::ice(15, IceType::DoseSwitch { new_dose_index: 2 }))
            .with_event(Event::assessment(56, PR));
        let mut m = StrategyMap::case_study_default();
        assert_eq!(derive_outcome(&r, &m, &spec()).unwrap().dose_index, 3);
        m.dose_switch_attribution = DoseAttribution::Last;
        assert_eq!(derive_outcome(&r, &m, &spec()).unwrap().dose_index, 2);
    }

    #[test]
    fn principal_stratum() {
        let mut m = StrategyMap::case_study_default().with_entry(IceKey::AdaOccurrence, StrategyEntry::new(Strategy::PrincipalStratum));
        let r = PatientRecord::new("ps", 1)
            .with_event(Event::ice(10, IceType::AdaOccurrence))
            .with_event(Event::assessment(56, PR));
        assert!(matches!(derive_outcome(&r, &m, &spec()), Err(Error::MissingStratumLabel(_))));
        let r = r.with_stratum("no_ada");
        assert!(matches!(derive_outcome(&r, &m, &spec()), Err(Error::MissingStratumLabel(_))));
        m.analysis_stratum = Some("no_ada".into());
        let o = derive_outcome(&r, &m, &spec()).unwrap();
        assert!(o.evaluable);
        assert_eq!(o.category, Some(Category::new(4)));
        let mut other = r.clone();
        other.stratum_label = Some("ada".into());
        let o = derive_outcome(&other, &m, &spec()).unwrap();
        assert!(!o.evaluable);
        assert_eq!(o.category, Some(Category::new(4)));
    }

    #[test]
    fn unmapped_ice() {
        let mut m = StrategyMap::case_study_default();
        m.entries.remove(&IceKey::Nonadherence);
        let r = PatientRecord::new("u", 1).with_event(Event::ice(3, IceType::Nonadherence));
        assert_eq!(derive_outcome(&r, &m, &spec()), Err(Error::UnmappedIce("nonadherence".into())));
    }
}
