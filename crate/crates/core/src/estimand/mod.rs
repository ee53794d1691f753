//! Estimand-aware outcome derivation.
//!
//! A [`PatientRecord`] is a post-first-dose event timeline. A [`StrategyMap`] says how each
//! intercurrent event (ICE) type is handled, and [`derive_outcome`] turns the pair into the
//! binary efficacy/toxicity outcome the dose-finding rules consume.

mod analysis;
mod compare;
mod derive;
pub mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use analysis::{build_analysis_set, AnalysisSet, AnalysisSetRule, Exclusion};
pub use compare::{category_counts, compare_strategies, MapResult, QuestionCell, QuestionRow, StrategyComparison};
pub use derive::derive_outcome;

use crate::error::{Error, Result};
use crate::model::SchemaVersion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResponseGrade {
    CR,
    PR,
    SD,
    PD,
    NE,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurgeryReason {
    ClinicianChoice,
    TumorShrinkage,
    ExternalFactors,
}

/// Intercurrent event as it occurs in a patient timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IceType {
    ToxDiscontinuation,
    Death,
    AdditionalTherapy,
    ProgressionDiscontinuation,
    AdaOccurrence,
    DoseSwitch { new_dose_index: usize },
    Surgery { reason: SurgeryReason },
    Nonadherence,
    SymptomaticDeterioration,
}

impl IceType {
    pub fn key(&self) -> IceKey {
        match self {
            IceType::ToxDiscontinuation => IceKey::ToxDiscontinuation,
            IceType::Death => IceKey::Death,
            IceType::AdditionalTherapy => IceKey::AdditionalTherapy,
            IceType::ProgressionDiscontinuation => IceKey::ProgressionDiscontinuation,
            IceType::AdaOccurrence => IceKey::AdaOccurrence,
            IceType::DoseSwitch { .. } => IceKey::DoseSwitch,
            IceType::Surgery {
                reason: SurgeryReason::ClinicianChoice,
            } => IceKey::SurgeryClinicianChoice,
            IceType::Surgery {
                reason: SurgeryReason::TumorShrinkage,
            } => IceKey::SurgeryTumorShrinkage,
            IceType::Surgery {
                reason: SurgeryReason::ExternalFactors,
            } => IceKey::SurgeryExternalFactors,
            IceType::Nonadherence => IceKey::Nonadherence,
            IceType::SymptomaticDeterioration => IceKey::SymptomaticDeterioration,
        }
    }
}

/// Strategy-map key: the ICE type with surgery split by reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IceKey {
    ToxDiscontinuation,
    Death,
    AdditionalTherapy,
    ProgressionDiscontinuation,
    AdaOccurrence,
    DoseSwitch,
    SurgeryClinicianChoice,
    SurgeryTumorShrinkage,
    SurgeryExternalFactors,
    Nonadherence,
    SymptomaticDeterioration,
}

impl IceKey {
    pub const ALL: [IceKey; 11] = [
        IceKey::ToxDiscontinuation,
        IceKey::Death,
        IceKey::AdditionalTherapy,
        IceKey::ProgressionDiscontinuation,
        IceKey::AdaOccurrence,
        IceKey::DoseSwitch,
        IceKey::SurgeryClinicianChoice,
        IceKey::SurgeryTumorShrinkage,
        IceKey::SurgeryExternalFactors,
        IceKey::Nonadherence,
        IceKey::SymptomaticDeterioration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IceKey::ToxDiscontinuation => "tox_discontinuation",
            IceKey::Death => "death",
            IceKey::AdditionalTherapy => "additional_therapy",
            IceKey::ProgressionDiscontinuation => "progression_discontinuation",
            IceKey::AdaOccurrence => "ada_occurrence",
            IceKey::DoseSwitch => "dose_switch",
            IceKey::SurgeryClinicianChoice => "surgery_clinician_choice",
            IceKey::SurgeryTumorShrinkage => "surgery_tumor_shrinkage",
            IceKey::SurgeryExternalFactors => "surgery_external_factors",
            IceKey::Nonadherence => "nonadherence",
            IceKey::SymptomaticDeterioration => "symptomatic_deterioration",
        }
    }

    pub fn parse(s: &str) -> Option<IceKey> {
        IceKey::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// ICEs that are failures on the toxicity axis when handled as composite.
    pub fn is_toxicity_linked(self) -> bool {
        matches!(self, IceKey::ToxDiscontinuation | IceKey::Death)
    }

    /// ICEs that end study treatment.
    pub fn is_discontinuation(self) -> bool {
        matches!(
            self,
            IceKey::ToxDiscontinuation
                | IceKey::Death
                | IceKey::ProgressionDiscontinuation
                | IceKey::SymptomaticDeterioration
        )
    }
}

impl fmt::Display for IceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// ICH E9(R1) intercurrent-event strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    TreatmentPolicy,
    Composite,
    Hypothetical,
    WhileOnTreatment,
    PrincipalStratum,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::TreatmentPolicy,
        Strategy::Composite,
        Strategy::Hypothetical,
        Strategy::WhileOnTreatment,
        Strategy::PrincipalStratum,
    ];

    /// The clinical question an estimand built on this strategy answers.
    pub fn clinical_question(self) -> &'static str {
        match self {
            Strategy::TreatmentPolicy => "utility score irrespective of the event",
            Strategy::Composite => "utility score counting the event as a failure",
            Strategy::Hypothetical => "utility score in the scenario where the event is prevented",
            Strategy::WhileOnTreatment => "utility score up to the occurrence of the event",
            Strategy::PrincipalStratum => "utility score among patients who would not experience the event",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, Strategy::Composite | Strategy::Hypothetical)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::TreatmentPolicy => "treatment_policy",
            Strategy::Composite => "composite",
            Strategy::Hypothetical => "hypothetical",
            Strategy::WhileOnTreatment => "while_on_treatment",
            Strategy::PrincipalStratum => "principal_stratum",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strategy for one ICE key. In JSON either `"composite"` or
/// `{"strategy": "composite", "favorable": true}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StrategyEntry {
    pub strategy: Strategy,
    /// Composite variant where the event counts as an efficacy success.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub favorable: bool,
}

impl StrategyEntry {
    pub fn new(strategy: Strategy) -> Self {
        StrategyEntry {
            strategy,
            favorable: false,
        }
    }

    pub fn favorable_composite() -> Self {
        StrategyEntry {
            strategy: Strategy::Composite,
            favorable: true,
        }
    }
}

impl<'de> Deserialize<'de> for StrategyEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Full {
            strategy: Strategy,
            #[serde(default)]
            favorable: bool,
        }
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(Strategy),
            Full(Full),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Bare(strategy) => StrategyEntry::new(strategy),
            Repr::Full(f) => StrategyEntry {
                strategy: f.strategy,
                favorable: f.favorable,
            },
        })
    }
}

/// Which dose a switched patient's outcome is attributed to under treatment policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseAttribution {
    #[default]
    Starting,
    Last,
}

/// Mapping from ICE type to handling strategy, plus the endpoint definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyMap {
    #[serde(default)]
    pub version: SchemaVersion,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub entries: BTreeMap<IceKey, StrategyEntry>,
    /// Response grades counted as efficacy.
    #[serde(default = "default_success_set")]
    pub efficacy_success_set: BTreeSet<ResponseGrade>,
    /// Toxicity counts only when a DLT-flagged event falls within this many days of the
    /// first dose.
    #[serde(default = "default_dlt_window")]
    pub dlt_window_days: i64,
    #[serde(default)]
    pub dose_switch_attribution: DoseAttribution,
    /// Stratum a principal-stratum analysis is restricted to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_stratum: Option<String>,
}

fn default_success_set() -> BTreeSet<ResponseGrade> {
    [ResponseGrade::CR, ResponseGrade::PR].into_iter().collect()
}

fn default_dlt_window() -> i64 {
    28
}

impl StrategyMap {
    /// Case-study defaults: composite for toxicity discontinuation, death and progression;
    /// while-on-treatment for additional therapy and clinician-choice surgery; treatment
    /// policy for ADAs, dose switches and non-adherence; favorable composite for surgery
    /// after tumor shrinkage; hypothetical for externally driven surgery and symptomatic
    /// deterioration.
    pub fn case_study_default() -> Self {
        use IceKey::*;
        use Strategy::*;
        let entries = [
            (ToxDiscontinuation, StrategyEntry::new(Composite)),
            (Death, StrategyEntry::new(Composite)),
            (AdditionalTherapy, StrategyEntry::new(WhileOnTreatment)),
            (ProgressionDiscontinuation, StrategyEntry::new(Composite)),
            (AdaOccurrence, StrategyEntry::new(TreatmentPolicy)),
            (DoseSwitch, StrategyEntry::new(TreatmentPolicy)),
            (SurgeryClinicianChoice, StrategyEntry::new(WhileOnTreatment)),
            (SurgeryTumorShrinkage, StrategyEntry::favorable_composite()),
            (SurgeryExternalFactors, StrategyEntry::new(Hypothetical)),
            (Nonadherence, StrategyEntry::new(TreatmentPolicy)),
            (SymptomaticDeterioration, StrategyEntry::new(Hypothetical)),
        ]
        .into_iter()
        .collect();
        StrategyMap {
            version: SchemaVersion::V1,
            name: Some("default".into()),
            entries,
            efficacy_success_set: default_success_set(),
            dlt_window_days: default_dlt_window(),
            dose_switch_attribution: DoseAttribution::Starting,
            analysis_stratum: None,
        }
    }

    /// Every ICE handled by the same strategy.
    pub fn uniform(strategy: Strategy) -> Self {
        StrategyMap {
            name: Some(strategy.as_str().into()),
            entries: IceKey::ALL.into_iter().map(|k| (k, StrategyEntry::new(strategy))).collect(),
            ..Self::case_study_default()
        }
    }

    pub fn with_entry(mut self, key: IceKey, entry: StrategyEntry) -> Self {
        self.entries.insert(key, entry);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn entry(&self, key: IceKey) -> Result<StrategyEntry> {
        self.entries
            .get(&key)
            .copied()
            .ok_or_else(|| Error::UnmappedIce(key.as_str().into()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "unnamed".into())
    }
}

impl Default for StrategyMap {
    fn default() -> Self {
        Self::case_study_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Assessment { response: ResponseGrade },
    Toxicity { grade: u8, dlt: bool },
    Ice { ice: IceType },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub day: i64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn assessment(day: i64, response: ResponseGrade) -> Self {
        Event {
            day,
            kind: EventKind::Assessment { response },
        }
    }

    pub fn toxicity(day: i64, grade: u8, dlt: bool) -> Self {
        Event {
            day,
            kind: EventKind::Toxicity { grade, dlt },
        }
    }

    pub fn ice(day: i64, ice: IceType) -> Self {
        Event {
            day,
            kind: EventKind::Ice { ice },
        }
    }

    pub fn ice_type(&self) -> Option<IceType> {
        match self.kind {
            EventKind::Ice { ice } => Some(ice),
            _ => None,
        }
    }
}

/// A treated patient's timeline from the first dose on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub dose_index: usize,
    #[serde(default)]
    pub first_dose_day: i64,
    #[serde(default)]
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum_label: Option<String>,
    #[serde(default = "yes")]
    pub baseline_ok: bool,
}

fn yes() -> bool {
    true
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>, dose_index: usize) -> Self {
        PatientRecord {
            patient_id: patient_id.into(),
            dose_index,
            first_dose_day: 0,
            events: Vec::new(),
            stratum_label: None,
            baseline_ok: true,
        }
    }

    pub fn with_event(mut self, event: Event) -> Self {
        self.events.push(event);
        self
    }

    pub fn with_stratum(mut self, label: impl Into<String>) -> Self {
        self.stratum_label = Some(label.into());
        self
    }

    pub fn has_ice(&self) -> bool {
        self.events.iter().any(|e| e.ice_type().is_some())
    }

    /// Highest toxicity grade anywhere in the timeline.
    pub fn max_toxicity_grade(&self) -> u8 {
        self.events
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Toxicity { grade, .. } => Some(grade),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidRecord {
            patient_id: self.patient_id.clone(),
            reason,
        };
        if self.dose_index == 0 {
            return Err(bad("dose_index is one-based".into()));
        }
        let mut deaths = 0;
        for (i, e) in self.events.iter().enumerate() {
            if e.day < self.first_dose_day {
                return Err(bad(format!("event on day {} precedes the first dose", e.day)));
            }
            if i > 0 && e.day < self.events[i - 1].day {
                return Err(bad("events must be sorted by day".into()));
            }
            match e.kind {
                EventKind::Toxicity { grade, .. } if !(1..=5).contains(&grade) => {
                    return Err(bad(format!("toxicity grade {grade} outside 1..=5")));
                }
                EventKind::Ice {
                    ice: IceType::DoseSwitch { new_dose_index: 0 },
                } => return Err(bad("dose switch target is one-based".into())),
                EventKind::Ice { ice: IceType::Death } => deaths += 1,
                _ => {}
            }
        }
        if deaths > 1 {
            return Err(bad("more than one death".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_json_forms() {
        let e = Event::ice(
            30,
            IceType::Surgery {
                reason: SurgeryReason::TumorShrinkage,
            },
        );
        let v = serde_json::to_value(e).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"day": 30, "kind": "ice", "ice": {"type": "surgery", "reason": "tumor_shrinkage"}})
        );
        let e2: Event = serde_json::from_value(v).unwrap();
        assert_eq!(e, e2);
        let a: Event = serde_json::from_str(r#"{"day": 5, "kind": "assessment", "response": "CR"}"#).unwrap();
        assert_eq!(a, Event::assessment(5, ResponseGrade::CR));
    }

    #[test]
    fn strategy_entry_short_and_long_forms() {
        let m: StrategyMap = serde_json::from_str(
            r#"{"entries": {"death": "composite",
                            "surgery_tumor_shrinkage": {"strategy": "composite", "favorable": true}}}"#,
        )
        .unwrap();
        assert_eq!(m.entry(IceKey::Death).unwrap(), StrategyEntry::new(Strategy::Composite));
        assert!(m.entry(IceKey::SurgeryTumorShrinkage).unwrap().favorable);
        assert_eq!(m.dlt_window_days, 28);
        assert!(m.efficacy_success_set.contains(&ResponseGrade::PR));
        assert!(matches!(m.entry(IceKey::AdaOccurrence), Err(Error::UnmappedIce(_))));
    }

    #[test]
    fn default_map_covers_every_key() {
        let m = StrategyMap::case_study_default();
        for k in IceKey::ALL {
            assert!(m.entries.contains_key(&k), "{k}");
        }
        let round: StrategyMap = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(round, m);
    }

    #[test]
    fn ice_keys_round_trip_names() {
        for k in IceKey::ALL {
            assert_eq!(IceKey::parse(k.as_str()), Some(k));
            assert_eq!(serde_json::to_value(k).unwrap(), k.as_str());
        }
    }

    #[test]
    fn record_validation() {
        let r = PatientRecord::new("p", 1)
            .with_event(Event::assessment(10, ResponseGrade::SD))
            .with_event(Event::assessment(5, ResponseGrade::SD));
        assert!(r.validate().is_err());
        let r = PatientRecord::new("p", 1).with_event(Event::toxicity(3, 7, true));
        assert!(r.validate().is_err());
        let r = PatientRecord::new("p", 1)
            .with_event(Event::ice(3, IceType::Death))
            .with_event(Event::ice(4, IceType::Death));
        assert!(r.validate().is_err());
        let mut r = PatientRecord::new("p", 1).with_event(Event::assessment(1, ResponseGrade::SD));
        r.first_dose_day = 2;
        assert!(r.validate().is_err());
    }
}
