//! Shared domain types: outcome categories and utility scores, dose grid,
//! per-dose outcome counts, design configuration and derived outcomes.
//!
//! Every type here is an immutable value with a versioned (`"v1"`) JSON form.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::decision::boin_boundaries;
use crate::error::{Error, Result};
use crate::estimand::{IceKey, Strategy};

/// Payload schema version. Only `"v1"` exists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemaVersion {
    #[default]
    #[serde(rename = "v1")]
    V1,
}

/// One-based outcome category `Y` (1 = least favorable in the canonical layout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Category(u8);

impl Category {
    /// Builds a category from its one-based index.
    ///
    /// Panics if `index` is zero or exceeds 255.
    pub fn new(index: usize) -> Self {
        assert!(index >= 1 && index <= u8::MAX as usize, "category index out of range");
        Category(index as u8)
    }

    /// One-based index.
    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Zero-based slot into count and prior vectors.
    pub fn slot(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Y={}", self.0)
    }
}

/// A single outcome category: its binary flags and elicited utility score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryDef {
    pub efficacy_flag: bool,
    pub toxicity_flag: bool,
    pub psi: f64,
}

/// Ordered outcome categories with utility scores `psi` on the 0..=100 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilitySpec {
    categories: Vec<CategoryDef>,
}

/// Canonical binary-by-binary layout: Y=1 (e0,t1), Y=2 (e0,t0), Y=3 (e1,t1), Y=4 (e1,t0).
const CANONICAL_FLAGS: [(bool, bool); 4] = [(false, true), (false, false), (true, true), (true, false)];

impl UtilitySpec {
    /// Builds a spec from explicit categories without validating it.
    pub fn new(categories: Vec<CategoryDef>) -> Self {
        UtilitySpec { categories }
    }

    /// Canonical four-category spec with the given scores in Y order.
    pub fn canonical(psi: [f64; 4]) -> Self {
        let categories = CANONICAL_FLAGS
            .iter()
            .zip(psi)
            .map(|(&(e, t), psi)| CategoryDef {
                efficacy_flag: e,
                toxicity_flag: t,
                psi,
            })
            .collect();
        UtilitySpec { categories }
    }

    /// The worked example scores (0, 10, 60, 100).
    pub fn example() -> Self {
        Self::canonical([0.0, 10.0, 60.0, 100.0])
    }

    /// Affinely rescales arbitrary scores so the minimum maps to 0 and the maximum to 100.
    pub fn normalized(categories: Vec<CategoryDef>) -> Result<Self> {
        let (lo, hi) = categories.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            (lo.min(c.psi), hi.max(c.psi))
        });
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::InvalidUtilitySpec(
                "cannot normalize: scores must be finite and not all equal".into(),
            ));
        }
        let categories = categories
            .into_iter()
            .map(|c| CategoryDef {
                psi: 100.0 * (c.psi - lo) / (hi - lo),
                ..c
            })
            .collect();
        Ok(UtilitySpec { categories })
    }

    pub fn categories(&self) -> &[CategoryDef] {
        &self.categories
    }

    /// Number of categories `K`.
    pub fn k(&self) -> usize {
        self.categories.len()
    }

    pub fn psi(&self) -> Vec<f64> {
        self.categories.iter().map(|c| c.psi).collect()
    }

    pub fn psi_of(&self, category: Category) -> f64 {
        self.categories[category.slot()].psi
    }

    pub fn flags_of(&self, category: Category) -> (bool, bool) {
        let c = &self.categories[category.slot()];
        (c.efficacy_flag, c.toxicity_flag)
    }

    pub fn iter_categories(&self) -> impl Iterator<Item = Category> + '_ {
        (1..=self.k()).map(Category::new)
    }

    /// Maps a binary (efficacy, toxicity) outcome onto its category.
    pub fn classify(&self, efficacy: bool, toxicity: bool) -> Result<Category> {
        self.categories
            .iter()
            .position(|c| c.efficacy_flag == efficacy && c.toxicity_flag == toxicity)
            .map(|i| Category::new(i + 1))
            .ok_or(Error::UnknownOutcomePair { efficacy, toxicity })
    }

    /// Category with the smallest score (ties resolved to the lowest index).
    pub fn worst_category(&self) -> Category {
        let mut best = 0;
        for (i, c) in self.categories.iter().enumerate() {
            if c.psi < self.categories[best].psi {
                best = i;
            }
        }
        Category::new(best + 1)
    }

    /// Lists every violated invariant. Empty iff the spec is valid.
    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let k = self.k();
        if k < 2 {
            v.push(format!("K must be at least 2, got {k}"));
        }
        if k > u8::MAX as usize {
            v.push(format!("K must be at most 255, got {k}"));
        }
        for (i, c) in self.categories.iter().enumerate() {
            if !c.psi.is_finite() || !(0.0..=100.0).contains(&c.psi) {
                v.push(format!("psi for Y={} must lie in [0, 100], got {}", i + 1, c.psi));
            }
        }
        for i in 0..k {
            for j in (i + 1)..k {
                let (a, b) = (&self.categories[i], &self.categories[j]);
                if a.efficacy_flag == b.efficacy_flag && a.toxicity_flag == b.toxicity_flag {
                    v.push(format!(
                        "outcome pair (e={}, t={}) appears more than once (Y={} and Y={})",
                        a.efficacy_flag as u8,
                        a.toxicity_flag as u8,
                        i + 1,
                        j + 1
                    ));
                }
            }
        }
        if k > 0 {
            let psi = self.psi();
            let lo = psi.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo != 0.0 {
                v.push(format!("minimum psi must be 0 (anchor), got {lo}"));
            }
            if hi != 100.0 {
                v.push(format!("maximum psi must be 100 (anchor), got {hi}"));
            }
            if let Ok(best) = self.classify(true, false) {
                if self.psi_of(best) < hi {
                    v.push(format!("psi for (e=1, t=0) must be the maximum, got {}", self.psi_of(best)));
                }
            }
            if let Ok(worst) = self.classify(false, true) {
                if self.psi_of(worst) > lo {
                    v.push(format!("psi for (e=0, t=1) must be the minimum, got {}", self.psi_of(worst)));
                }
            }
        }
        ValidationReport { violations: v }
    }

    /// Returns `self` if valid, otherwise an error listing every violation.
    pub fn validated(self) -> Result<Self> {
        let report = self.validate();
        if report.is_valid() {
            Ok(self)
        } else {
            Err(Error::InvalidUtilitySpec(report.violations.join("; ")))
        }
    }

    /// Checks only the [0, 100] anchoring required by the quasi-beta-binomial form.
    pub fn check_anchored(&self) -> Result<()> {
        let psi = self.psi();
        let lo = psi.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo != 0.0 || hi != 100.0 || psi.iter().any(|p| !p.is_finite()) {
            return Err(Error::UnanchoredUtility(format!("scores span [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Free-standing form of [`UtilitySpec::classify`].
pub fn classify_outcome(efficacy: bool, toxicity: bool, spec: &UtilitySpec) -> Result<Category> {
    spec.classify(efficacy, toxicity)
}

/// Free-standing form of [`UtilitySpec::validate`].
pub fn validate_utility_spec(spec: &UtilitySpec) -> ValidationReport {
    spec.validate()
}

#[derive(Serialize, Deserialize)]
struct UtilitySpecRepr {
    #[serde(default)]
    version: SchemaVersion,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    categories: Vec<CategoryDef>,
}

impl Serialize for UtilitySpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        UtilitySpecRepr {
            version: SchemaVersion::V1,
            k: Some(self.k()),
            categories: self.categories.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for UtilitySpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = UtilitySpecRepr::deserialize(d)?;
        if let Some(k) = repr.k {
            if k != repr.categories.len() {
                return Err(serde::de::Error::custom(format!(
                    "K = {k} but {} categories listed",
                    repr.categories.len()
                )));
            }
        }
        Ok(UtilitySpec {
            categories: repr.categories,
        })
    }
}

/// Result of validating a value: the list of violated invariants.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseLevel {
    pub index: usize,
    pub label: String,
    pub amount: f64,
    pub unit: String,
}

/// Ordered dose levels, one-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseGrid {
    #[serde(default)]
    pub version: SchemaVersion,
    pub doses: Vec<DoseLevel>,
}

impl DoseGrid {
    /// A grid of `j` unlabeled doses with amounts 1..=j.
    pub fn numbered(j: usize) -> Self {
        DoseGrid {
            version: SchemaVersion::V1,
            doses: (1..=j)
                .map(|i| DoseLevel {
                    index: i,
                    label: format!("dose {i}"),
                    amount: i as f64,
                    unit: "level".into(),
                })
                .collect(),
        }
    }

    /// The eight planned levels of the case-study escalation (0.15 mg to 1400 mg).
    pub fn case_study() -> Self {
        let amounts = [0.15, 0.8, 8.0, 24.0, 80.0, 240.0, 800.0, 1400.0];
        DoseGrid {
            version: SchemaVersion::V1,
            doses: amounts
                .iter()
                .enumerate()
                .map(|(i, &a)| DoseLevel {
                    index: i + 1,
                    label: format!("DL{}", i + 1),
                    amount: a,
                    unit: "mg".into(),
                })
                .collect(),
        }
    }

    /// Number of dose levels `J`.
    pub fn len(&self) -> usize {
        self.doses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.doses.is_empty() {
            return Err(Error::InvalidDoseGrid("at least one dose is required".into()));
        }
        for (i, d) in self.doses.iter().enumerate() {
            if d.index != i + 1 {
                return Err(Error::InvalidDoseGrid(format!(
                    "dose at position {} has index {}",
                    i + 1,
                    d.index
                )));
            }
            if !(d.amount > 0.0 && d.amount.is_finite()) {
                return Err(Error::InvalidDoseGrid(format!("dose {} amount must be positive", d.index)));
            }
            if i > 0 && d.amount <= self.doses[i - 1].amount {
                return Err(Error::InvalidDoseGrid(format!(
                    "amounts must increase strictly (dose {})",
                    d.index
                )));
            }
        }
        Ok(())
    }
}

/// Per-dose outcome counts `n_jk` plus enrollment bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseState {
    pub dose_index: usize,
    pub counts: Vec<u32>,
    /// Enrolled patients, including those whose outcome is not (yet) derivable.
    pub n_enrolled: u32,
}

impl DoseState {
    pub fn empty(dose_index: usize, k: usize) -> Self {
        DoseState {
            dose_index,
            counts: vec![0; k],
            n_enrolled: 0,
        }
    }

    pub fn with_counts(dose_index: usize, counts: Vec<u32>) -> Self {
        let n = counts.iter().sum();
        DoseState {
            dose_index,
            counts,
            n_enrolled: n,
        }
    }

    /// Evaluable patients `n_j`.
    pub fn n(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn is_tested(&self) -> bool {
        self.n() > 0
    }

    /// Evaluable patients with a toxicity-flagged category.
    pub fn toxicity_count(&self, spec: &UtilitySpec) -> u32 {
        self.flagged_count(spec, |c| c.toxicity_flag)
    }

    /// Evaluable patients with an efficacy-flagged category.
    pub fn efficacy_count(&self, spec: &UtilitySpec) -> u32 {
        self.flagged_count(spec, |c| c.efficacy_flag)
    }

    fn flagged_count(&self, spec: &UtilitySpec, pred: impl Fn(&CategoryDef) -> bool) -> u32 {
        self.counts
            .iter()
            .zip(spec.categories())
            .filter(|(_, c)| pred(c))
            .map(|(n, _)| n)
            .sum()
    }

    /// Returns a new state with the outcomes added; `self` is left untouched.
    pub fn record_outcomes(&self, outcomes: &[DerivedOutcome]) -> Result<DoseState> {
        let mut next = self.clone();
        for o in outcomes {
            if o.dose_index != self.dose_index {
                return Err(Error::DoseMismatch {
                    patient_id: o.patient_id.clone(),
                    outcome_dose: o.dose_index,
                    state_dose: self.dose_index,
                });
            }
            next.n_enrolled += 1;
            if let (true, Some(cat)) = (o.evaluable, o.category) {
                let slot = next.counts.get_mut(cat.slot()).ok_or(Error::DimensionMismatch {
                    expected: self.counts.len(),
                    actual: cat.index(),
                })?;
                *slot += 1;
            }
        }
        Ok(next)
    }
}

/// Free-standing form of [`DoseState::record_outcomes`].
pub fn record_outcomes(state: &DoseState, outcomes: &[DerivedOutcome]) -> Result<DoseState> {
    state.record_outcomes(outcomes)
}

/// Per-dose states for doses `1..=num_doses` built from scratch out of derived outcomes.
pub fn tally_outcomes(outcomes: &[DerivedOutcome], num_doses: usize, k: usize) -> Result<Vec<DoseState>> {
    let mut groups: Vec<Vec<DerivedOutcome>> = vec![Vec::new(); num_doses];
    for o in outcomes {
        if o.dose_index == 0 || o.dose_index > num_doses {
            return Err(Error::InvalidRecord {
                patient_id: o.patient_id.clone(),
                reason: format!("dose {} outside 1..={num_doses}", o.dose_index),
            });
        }
        groups[o.dose_index - 1].push(o.clone());
    }
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| DoseState::empty(i + 1, k).record_outcomes(g))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    #[default]
    Deterministic,
    AdaptiveRandomization,
    EqualRandomization,
}

/// Direction of the futility gate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FutilityRule {
    /// Inadmissible when `Pr(pi_e < phi_e | D) > delta_e`.
    #[default]
    EfficacyBelowLimit,
    /// Inadmissible when `Pr(pi_e > phi_e | D) > delta_e`. This flags doses that are likely
    /// efficacious; kept for comparison with tables computed that way.
    EfficacyAboveLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceleratedTitration {
    /// Any toxicity of at least this grade ends single-patient cohorts.
    pub trigger_grade: u8,
    /// Reaching this dose ends single-patient cohorts.
    pub trigger_dose_index: usize,
}

/// Every tuning constant of the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConfig {
    #[serde(default)]
    pub version: SchemaVersion,
    /// Dirichlet prior `a_k`, one per outcome category.
    pub prior_alpha: Vec<f64>,
    pub phi_t: f64,
    pub phi_e: f64,
    pub delta_t: f64,
    pub delta_e: f64,
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub target_phi: f64,
    pub cohort_size: u32,
    pub max_n: u32,
    pub per_dose_cap: u32,
    #[serde(default)]
    pub assignment_mode: AssignmentMode,
    #[serde(default)]
    pub accelerated_titration: Option<AcceleratedTitration>,
    #[serde(default)]
    pub futility_rule: FutilityRule,
    #[serde(default = "default_start_dose")]
    pub start_dose: usize,
}

fn default_start_dose() -> usize {
    1
}

impl DesignConfig {
    /// Vague prior `a_k = 1/K`.
    pub fn vague_prior(k: usize) -> Vec<f64> {
        vec![1.0 / k as f64; k]
    }

    /// The case-study design: target 0.3, boundaries from the BOIN formula,
    /// 27 patients at most, 12 per dose, single-patient titration until a grade >= 2
    /// toxicity or dose level 5.
    pub fn case_study() -> Self {
        let (lambda_e, lambda_d) = boin_boundaries(0.3, None, None).expect("valid target");
        DesignConfig {
            version: SchemaVersion::V1,
            prior_alpha: Self::vague_prior(4),
            phi_t: 0.35,
            phi_e: 0.25,
            delta_t: 0.95,
            delta_e: 0.90,
            lambda_e,
            lambda_d,
            target_phi: 0.3,
            cohort_size: 3,
            max_n: 27,
            per_dose_cap: 12,
            assignment_mode: AssignmentMode::Deterministic,
            accelerated_titration: Some(AcceleratedTitration {
                trigger_grade: 2,
                trigger_dose_index: 5,
            }),
            futility_rule: FutilityRule::EfficacyBelowLimit,
            start_dose: 1,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut v = Vec::new();
        let unit = |name: &str, x: f64, v: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("{name} must lie in [0, 1], got {x}"));
            }
        };
        let open = |name: &str, x: f64, v: &mut Vec<String>| {
            if !(x > 0.0 && x < 1.0) {
                v.push(format!("{name} must lie in (0, 1), got {x}"));
            }
        };
        if self.prior_alpha.is_empty() || self.prior_alpha.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            v.push("prior_alpha components must be positive".into());
        }
        unit("phi_t", self.phi_t, &mut v);
        unit("phi_e", self.phi_e, &mut v);
        open("delta_t", self.delta_t, &mut v);
        open("delta_e", self.delta_e, &mut v);
        open("lambda_e", self.lambda_e, &mut v);
        open("lambda_d", self.lambda_d, &mut v);
        open("target_phi", self.target_phi, &mut v);
        if !(self.lambda_e < self.target_phi && self.target_phi < self.lambda_d) {
            v.push(format!(
                "boundaries must satisfy lambda_e < target_phi < lambda_d, got {} / {} / {}",
                self.lambda_e, self.target_phi, self.lambda_d
            ));
        }
        if self.phi_t < self.target_phi {
            v.push(format!(
                "phi_t ({}) must not be below target_phi ({})",
                self.phi_t, self.target_phi
            ));
        }
        if self.cohort_size == 0 {
            v.push("cohort_size must be positive".into());
        }
        if !(self.cohort_size <= self.per_dose_cap && self.per_dose_cap <= self.max_n) {
            v.push(format!(
                "caps must satisfy cohort_size <= per_dose_cap <= max_n, got {} / {} / {}",
                self.cohort_size, self.per_dose_cap, self.max_n
            ));
        }
        if self.start_dose == 0 {
            v.push("start_dose is one-based".into());
        }
        if let Some(at) = &self.accelerated_titration {
            if at.trigger_grade == 0 || at.trigger_grade > 5 {
                v.push(format!("trigger_grade must lie in 1..=5, got {}", at.trigger_grade));
            }
            if at.trigger_dose_index == 0 {
                v.push("trigger_dose_index is one-based".into());
            }
        }
        ValidationReport { violations: v }
    }

    /// Validates the config on its own and against the utility spec and grid size.
    pub fn check(&self, spec: &UtilitySpec, num_doses: usize) -> Result<()> {
        let mut report = self.validate();
        if self.prior_alpha.len() != spec.k() {
            report.violations.push(format!(
                "prior_alpha has {} components but the utility spec has K = {}",
                self.prior_alpha.len(),
                spec.k()
            ));
        }
        if self.start_dose > num_doses {
            report
                .violations
                .push(format!("start_dose {} exceeds the grid size {num_doses}", self.start_dose));
        }
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(report.violations.join("; ")))
        }
    }
}

/// One step of an estimand derivation: which event was seen and what the strategy did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub day: i64,
    pub ice_type: IceKey,
    pub strategy: Strategy,
    pub effect: String,
}

/// A patient's outcome after intercurrent-event strategies were applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedOutcome {
    pub patient_id: String,
    /// Dose the outcome is attributed to.
    pub dose_index: usize,
    /// `None` serializes as `"MISSING"`.
    #[serde(with = "missing_category")]
    pub category: Option<Category>,
    pub efficacy: Option<bool>,
    pub toxicity: Option<bool>,
    pub evaluable: bool,
    /// Set for outcomes left missing by a hypothetical strategy; the tipping-point scan
    /// imputes these.
    #[serde(default)]
    pub flagged_for_sensitivity: bool,
    #[serde(default)]
    pub strategy_trace: Vec<TraceEntry>,
}

impl DerivedOutcome {
    /// An evaluable outcome with no intercurrent events, mostly for tests and fixtures.
    pub fn observed(patient_id: impl Into<String>, dose_index: usize, category: Category) -> Self {
        DerivedOutcome {
            patient_id: patient_id.into(),
            dose_index,
            category: Some(category),
            efficacy: None,
            toxicity: None,
            evaluable: true,
            flagged_for_sensitivity: false,
            strategy_trace: Vec::new(),
        }
    }

    pub fn missing(patient_id: impl Into<String>, dose_index: usize) -> Self {
        DerivedOutcome {
            patient_id: patient_id.into(),
            dose_index,
            category: None,
            efficacy: None,
            toxicity: None,
            evaluable: false,
            flagged_for_sensitivity: true,
            strategy_trace: Vec::new(),
        }
    }

    /// True when the outcome contributes to the dose's counts.
    pub fn counts(&self) -> bool {
        self.evaluable && self.category.is_some()
    }
}

mod missing_category {
    use super::Category;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(c: &Option<Category>, s: S) -> Result<S::Ok, S::Error> {
        match c {
            Some(c) => s.serialize_u8(c.index() as u8),
            None => s.serialize_str("MISSING"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Index(u8),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Category>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Index(0)) => Err(de::Error::custom("categories are one-based")),
            Some(Repr::Index(i)) => Ok(Some(Category::new(i as usize))),
            Some(Repr::Text(t)) if t == "MISSING" => Ok(None),
            Some(Repr::Text(t)) => Err(de::Error::custom(format!("unknown category `{t}`"))),
        }
    }
}
