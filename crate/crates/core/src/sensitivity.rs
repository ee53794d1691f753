//! Robustness of the selected OBD: tipping-point scans, Haldane-prior comparison and
//! strategy-map comparison.
//!
//! The tipping scan flips outcomes of "flaggable" patients to a target category (by
//! default the worst one) and asks for the smallest number of flips that changes the OBD.
//! Patients with the same dose and derived category are interchangeable for the OBD, so
//! the default search enumerates how many patients of each such group are flipped rather
//! than which ones. That is exact and far cheaper than visiting every subset.

use serde::{Deserialize, Serialize};

use crate::decision::{obd_from_states, select_obd, tested_doses};
use crate::error::{Error, Result};
use crate::estimand::{compare_strategies, derive_outcome, PatientRecord, StrategyComparison, StrategyMap};
use crate::model::{tally_outcomes, Category, DerivedOutcome, DesignConfig, UtilitySpec};
use crate::posterior::{haldane_sensitivity, summarize, PosteriorSummary, DEFAULT_HALDANE_EPSILON};

/// Which patients a tipping scan may flip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipScope {
    /// Patients whose outcome is missing (hypothetical strategy); flipping imputes the target.
    #[default]
    Missing,
    /// Evaluable patients at the baseline OBD whose category scores above the target.
    FavorableAtObd,
    /// Evaluable patients at any dose whose category scores above the target.
    FavorableAll,
}

/// How the smallest OBD-changing flip count is found.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TippingSearch {
    /// Exact search over flip counts per (dose, category) group.
    #[default]
    Grouped,
    /// Exact search over every subset; at most [`MAX_SUBSET_PATIENTS`] flaggable patients.
    Subsets,
    /// Only the deterministic highest-score-first ordering.
    WorstFirst,
}

pub const MAX_SUBSET_PATIENTS: usize = 20;
/// Largest number of group configurations the grouped search visits before it falls back
/// to the worst-first ordering.
pub const MAX_GROUPED_CONFIGURATIONS: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TippingOptions {
    /// Defaults to the worst category of the utility spec.
    pub flip_to: Option<Category>,
    pub scope: FlipScope,
    pub search: TippingSearch,
}

impl Default for TippingOptions {
    fn default() -> Self {
        TippingOptions {
            flip_to: None,
            scope: FlipScope::Missing,
            search: TippingSearch::Grouped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingRow {
    pub num_flipped: usize,
    pub flip_target_category: Category,
    pub resulting_obd: Option<usize>,
    /// Posterior mean utility per dose; `None` where no patient is evaluable.
    pub utilities: Vec<Option<f64>>,
    /// Patients flipped in this row: an OBD-changing choice when one exists, the
    /// worst-first choice otherwise.
    pub flipped: Vec<String>,
    pub changes_obd: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TippingReport {
    pub baseline_obd: Option<usize>,
    pub flip_to: Category,
    pub scope: FlipScope,
    /// Search actually performed (the grouped search may fall back to worst-first).
    pub search: TippingSearch,
    pub flaggable: Vec<String>,
    pub scan: Vec<TippingRow>,
    /// Smallest number of flips that changes the OBD.
    pub tipping_point: Option<usize>,
}

impl TippingReport {
    pub fn render_text(&self) -> String {
        let base = self.baseline_obd.map_or("none".into(), |d| d.to_string());
        let mut out = format!(
            "baseline OBD {base}; flipping to {} ({:?}, {:?} search); tipping point {}\n",
            self.flip_to,
            self.scope,
            self.search,
            self.tipping_point.map_or("none".into(), |m| m.to_string())
        );
        out.push_str(&format!("{:>4} {:>6}  utilities\n", "m", "OBD"));
        for row in &self.scan {
            let us: Vec<String> = row
                .utilities
                .iter()
                .map(|u| u.map_or("-".into(), |u| format!("{u:.4}")))
                .collect();
            let obd = row.resulting_obd.map_or("none".into(), |d| d.to_string());
            out.push_str(&format!("{:>4} {:>6}  {}\n", row.num_flipped, obd, us.join(" ")));
        }
        out
    }
}

struct Evaluator<'a> {
    base: &'a [DerivedOutcome],
    spec: &'a UtilitySpec,
    config: &'a DesignConfig,
    num_doses: usize,
    flip_to: Category,
}

impl Evaluator<'_> {
    fn evaluate(&self, flipped: &[usize]) -> Result<(Option<usize>, Vec<Option<f64>>)> {
        let mut outcomes = self.base.to_vec();
        for &i in flipped {
            let o = &mut outcomes[i];
            let (e, t) = self.spec.flags_of(self.flip_to);
            o.category = Some(self.flip_to);
            o.efficacy = Some(e);
            o.toxicity = Some(t);
            o.evaluable = true;
        }
        let states = tally_outcomes(&outcomes, self.num_doses, self.spec.k())?;
        let (summaries, sel) = obd_from_states(&states, self.spec, self.config)?;
        let utilities = states
            .iter()
            .zip(&summaries)
            .map(|(s, u)| s.is_tested().then_some(u.mean_utility))
            .collect();
        Ok((sel.obd, utilities))
    }
}

/// Scans `m = 0..=M` flips of flaggable patients to the target category.
pub fn tipping_scan(
    records: &[PatientRecord],
    map: &StrategyMap,
    spec: &UtilitySpec,
    config: &DesignConfig,
    num_doses: usize,
    options: TippingOptions,
) -> Result<TippingReport> {
    let flip_to = options.flip_to.unwrap_or_else(|| spec.worst_category());
    if flip_to.index() == 0 || flip_to.index() > spec.k() {
        return Err(Error::InvalidArgument(format!("flip target {flip_to} outside 1..={}", spec.k())));
    }
    let outcomes = records
        .iter()
        .map(|r| derive_outcome(r, map, spec))
        .collect::<Result<Vec<_>>>()?;
    let eval = Evaluator {
        base: &outcomes,
        spec,
        config,
        num_doses,
        flip_to,
    };
    let (baseline_obd, baseline_u) = eval.evaluate(&[])?;

    let target_psi = spec.psi_of(flip_to);
    let score = |o: &DerivedOutcome| o.category.map(|c| spec.psi_of(c));
    let mut flaggable: Vec<usize> = (0..outcomes.len())
        .filter(|&i| {
            let o = &outcomes[i];
            match options.scope {
                FlipScope::Missing => o.category.is_none(),
                FlipScope::FavorableAtObd => {
                    o.evaluable && Some(o.dose_index) == baseline_obd && score(o).is_some_and(|p| p > target_psi)
                }
                FlipScope::FavorableAll => o.evaluable && score(o).is_some_and(|p| p > target_psi),
            }
        })
        .collect();
    // worst-first: highest score first, then record order
    flaggable.sort_by(|&a, &b| {
        let (sa, sb) = (score(&outcomes[a]).unwrap_or(0.0), score(&outcomes[b]).unwrap_or(0.0));
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    let m_max = flaggable.len();

    let mut search = options.search;
    let mut witnesses: Vec<Option<Vec<usize>>> = vec![None; m_max + 1];
    match search {
        TippingSearch::Subsets => {
            if m_max > MAX_SUBSET_PATIENTS {
                return Err(Error::InvalidArgument(format!(
                    "subset search supports at most {MAX_SUBSET_PATIENTS} flaggable patients, found {m_max}"
                )));
            }
            for mask in 1u64..(1 << m_max) {
                let m = mask.count_ones() as usize;
                if witnesses[m].is_some() {
                    continue;
                }
                let chosen: Vec<usize> = (0..m_max).filter(|b| mask & (1 << b) != 0).map(|b| flaggable[b]).collect();
                if eval.evaluate(&chosen)?.0 != baseline_obd {
                    witnesses[m] = Some(chosen);
                }
            }
        }
        TippingSearch::Grouped => {
            let mut groups: Vec<Vec<usize>> = Vec::new();
            let mut keys: Vec<(usize, Option<Category>)> = Vec::new();
            for &i in &flaggable {
                let key = (outcomes[i].dose_index, outcomes[i].category);
                match keys.iter().position(|k| *k == key) {
                    Some(g) => groups[g].push(i),
                    None => {
                        keys.push(key);
                        groups.push(vec![i]);
                    }
                }
            }
            let space = groups
                .iter()
                .try_fold(1u64, |acc, g| acc.checked_mul(g.len() as u64 + 1));
            if space.is_none_or(|s| s > MAX_GROUPED_CONFIGURATIONS) {
                search = TippingSearch::WorstFirst;
            } else {
                let mut counts = vec![0usize; groups.len()];
                'outer: loop {
                    // odometer increment
                    let mut g = 0;
                    loop {
                        if g == groups.len() {
                            break 'outer;
                        }
                        if counts[g] < groups[g].len() {
                            counts[g] += 1;
                            break;
                        }
                        counts[g] = 0;
                        g += 1;
                    }
                    let m: usize = counts.iter().sum();
                    if witnesses[m].is_some() {
                        continue;
                    }
                    let chosen: Vec<usize> = groups
                        .iter()
                        .zip(&counts)
                        .flat_map(|(grp, c)| grp[..*c].iter().copied())
                        .collect();
                    if eval.evaluate(&chosen)?.0 != baseline_obd {
                        witnesses[m] = Some(chosen);
                    }
                }
            }
        }
        TippingSearch::WorstFirst => {}
    }

    let mut scan = vec![TippingRow {
        num_flipped: 0,
        flip_target_category: flip_to,
        resulting_obd: baseline_obd,
        utilities: baseline_u,
        flipped: Vec::new(),
        changes_obd: false,
    }];
    for m in 1..=m_max {
        let chosen = match (&witnesses[m], search) {
            (Some(w), _) => w.clone(),
            _ => flaggable[..m].to_vec(),
        };
        let (obd, utilities) = eval.evaluate(&chosen)?;
        let changes_obd = obd != baseline_obd;
        if search != TippingSearch::WorstFirst {
            debug_assert_eq!(changes_obd, witnesses[m].is_some());
        }
        scan.push(TippingRow {
            num_flipped: m,
            flip_target_category: flip_to,
            resulting_obd: obd,
            utilities,
            flipped: chosen.iter().map(|&i| outcomes[i].patient_id.clone()).collect(),
            changes_obd,
        });
    }
    let tipping_point = scan.iter().find(|r| r.changes_obd).map(|r| r.num_flipped);
    Ok(TippingReport {
        baseline_obd,
        flip_to,
        scope: options.scope,
        search,
        flaggable: flaggable.iter().map(|&i| outcomes[i].patient_id.clone()).collect(),
        scan,
        tipping_point,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorComparisonRow {
    pub dose_index: usize,
    pub n: u32,
    pub design: PosteriorSummary,
    /// `None` for doses without evaluable patients.
    pub haldane: Option<PosteriorSummary>,
    pub utility_difference: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSensitivityReport {
    pub epsilon: f64,
    pub rows: Vec<PriorComparisonRow>,
    pub design_obd: Option<usize>,
    pub haldane_obd: Option<usize>,
    pub obd_disagreement: bool,
}

/// Posterior summaries and OBD under the design prior and under a near-Haldane prior.
pub fn prior_sensitivity(
    records: &[PatientRecord],
    map: &StrategyMap,
    spec: &UtilitySpec,
    config: &DesignConfig,
    num_doses: usize,
    epsilon: Option<f64>,
) -> Result<PriorSensitivityReport> {
    let epsilon = epsilon.unwrap_or(DEFAULT_HALDANE_EPSILON);
    let outcomes = records
        .iter()
        .map(|r| derive_outcome(r, map, spec))
        .collect::<Result<Vec<_>>>()?;
    let states = tally_outcomes(&outcomes, num_doses, spec.k())?;
    let tested = tested_doses(&states, spec);
    let mut rows = Vec::with_capacity(num_doses);
    let mut design_summaries = Vec::with_capacity(num_doses);
    let mut haldane_summaries = Vec::with_capacity(num_doses);
    for s in &states {
        let design = summarize(s, spec, config)?;
        let haldane = if s.is_tested() {
            Some(haldane_sensitivity(s, spec, config, epsilon)?)
        } else {
            None
        };
        design_summaries.push(design.clone());
        haldane_summaries.push(haldane.clone().unwrap_or_else(|| design.clone()));
        rows.push(PriorComparisonRow {
            dose_index: s.dose_index,
            n: s.n(),
            utility_difference: haldane.as_ref().map(|h| h.mean_utility - design.mean_utility),
            design,
            haldane,
        });
    }
    let design_obd = select_obd(&design_summaries, &tested, config).obd;
    let haldane_obd = select_obd(&haldane_summaries, &tested, config).obd;
    Ok(PriorSensitivityReport {
        epsilon,
        rows,
        design_obd,
        haldane_obd,
        obd_disagreement: design_obd != haldane_obd,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapObdRow {
    pub map_label: String,
    pub obd: Option<usize>,
    pub mtd: Option<usize>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySensitivityReport {
    pub comparison: StrategyComparison,
    pub obd_rows: Vec<MapObdRow>,
    pub obd_disagreement: bool,
}

/// OBD under each strategy map, alongside the strategy-by-question comparison.
pub fn strategy_sensitivity(
    records: &[PatientRecord],
    maps: &[StrategyMap],
    spec: &UtilitySpec,
    config: &DesignConfig,
    num_doses: usize,
) -> Result<StrategySensitivityReport> {
    if maps.len() < 2 {
        return Err(Error::InvalidArgument("strategy sensitivity needs at least two maps".into()));
    }
    let comparison = compare_strategies(records, maps, spec, config, num_doses)?;
    let obd_rows: Vec<MapObdRow> = comparison
        .maps
        .iter()
        .map(|m| MapObdRow {
            map_label: m.map_label.clone(),
            obd: m.obd.obd,
            mtd: m.obd.mtd,
            rationale: m.obd.rationale.clone(),
        })
        .collect();
    let obd_disagreement = obd_rows.windows(2).any(|w| w[0].obd != w[1].obd);
    Ok(StrategySensitivityReport {
        comparison,
        obd_rows,
        obd_disagreement,
    })
}
