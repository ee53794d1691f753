use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{derive_outcome, IceKey, PatientRecord, Strategy, StrategyMap};
use crate::decision::{obd_from_states, ObdSelection};
use crate::error::{Error, Result};
use crate::model::{tally_outcomes, DerivedOutcome, DesignConfig, DoseState, UtilitySpec};

/// Everything one strategy map implies for a set of records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub map_label: String,
    pub outcomes: Vec<DerivedOutcome>,
    pub states: Vec<DoseState>,
    /// Posterior mean utility per dose, `None` for doses without evaluable patients.
    pub utilities: Vec<Option<f64>>,
    pub obd: ObdSelection,
}

/// One map's view of a strategy row: the ICE types it handles that way and how many
/// patients the strategy was applied to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCell {
    pub ice_types: Vec<IceKey>,
    pub patients_affected: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub strategy: Strategy,
    pub clinical_question: String,
    /// One cell per compared map, in map order.
    pub cells: Vec<QuestionCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub maps: Vec<MapResult>,
    /// Keyed by the five estimand strategies, in a fixed order.
    pub questions: Vec<QuestionRow>,
}

impl StrategyComparison {
    /// OBD per map, in map order.
    pub fn obds(&self) -> Vec<Option<usize>> {
        self.maps.iter().map(|m| m.obd.obd).collect()
    }

    /// Plain-text table of per-dose utilities and the OBD under each map.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let num_doses = self.maps.first().map_or(0, |m| m.states.len());
        out.push_str(&format!("{:<28}", "map"));
        for j in 1..=num_doses {
            out.push_str(&format!("{:>10}", format!("U{j}")));
        }
        out.push_str(&format!("{:>6}\n", "OBD"));
        for m in &self.maps {
            out.push_str(&format!("{:<28}", truncate(&m.map_label, 27)));
            for u in &m.utilities {
                match u {
                    Some(u) => out.push_str(&format!("{u:>10.4}")),
                    None => out.push_str(&format!("{:>10}", "-")),
                }
            }
            let obd = m.obd.obd.map_or("none".to_string(), |d| d.to_string());
            out.push_str(&format!("{obd:>6}\n"));
        }
        out
    }
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// Derives every record under each map and reports per-dose counts, utilities and the
/// resulting OBD, plus a strategy-by-map overview keyed by clinical question.
pub fn compare_strategies(
    records: &[PatientRecord],
    maps: &[StrategyMap],
    spec: &UtilitySpec,
    config: &DesignConfig,
    num_doses: usize,
) -> Result<StrategyComparison> {
    if maps.is_empty() {
        return Err(Error::InvalidArgument("at least one strategy map is required".into()));
    }
    let mut results = Vec::with_capacity(maps.len());
    for map in maps {
        let outcomes = records
            .iter()
            .map(|r| derive_outcome(r, map, spec))
            .collect::<Result<Vec<_>>>()?;
        let states = tally_outcomes(&outcomes, num_doses, spec.k())?;
        let (summaries, obd) = obd_from_states(&states, spec, config)?;
        let utilities = states
            .iter()
            .zip(&summaries)
            .map(|(s, u)| s.is_tested().then_some(u.mean_utility))
            .collect();
        results.push(MapResult {
            map_label: map.label(),
            outcomes,
            states,
            utilities,
            obd,
        });
    }

    let questions = Strategy::ALL
        .iter()
        .map(|&strategy| QuestionRow {
            strategy,
            clinical_question: strategy.clinical_question().to_string(),
            cells: maps
                .iter()
                .zip(&results)
                .map(|(map, res)| {
                    let ice_types = map
                        .entries
                        .iter()
                        .filter(|(_, e)| e.strategy == strategy)
                        .map(|(k, _)| *k)
                        .collect();
                    let patients_affected = res
                        .outcomes
                        .iter()
                        .filter(|o| o.strategy_trace.iter().any(|t| t.strategy == strategy))
                        .count();
                    QuestionCell {
                        ice_types,
                        patients_affected,
                    }
                })
                .collect(),
        })
        .collect();

    Ok(StrategyComparison {
        maps: results,
        questions,
    })
}

/// Number of patients per derived category under each map, keyed by map label.
pub fn category_counts(comparison: &StrategyComparison) -> BTreeMap<String, Vec<u32>> {
    comparison
        .maps
        .iter()
        .map(|m| {
            let k = m.states.first().map_or(0, |s| s.counts.len());
            let mut total = vec![0u32; k];
            for s in &m.states {
                for (t, c) in total.iter_mut().zip(&s.counts) {
                    *t += c;
                }
            }
            (m.map_label.clone(), total)
        })
        .collect()
}
