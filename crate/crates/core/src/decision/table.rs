//! Pre-tabulated decisions for every outcome-count vector at a single dose.
//!
//! Column order, fixed for both renderings:
//! `n, n_1..n_K, n_tox, n_eff, tox_decision, prob_toxic, toxic, prob_futile, futile,
//! admissible, utility, qbb_mean`.
//! Probabilities and utilities are printed with exactly four decimals. `qbb_mean` is the
//! quasi-beta-binomial posterior mean on the 0..1 scale. Rows are ordered by `n` and then
//! by count vector in descending lexicographic order.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{boin_toxicity_decision, ToxDecision};
use crate::error::{Error, Result};
use crate::model::{DesignConfig, DoseState, UtilitySpec};
use crate::posterior::{qbb_posterior, summarize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTableRow {
    pub n: u32,
    pub counts: Vec<u32>,
    pub n_tox: u32,
    pub n_eff: u32,
    /// `None` for the prior-only row.
    pub tox_decision: Option<ToxDecision>,
    pub prob_toxic: f64,
    pub toxic: bool,
    pub prob_futile: f64,
    pub futile: bool,
    pub utility: f64,
    pub qbb_mean: f64,
}

impl DecisionTableRow {
    pub fn admissible(&self) -> bool {
        self.n > 0 && !self.toxic && !self.futile
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTable {
    pub k: usize,
    pub max_per_dose: u32,
    pub rows: Vec<DecisionTableRow>,
}

fn compositions(n: u32, k: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if k == 1 {
        prefix.push(n);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in (0..=n).rev() {
        prefix.push(first);
        compositions(n - first, k - 1, prefix, out);
        prefix.pop();
    }
}

/// Tabulates the toxicity decision, admissibility flags and utilities for every count
/// vector with at most `max_per_dose` patients.
pub fn decision_table(config: &DesignConfig, spec: &UtilitySpec, max_per_dose: u32) -> Result<DecisionTable> {
    if max_per_dose > config.per_dose_cap {
        return Err(Error::InvalidArgument(format!(
            "max_per_dose {max_per_dose} exceeds the per-dose cap {}",
            config.per_dose_cap
        )));
    }
    config.check(spec, 1)?;
    let k = spec.k();
    let mut rows = Vec::new();
    for n in 0..=max_per_dose {
        let mut all = Vec::new();
        compositions(n, k, &mut Vec::with_capacity(k), &mut all);
        for counts in all {
            let state = DoseState::with_counts(1, counts.clone());
            let summary = summarize(&state, spec, config)?;
            let qbb = qbb_posterior(&state, spec, &config.prior_alpha)?;
            let n_tox = state.toxicity_count(spec);
            let tox_decision = if n == 0 {
                None
            } else {
                Some(boin_toxicity_decision(n_tox, n, config.lambda_e, config.lambda_d)?)
            };
            rows.push(DecisionTableRow {
                n,
                n_tox,
                n_eff: state.efficacy_count(spec),
                tox_decision,
                prob_toxic: summary.prob_toxic,
                toxic: n > 0 && summary.prob_toxic > config.delta_t,
                prob_futile: summary.prob_futile,
                futile: n > 0 && summary.prob_futile > config.delta_e,
                utility: summary.mean_utility,
                qbb_mean: qbb.mean(),
                counts,
            });
        }
    }
    Ok(DecisionTable { k, max_per_dose, rows })
}

fn dec4(x: f64) -> String {
    let s = format!("{x:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

impl DecisionTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["n".to_string()];
        h.extend((1..=self.k).map(|i| format!("n_{i}")));
        h.extend(
            [
                "n_tox",
                "n_eff",
                "tox_decision",
                "prob_toxic",
                "toxic",
                "prob_futile",
                "futile",
                "admissible",
                "utility",
                "qbb_mean",
            ]
            .map(String::from),
        );
        h
    }

    fn cells(row: &DecisionTableRow) -> Vec<String> {
        let mut c = vec![row.n.to_string()];
        c.extend(row.counts.iter().map(u32::to_string));
        c.push(row.n_tox.to_string());
        c.push(row.n_eff.to_string());
        c.push(row.tox_decision.map_or("none", ToxDecision::as_str).to_string());
        c.push(dec4(row.prob_toxic));
        c.push(row.toxic.to_string());
        c.push(dec4(row.prob_futile));
        c.push(row.futile.to_string());
        c.push(row.admissible().to_string());
        c.push(dec4(row.utility));
        c.push(dec4(row.qbb_mean));
        c
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header().join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::cells(row).join(","));
            out.push('\n');
        }
        out
    }

    /// JSON array of row objects with the documented key order and four-decimal numbers.
    pub fn to_json(&self) -> String {
        let header = self.header();
        let mut out = String::from("[\n");
        for (i, row) in self.rows.iter().enumerate() {
            let cells = Self::cells(row);
            out.push_str("  {");
            for (j, (key, value)) in header.iter().zip(&cells).enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                let quoted = key == "tox_decision";
                let _ = if quoted {
                    write!(out, "\"{key}\": \"{value}\"")
                } else {
                    write!(out, "\"{key}\": {value}")
                };
            }
            out.push('}');
            if i + 1 < self.rows.len() {
                out.push(',');
            }
            out.push('\n');
        }
        out.push_str("]\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: u64, k: u64) -> u64 {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn row_counts_follow_stars_and_bars() {
        let cfg = DesignConfig::case_study();
        let spec = UtilitySpec::example();
        let t = decision_table(&cfg, &spec, 3).unwrap();
        assert_eq!(t.rows.len(), 35);
        for m in 0..=6u32 {
            let want: u64 = (0..=m as u64).map(|n| binom(n + 3, 3)).sum();
            assert_eq!(decision_table(&cfg, &spec, m).unwrap().rows.len() as u64, want);
        }
    }

    #[test]
    fn prior_row_only_at_zero() {
        let t = decision_table(&DesignConfig::case_study(), &UtilitySpec::example(), 0).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].tox_decision, None);
        assert!(!t.rows[0].admissible());
        assert!((t.rows[0].utility - 42.5).abs() < 1e-12);
    }

    #[test]
    fn no_event_row_escalates() {
        let cfg = DesignConfig::case_study();
        let spec = UtilitySpec::example();
        let t = decision_table(&cfg, &spec, 3).unwrap();
        let row = t.rows.iter().find(|r| r.counts == vec![0, 3, 0, 0]).unwrap();
        assert_eq!(row.tox_decision, Some(ToxDecision::Escalate));
        let direct = summarize(&DoseState::with_counts(1, vec![0, 3, 0, 0]), &spec, &cfg).unwrap();
        assert_eq!(row.utility, direct.mean_utility);
        assert!((row.qbb_mean * 100.0 - row.utility).abs() < 1e-10);
        assert!(t.to_csv().contains("\n3,0,3,0,0,0,0,escalate,0.0933,false,0.8295,false,true,"));
    }

    #[test]
    fn renderings_are_stable_and_parse() {
        let cfg = DesignConfig::case_study();
        let spec = UtilitySpec::example();
        let a = decision_table(&cfg, &spec, 4).unwrap();
        let b = decision_table(&cfg, &spec, 4).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
        let parsed: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(parsed.len(), a.rows.len());
        let keys: Vec<&String> = parsed[0].keys().collect();
        assert_eq!(keys.len(), a.header().len());
        let csv_text = a.to_csv();
        let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
        assert_eq!(rdr.records().count(), a.rows.len());
    }

    #[test]
    fn cap_enforced() {
        let cfg = DesignConfig::case_study();
        assert!(decision_table(&cfg, &UtilitySpec::example(), 13).is_err());
    }
}
