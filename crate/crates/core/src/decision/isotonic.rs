use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Toxicity data at a dose with at least one evaluable patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestedDose {
    pub dose_index: usize,
    pub n_tox: u32,
    pub n: u32,
}

impl TestedDose {
    pub fn new(dose_index: usize, n_tox: u32, n: u32) -> Self {
        TestedDose { dose_index, n_tox, n }
    }

    pub fn rate(&self) -> f64 {
        self.n_tox as f64 / self.n as f64
    }
}

/// Weighted least-squares nondecreasing fit by pool-adjacent-violators.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // (weighted mean, total weight, number of points)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let w = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / w, w, c1 + c2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Isotonic (nondecreasing in dose) estimates of the toxicity rates, weighted by sample size.
pub fn isotonic_tox_estimates(tested: &[TestedDose]) -> Result<Vec<f64>> {
    if let Some(d) = tested.iter().find(|d| d.n == 0 || d.n_tox > d.n) {
        return Err(Error::InvalidArgument(format!(
            "dose {} has {}/{} toxicities",
            d.dose_index, d.n_tox, d.n
        )));
    }
    let rates: Vec<f64> = tested.iter().map(TestedDose::rate).collect();
    let weights: Vec<f64> = tested.iter().map(|d| d.n as f64).collect();
    Ok(pava(&rates, &weights))
}

const TIE_TOL: f64 = 1e-12;

/// Dose whose isotonic toxicity estimate is closest to `phi_t`.
///
/// Among equally close doses the lowest is taken if any of them lies above `phi_t`,
/// the highest otherwise.
pub fn estimate_mtd(tested: &[TestedDose], phi_t: f64) -> Result<usize> {
    if tested.is_empty() {
        return Err(Error::NoTestedDoses);
    }
    let est = isotonic_tox_estimates(tested)?;
    let best = est.iter().map(|e| (e - phi_t).abs()).fold(f64::INFINITY, f64::min);
    let tied: Vec<usize> = (0..est.len())
        .filter(|&i| (est[i] - phi_t).abs() <= best + TIE_TOL)
        .collect();
    let pick = if tied.iter().any(|&i| est[i] > phi_t + TIE_TOL) {
        tied[0]
    } else {
        tied[tied.len() - 1]
    };
    Ok(tested[pick].dose_index)
}
