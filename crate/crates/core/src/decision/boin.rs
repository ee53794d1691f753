use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Escalation (`lambda_e`) and de-escalation (`lambda_d`) boundaries of the BOIN design.
///
/// `phi1` and `phi2` default to `0.6 phi` and `1.4 phi`, the highest rate deemed
/// sub-therapeutic and the lowest deemed overly toxic.
pub fn boin_boundaries(target_phi: f64, phi1: Option<f64>, phi2: Option<f64>) -> Result<(f64, f64)> {
    let phi = target_phi;
    let phi1 = phi1.unwrap_or(0.6 * phi);
    let phi2 = phi2.unwrap_or(1.4 * phi);
    if !(0.0 < phi1 && phi1 < phi && phi < phi2 && phi2 < 1.0) {
        return Err(Error::DomainError(format!(
            "boundaries need 0 < phi1 < phi < phi2 < 1, got {phi1}, {phi}, {phi2}"
        )));
    }
    let lambda_e = ((1.0 - phi1) / (1.0 - phi)).ln() / (phi * (1.0 - phi1) / (phi1 * (1.0 - phi))).ln();
    let lambda_d = ((1.0 - phi) / (1.0 - phi2)).ln() / (phi2 * (1.0 - phi) / (phi * (1.0 - phi2))).ln();
    Ok((lambda_e, lambda_d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToxDecision {
    Escalate,
    Stay,
    DeEscalate,
}

impl ToxDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            ToxDecision::Escalate => "escalate",
            ToxDecision::Stay => "stay",
            ToxDecision::DeEscalate => "de_escalate",
        }
    }
}

/// Compares the observed DLT rate at the current dose against the boundaries:
/// escalate at or below `lambda_e`, de-escalate at or above `lambda_d`, stay strictly between.
pub fn boin_toxicity_decision(n_tox: u32, n: u32, lambda_e: f64, lambda_d: f64) -> Result<ToxDecision> {
    if n == 0 || n_tox > n {
        return Err(Error::InvalidArgument(format!("need 0 <= n_tox <= n and n >= 1, got {n_tox}/{n}")));
    }
    let rate = n_tox as f64 / n as f64;
    Ok(if rate <= lambda_e {
        ToxDecision::Escalate
    } else if rate >= lambda_d {
        ToxDecision::DeEscalate
    } else {
        ToxDecision::Stay
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Root of `lambda ln(p1/p0) + (1 - lambda) ln((1-p1)/(1-p0)) = 0` by bisection: the
    /// observed rate at which two binomial likelihoods are equal.
    fn likelihood_ratio_root(p0: f64, p1: f64) -> f64 {
        let f = |l: f64| l * (p1 / p0).ln() + (1.0 - l) * ((1.0 - p1) / (1.0 - p0)).ln();
        let (mut lo, mut hi) = (p0.min(p1), p0.max(p1));
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
    fn anchor_at_target_point_three() {
        let (le, ld) = boin_boundaries(0.3, None, None).unwrap();
        assert!((le - 0.2364).abs() < 5e-4, "{le}");
        assert!((ld - 0.3586).abs() < 5e-4, "{ld}");
        assert_eq!(format!("{le:.3} {ld:.3}"), "0.236 0.359");
    }

    #[test]
    fn target_quarter_matches_likelihood_root() {
        let (le, ld) = boin_boundaries(0.25, None, None).unwrap();
        assert!((le - likelihood_ratio_root(0.15, 0.25)).abs() < 1e-12);
        assert!((ld - likelihood_ratio_root(0.25, 0.35)).abs() < 1e-12);
        assert!((le - 0.197).abs() < 5e-4, "{le}");
        assert!((ld - 0.298).abs() < 5e-4, "{ld}");
    }

    #[test]
    fn degenerate_limit() {
        let (le, ld) = boin_boundaries(0.3, Some(0.3 - 1e-7), Some(0.3 + 1e-7)).unwrap();
        assert!((le - 0.3).abs() < 1e-6);
        assert!((ld - 0.3).abs() < 1e-6);
        assert!(boin_boundaries(0.3, Some(0.3), None).is_err());
        assert!(boin_boundaries(0.0, None, None).is_err());
        assert!(boin_boundaries(0.8, None, None).is_err(), "phi2 = 1.12");
    }

    #[test]
    fn toxicity_decisions() {
        let (le, ld) = (0.236, 0.359);
        assert_eq!(boin_toxicity_decision(0, 3, le, ld).unwrap(), ToxDecision::Escalate);
        assert_eq!(boin_toxicity_decision(1, 3, le, ld).unwrap(), ToxDecision::Stay);
        assert_eq!(boin_toxicity_decision(2, 3, le, ld).unwrap(), ToxDecision::DeEscalate);
        assert!(boin_toxicity_decision(0, 0, le, ld).is_err());
        assert!(boin_toxicity_decision(4, 3, le, ld).is_err());
    }

    #[test]
    fn more_toxicities_never_move_toward_escalation() {
        let (le, ld) = boin_boundaries(0.3, None, None).unwrap();
        let rank = |d: ToxDecision| match d {
            ToxDecision::Escalate => 0,
            ToxDecision::Stay => 1,
            ToxDecision::DeEscalate => 2,
        };
        for n in 1..=30 {
            let mut prev = 0;
            for x in 0..=n {
                let r = rank(boin_toxicity_decision(x, n, le, ld).unwrap());
                assert!(r >= prev);
                prev = r;
            }
        }
    }
}
