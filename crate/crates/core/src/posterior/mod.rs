//! Exact Bayesian computations for a single dose.
//!
//! Outcome categories follow a Dirichlet-multinomial model, so the posterior of the
//! category probabilities is again Dirichlet. Any sum of categories (the toxicity or
//! efficacy marginal) then has a Beta posterior, which gives the admissibility tail
//! probabilities in closed form through the regularized incomplete beta function.

mod betainc;

use serde::{Deserialize, Serialize};

pub use betainc::{ln_beta, regularized_incomplete_beta};

use crate::error::{Error, Result};
use crate::model::{CategoryDef, DesignConfig, DoseState, FutilityRule, UtilitySpec};

/// Haldane prior stand-in used by [`haldane_sensitivity`] callers that have no preference.
pub const DEFAULT_HALDANE_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPosterior {
    pub alpha_post: Vec<f64>,
}

impl DirichletPosterior {
    pub fn k(&self) -> usize {
        self.alpha_post.len()
    }

    pub fn total(&self) -> f64 {
        self.alpha_post.iter().sum()
    }

    /// Posterior mean of each category probability.
    pub fn mean(&self) -> Vec<f64> {
        let total = self.total();
        self.alpha_post.iter().map(|a| a / total).collect()
    }

    /// Parameters of the Beta marginal of the summed probability of the selected categories.
    pub fn marginal(&self, spec: &UtilitySpec, select: impl Fn(&CategoryDef) -> bool) -> Result<(f64, f64)> {
        check_dim(spec.k(), self.k())?;
        let hit: f64 = self
            .alpha_post
            .iter()
            .zip(spec.categories())
            .filter(|(_, c)| select(c))
            .map(|(a, _)| a)
            .sum();
        Ok((hit, self.total() - hit))
    }

    pub fn mean_tox(&self, spec: &UtilitySpec) -> Result<f64> {
        let (a, b) = self.marginal(spec, |c| c.toxicity_flag)?;
        Ok(a / (a + b))
    }

    pub fn mean_eff(&self, spec: &UtilitySpec) -> Result<f64> {
        let (a, b) = self.marginal(spec, |c| c.efficacy_flag)?;
        Ok(a / (a + b))
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn check_prior(prior: &[f64]) -> Result<()> {
    if prior.is_empty() || prior.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::NonPositivePrior);
    }
    Ok(())
}

/// Conjugate update: `alpha_post[k] = a_k + n_jk`.
pub fn dirichlet_posterior(state: &DoseState, prior: &[f64]) -> Result<DirichletPosterior> {
    check_prior(prior)?;
    check_dim(prior.len(), state.counts.len())?;
    Ok(DirichletPosterior {
        alpha_post: prior.iter().zip(&state.counts).map(|(a, n)| a + *n as f64).collect(),
    })
}

/// Posterior mean utility `U_j = sum_k psi_k E[pi_jk | D_j]`.
///
/// The utility is linear in the category probabilities, so the plug-in of the posterior
/// mean is the exact posterior expectation.
pub fn mean_utility(post: &DirichletPosterior, spec: &UtilitySpec) -> Result<f64> {
    check_dim(spec.k(), post.k())?;
    let weighted: f64 = post
        .alpha_post
        .iter()
        .zip(spec.categories())
        .map(|(a, c)| a * c.psi)
        .sum();
    Ok(weighted / post.total())
}

/// Marginal trade-off utility `pi_e - w * pi_t`.
pub fn marginal_utility(mean_eff: f64, mean_tox: f64, w: f64) -> f64 {
    mean_eff - w * mean_tox
}

/// Category scores under which the mean utility ranks doses exactly as
/// [`marginal_utility`] with weight `w` does.
///
/// Per-category values of `pi_e - w * pi_t` are `(-w, 0, 1 - w, 1)` for the canonical
/// layout; the returned scores are their affine rescaling onto `[0, 100]`:
/// `(0, 100 w / (1 + w), 100 / (1 + w), 100)`.
pub fn tradeoff_psi(w: f64) -> Result<UtilitySpec> {
    if !(w >= 0.0 && w.is_finite()) {
        return Err(Error::DomainError(format!("weight must be a finite non-negative number, got {w}")));
    }
    Ok(UtilitySpec::canonical([0.0, 100.0 * w / (1.0 + w), 100.0 / (1.0 + w), 100.0]))
}

/// Upper tail of a Beta(a, b) variable, tolerating a degenerate zero shape.
fn beta_upper_tail(threshold: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::DomainError(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    if a <= 0.0 {
        // point mass at 0
        return Ok(0.0);
    }
    if b <= 0.0 {
        // point mass at 1
        return Ok(if threshold < 1.0 { 1.0 } else { 0.0 });
    }
    Ok(1.0 - regularized_incomplete_beta(threshold, a, b)?)
}

/// `Pr(pi_t > phi_t | D)`, the toxic-dose criterion.
pub fn prob_tox_exceeds(post: &DirichletPosterior, spec: &UtilitySpec, phi_t: f64) -> Result<f64> {
    let (a, b) = post.marginal(spec, |c| c.toxicity_flag)?;
    beta_upper_tail(phi_t, a, b)
}

/// `Pr(pi_e < phi_e | D)`, the futile-dose criterion.
pub fn prob_eff_below(post: &DirichletPosterior, spec: &UtilitySpec, phi_e: f64) -> Result<f64> {
    let (a, b) = post.marginal(spec, |c| c.efficacy_flag)?;
    Ok(1.0 - beta_upper_tail(phi_e, a, b)?)
}

/// `Pr(pi_e > phi_e | D)`.
pub fn prob_eff_exceeds(post: &DirichletPosterior, spec: &UtilitySpec, phi_e: f64) -> Result<f64> {
    let (a, b) = post.marginal(spec, |c| c.efficacy_flag)?;
    beta_upper_tail(phi_e, a, b)
}

/// Quasi-beta-binomial posterior of the standardized utility.
///
/// Each patient contributes `psi_k / 100` "pseudo-events", turning the utility into a
/// quasi-binomial proportion with a Beta posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QbbPosterior {
    pub alpha: f64,
    pub beta: f64,
    pub pseudo_events: f64,
}

impl QbbPosterior {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    /// Posterior mean on the utility scale (`x 100`).
    pub fn mean_utility(&self) -> f64 {
        100.0 * self.mean()
    }
}

pub fn qbb_posterior(state: &DoseState, spec: &UtilitySpec, prior: &[f64]) -> Result<QbbPosterior> {
    spec.check_anchored()?;
    check_prior(prior)?;
    check_dim(spec.k(), prior.len())?;
    check_dim(spec.k(), state.counts.len())?;
    let psi = spec.psi();
    let pseudo_events: f64 = state.counts.iter().zip(&psi).map(|(n, p)| *n as f64 * p / 100.0).sum();
    let alpha0: f64 = prior.iter().zip(&psi).map(|(a, p)| a * p / 100.0).sum();
    let beta0 = prior.iter().sum::<f64>() - alpha0;
    let n = state.n() as f64;
    Ok(QbbPosterior {
        alpha: alpha0 + pseudo_events,
        beta: beta0 + n - pseudo_events,
        pseudo_events,
    })
}

/// Everything the decision rules need to know about one dose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub dose_index: usize,
    pub mean_utility: f64,
    pub mean_tox: f64,
    pub mean_eff: f64,
    /// `Pr(pi_t > phi_t | D)`
    pub prob_toxic: f64,
    /// Probability entering the futility gate; `Pr(pi_e < phi_e | D)` under the default rule.
    pub prob_futile: f64,
    pub n: u32,
}

/// Summarizes one dose under the design prior.
pub fn summarize(state: &DoseState, spec: &UtilitySpec, config: &DesignConfig) -> Result<PosteriorSummary> {
    summarize_with_prior(state, spec, config, &config.prior_alpha)
}

pub fn summarize_with_prior(
    state: &DoseState,
    spec: &UtilitySpec,
    config: &DesignConfig,
    prior: &[f64],
) -> Result<PosteriorSummary> {
    let post = dirichlet_posterior(state, prior)?;
    let prob_futile = match config.futility_rule {
        FutilityRule::EfficacyBelowLimit => prob_eff_below(&post, spec, config.phi_e)?,
        FutilityRule::EfficacyAboveLimit => prob_eff_exceeds(&post, spec, config.phi_e)?,
    };
    Ok(PosteriorSummary {
        dose_index: state.dose_index,
        mean_utility: mean_utility(&post, spec)?,
        mean_tox: post.mean_tox(spec)?,
        mean_eff: post.mean_eff(spec)?,
        prob_toxic: prob_tox_exceeds(&post, spec, config.phi_t)?,
        prob_futile,
        n: state.n(),
    })
}

/// Summary under the near-improper prior `(eps, ..., eps)`.
pub fn haldane_sensitivity(
    state: &DoseState,
    spec: &UtilitySpec,
    config: &DesignConfig,
    epsilon: f64,
) -> Result<PosteriorSummary> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::NonPositivePrior);
    }
    if state.n() == 0 {
        return Err(Error::EmptyDose(state.dose_index));
    }
    summarize_with_prior(state, spec, config, &vec![epsilon; spec.k()])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior() -> Vec<f64> {
        vec![0.25; 4]
    }

    #[test]
    fn dirichlet_update() {
        let s = DoseState::with_counts(1, vec![1, 2, 0, 3]);
        assert_eq!(dirichlet_posterior(&s, &prior()).unwrap().alpha_post, vec![1.25, 2.25, 0.25, 3.25]);
        let s = DoseState::empty(1, 4);
        assert_eq!(dirichlet_posterior(&s, &prior()).unwrap().alpha_post, prior());
        let s = DoseState::with_counts(1, vec![10, 0, 0, 0]);
        assert_eq!(dirichlet_posterior(&s, &[1.0; 4]).unwrap().alpha_post, vec![11.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn dirichlet_rejects_bad_prior() {
        let s = DoseState::empty(1, 4);
        assert_eq!(dirichlet_posterior(&s, &[0.25, 0.0, 0.25, 0.25]), Err(Error::NonPositivePrior));
        assert!(matches!(
            dirichlet_posterior(&s, &[0.5; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_utility_examples() {
        let spec = UtilitySpec::example();
        let post = DirichletPosterior {
            alpha_post: vec![1.25, 2.25, 0.25, 3.25],
        };
        let u = mean_utility(&post, &spec).unwrap();
        assert!((u - 362.5 / 7.0).abs() < 1e-12);
        let post = DirichletPosterior { alpha_post: prior() };
        assert!((mean_utility(&post, &spec).unwrap() - 42.5).abs() < 1e-12);

        let flat = UtilitySpec::canonical([37.0; 4]);
        let post = DirichletPosterior {
            alpha_post: vec![0.3, 7.0, 2.0, 11.0],
        };
        assert!((mean_utility(&post, &flat).unwrap() - 37.0).abs() < 1e-12);

        let short = DirichletPosterior { alpha_post: vec![1.0; 3] };
        assert!(mean_utility(&short, &spec).is_err());
    }

    #[test]
    fn marginal_utility_examples() {
        assert!((marginal_utility(0.7, 0.4, 0.6) - 0.46).abs() < 1e-15);
        assert_eq!(marginal_utility(0.55, 0.9, 0.0), 0.55);
        assert_eq!(marginal_utility(0.0, 0.0, 3.0), 0.0);
    }

    #[test]
    fn tradeoff_scores() {
        let spec = tradeoff_psi(0.6).unwrap();
        let psi = spec.psi();
        for (got, want) in psi.iter().zip([0.0, 37.5, 62.5, 100.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        // pi = (0.1, 0.2, 0.3, 0.4): U = 66.25 = rescaled U^M
        let u: f64 = psi.iter().zip([0.1, 0.2, 0.3, 0.4]).map(|(p, q)| p * q).sum();
        assert!((u - 66.25).abs() < 1e-12);
        let um = marginal_utility(0.3 + 0.4, 0.1 + 0.3, 0.6);
        assert!(((um + 0.6) / 1.6 * 100.0 - 66.25).abs() < 1e-12);

        assert_eq!(tradeoff_psi(0.0).unwrap().psi(), vec![0.0, 0.0, 100.0, 100.0]);
        let big = tradeoff_psi(1e6).unwrap().psi();
        for (got, want) in big.iter().zip([0.0, 100.0, 0.0, 100.0]) {
            assert!((got - want).abs() < 1e-3);
        }
        assert!(tradeoff_psi(-0.1).is_err());
    }

    #[test]
    fn tradeoff_identity_on_simplex_points() {
        // sum psi_k pi_k == 100 (U^M + w) / (1 + w) at any simplex point
        let mut s = 12345u64;
        let mut unif = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64).max(1e-9)
        };
        for _ in 0..500 {
            let w = 3.0 * unif();
            let raw: Vec<f64> = (0..4).map(|_| -unif().ln()).collect();
            let tot: f64 = raw.iter().sum();
            let pi: Vec<f64> = raw.iter().map(|r| r / tot).collect();
            let psi = tradeoff_psi(w).unwrap().psi();
            let u: f64 = psi.iter().zip(&pi).map(|(a, b)| a * b).sum();
            let um = marginal_utility(pi[2] + pi[3], pi[0] + pi[2], w);
            assert!((u - 100.0 * (um + w) / (1.0 + w)).abs() < 1e-9);
        }
    }

    #[test]
    fn tail_probability_endpoints() {
        let spec = UtilitySpec::example();
        let post = dirichlet_posterior(&DoseState::with_counts(1, vec![0, 3, 0, 0]), &prior()).unwrap();
        assert_eq!(prob_tox_exceeds(&post, &spec, 1.0).unwrap(), 0.0);
        assert_eq!(prob_tox_exceeds(&post, &spec, 0.0).unwrap(), 1.0);
        assert_eq!(prob_eff_below(&post, &spec, 0.0).unwrap(), 0.0);
        assert_eq!(prob_eff_below(&post, &spec, 1.0).unwrap(), 1.0);
        assert!(prob_tox_exceeds(&post, &spec, 1.5).is_err());
    }

    #[test]
    fn tail_probability_symmetric_case() {
        // toxicity marginal Beta(2, 2)
        let spec = UtilitySpec::example();
        let post = DirichletPosterior {
            alpha_post: vec![1.0, 1.5, 1.0, 0.5],
        };
        let p = prob_tox_exceeds(&post, &spec, 0.5).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn tail_probabilities_three_patients() {
        // Reference values from an independent quadrature (see tests/oracles.rs).
        let spec = UtilitySpec::example();
        let post = dirichlet_posterior(&DoseState::with_counts(1, vec![0, 3, 0, 0]), &prior()).unwrap();
        let tox = prob_tox_exceeds(&post, &spec, 0.35).unwrap();
        let fut = prob_eff_below(&post, &spec, 0.25).unwrap();
        assert!((tox - 0.093).abs() < 5e-4, "{tox}");
        assert!((fut - 0.8295).abs() < 5e-4, "{fut}");
    }

    #[test]
    fn qbb_matches_example() {
        let spec = UtilitySpec::example();
        let q = qbb_posterior(&DoseState::with_counts(1, vec![1, 2, 0, 3]), &spec, &prior()).unwrap();
        assert!((q.pseudo_events - 3.2).abs() < 1e-12);
        assert!((q.alpha - 3.625).abs() < 1e-12);
        assert!((q.beta - 3.375).abs() < 1e-12);
        assert!((q.mean_utility() - 362.5 / 7.0).abs() < 1e-10);

        let q = qbb_posterior(&DoseState::empty(1, 4), &spec, &prior()).unwrap();
        assert!((q.mean_utility() - 42.5).abs() < 1e-12);

        let q = qbb_posterior(&DoseState::with_counts(1, vec![0, 0, 0, 10_000]), &spec, &prior()).unwrap();
        assert!((q.mean_utility() - 100.0).abs() < 0.1);
    }

    #[test]
    fn qbb_requires_anchor() {
        let spec = UtilitySpec::canonical([0.0, 10.0, 60.0, 90.0]);
        assert!(matches!(
            qbb_posterior(&DoseState::empty(1, 4), &spec, &prior()),
            Err(Error::UnanchoredUtility(_))
        ));
    }

    #[test]
    fn haldane_limits() {
        let spec = UtilitySpec::example();
        let cfg = DesignConfig::case_study();
        let s = haldane_sensitivity(&DoseState::with_counts(1, vec![0, 0, 0, 3]), &spec, &cfg, 1e-6).unwrap();
        assert!((s.mean_utility - 100.0).abs() < 1e-3);
        let s = haldane_sensitivity(&DoseState::with_counts(1, vec![1, 1, 1, 1]), &spec, &cfg, 1e-6).unwrap();
        assert!((s.mean_utility - 42.5).abs() < 1e-3);
        assert_eq!(
            haldane_sensitivity(&DoseState::empty(4, 4), &spec, &cfg, 1e-6),
            Err(Error::EmptyDose(4))
        );
    }

    #[test]
    fn futility_rule_efficacy_above_limit_flips_direction() {
        let spec = UtilitySpec::example();
        let mut cfg = DesignConfig::case_study();
        let s = DoseState::with_counts(1, vec![0, 0, 0, 6]);
        let below = summarize(&s, &spec, &cfg).unwrap().prob_futile;
        cfg.futility_rule = FutilityRule::EfficacyAboveLimit;
        let printed = summarize(&s, &spec, &cfg).unwrap().prob_futile;
        assert!((below + printed - 1.0).abs() < 1e-12);
        assert!(printed > 0.99, "responders look 'futile' under the printed rule");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn counts() -> impl Strategy<Value = Vec<u32>> {
            proptest::collection::vec(0u32..25, 4)
        }

        proptest! {
            #[test]
            fn qbb_mean_equals_mean_utility(c in counts(), a in proptest::collection::vec(0.05f64..3.0, 4)) {
                let spec = UtilitySpec::example();
                let s = DoseState::with_counts(1, c);
                let u = mean_utility(&dirichlet_posterior(&s, &a).unwrap(), &spec).unwrap();
                let q = qbb_posterior(&s, &spec, &a).unwrap();
                prop_assert!((q.mean_utility() - u).abs() <= 1e-10);
                prop_assert!((q.alpha + q.beta - (a.iter().sum::<f64>() + s.n() as f64)).abs() < 1e-10);
            }

            #[test]
            fn utility_monotone_in_best_and_worst(c in counts()) {
                let spec = UtilitySpec::example();
                let p = prior();
                let u = |counts: &Vec<u32>| mean_utility(
                    &dirichlet_posterior(&DoseState::with_counts(1, counts.clone()), &p).unwrap(), &spec).unwrap();
                let base = u(&c);
                let mut best = c.clone();
                best[3] += 1;
                let mut worst = c.clone();
                worst[0] += 1;
                prop_assert!(u(&best) >= base - 1e-12);
                prop_assert!(u(&worst) <= base + 1e-12);
            }

            #[test]
            fn tails_monotone_in_threshold(c in counts(), x in 0.0f64..1.0, dx in 0.0f64..0.2) {
                let spec = UtilitySpec::example();
                let post = dirichlet_posterior(&DoseState::with_counts(1, c), &prior()).unwrap();
                let hi = (x + dx).min(1.0);
                prop_assert!(prob_tox_exceeds(&post, &spec, hi).unwrap() <= prob_tox_exceeds(&post, &spec, x).unwrap() + 1e-13);
                prop_assert!(prob_eff_below(&post, &spec, hi).unwrap() + 1e-13 >= prob_eff_below(&post, &spec, x).unwrap());
            }

            #[test]
            fn summaries_are_probabilities(c in counts()) {
                let spec = UtilitySpec::example();
                let s = summarize(&DoseState::with_counts(2, c), &spec, &DesignConfig::case_study()).unwrap();
                for p in [s.prob_toxic, s.prob_futile, s.mean_tox, s.mean_eff] {
                    prop_assert!((0.0..=1.0).contains(&p));
                }
                prop_assert!((0.0..=100.0).contains(&s.mean_utility));
            }
        }
    }
}
