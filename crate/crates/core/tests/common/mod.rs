//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use doseopt::estimand::{Event, IceType, PatientRecord, ResponseGrade, SurgeryReason};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// `I_x(a, b)` by quadrature, without gamma functions.
///
/// The lower piece `int_0^x t^(a-1) (1-t)^(b-1) dt` is integrated in `u = t^a` and the upper
/// piece in `v = (1-t)^b`, which removes the endpoint singularities for `a, b < 1`. The
/// ratio of the lower piece to the sum of both pieces is the regularized value.
pub fn incomplete_beta_quadrature(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let lower = simpson(&|u: f64| (1.0 - u.powf(1.0 / a)).max(0.0).powf(b - 1.0), 0.0, x.powf(a), 1e-14) / a;
    let upper = simpson(&|v: f64| (1.0 - v.powf(1.0 / b)).max(0.0).powf(a - 1.0), 0.0, (1.0 - x).powf(b), 1e-14) / b;
    lower / (lower + upper)
}

/// One Dirichlet draw built from independent gammas.
pub fn dirichlet_draw<R: Rng>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let g: Vec<f64> = alpha
        .iter()
        .map(|a| Gamma::new(*a, 1.0).unwrap().sample(rng))
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|x| x / s).collect()
}

/// Nondecreasing least-squares fit from the min-max characterization
/// `f_i = max_{s <= i} min_{t >= i} mean(y_s..=y_t)`, weighted.
pub fn isotonic_minmax(y: &[f64], w: &[f64]) -> Vec<f64> {
    let n = y.len();
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|s| {
                    (i..n)
                        .map(|t| {
                            let sw: f64 = w[s..=t].iter().sum();
                            let sy: f64 = (s..=t).map(|k| w[k] * y[k]).sum();
                            sy / sw
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Record with an assessment at day 56 and an optional DLT on day 14.
pub fn simple_record(id: &str, dose: usize, efficacy: bool, toxicity: bool) -> PatientRecord {
    let mut r = PatientRecord::new(id, dose);
    if toxicity {
        r = r.with_event(Event::toxicity(14, 3, true));
    }
    let grade = if efficacy { ResponseGrade::PR } else { ResponseGrade::SD };
    r.with_event(Event::assessment(56, grade))
}

/// Record whose outcome is left missing by the default map (externally driven surgery).
pub fn missing_record(id: &str, dose: usize) -> PatientRecord {
    PatientRecord::new(id, dose)
        .with_event(Event::assessment(28, ResponseGrade::SD))
        .with_event(Event::ice(
            40,
            IceType::Surgery {
                reason: SurgeryReason::ExternalFactors,
            },
        ))
        .with_event(Event::assessment(56, ResponseGrade::CR))
}

/// Canonical category index (1..=4) of an (efficacy, toxicity) pair.
pub fn canonical_category(efficacy: bool, toxicity: bool) -> usize {
    match (efficacy, toxicity) {
        (false, true) => 1,
        (false, false) => 2,
        (true, true) => 3,
        (true, false) => 4,
    }
}
