//! Central finite-difference verification of analytic gradients (float64).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::Parameters;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Perturbation `h` in `(L(w+h) - L(w-h)) / 2h`.
    pub step: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so gradients that are zero
    /// up to rounding do not produce spurious failures.
    pub floor: f64,
    /// Models with more scalars than this are checked on a random subsample.
    pub max_params: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_params: 200_000,
            subsample: 5_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct GradCheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub failures: Vec<GradCheckFailure>,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` (same structure as `model`) against central
/// differences of `loss` around `model`.
pub fn grad_check<P, L>(model: &P, analytic: &P, loss: L, opts: &GradCheckOptions) -> GradCheckReport
where
    P: Parameters<f64> + Clone,
    L: Fn(&P) -> f64,
{
    let layout: Vec<(String, usize)> = model.named().iter().map(|(n, m)| (n.clone(), m.len())).collect();
    let total: usize = layout.iter().map(|(_, n)| n).sum();

    let mut flat: Vec<(usize, usize)> = Vec::with_capacity(total);
    for (ti, (_, n)) in layout.iter().enumerate() {
        flat.extend((0..*n).map(|k| (ti, k)));
    }
    let chosen: Vec<(usize, usize)> = if total > opts.max_params {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, total, opts.subsample.min(total)).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| flat[i]).collect()
    } else {
        flat
    };

    let analytic_vals: Vec<Vec<f64>> = analytic.named().iter().map(|(_, m)| m.as_slice().to_vec()).collect();

    let mut probe = model.clone();
    let mut max_rel_err = 0.0f64;
    let mut failures = Vec::new();
    for &(ti, k) in &chosen {
        let original = probe.named()[ti].1.as_slice()[k];
        set(&mut probe, ti, k, original + opts.step);
        let plus = loss(&probe);
        set(&mut probe, ti, k, original - opts.step);
        let minus = loss(&probe);
        set(&mut probe, ti, k, original);

        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic_vals[ti][k];
        let rel = relative_error(a, numeric, opts.floor);
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        max_rel_err = max_rel_err.max(rel);
        if (rel.is_nan() || rel >= opts.tol) && opts.tol.is_finite() {
            failures.push(GradCheckFailure {
                param: layout[ti].0.clone(),
                index: k,
                analytic: a,
                numeric,
                rel_err: rel,
            });
        }
    }
    GradCheckReport {
        max_rel_err,
        checked: chosen.len(),
        passed: failures.is_empty(),
        failures,
    }
}

fn set<P: Parameters<f64>>(p: &mut P, tensor: usize, index: usize, v: f64) {
    let mut named = p.named_mut();
    named[tensor].1.as_mut_slice()[index] = v;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{DenseParams, Matrix};

    fn quad_loss(p: &DenseParams<f64>) -> f64 {
        // L = Σ w_i^2 + 3 b
        p.w.sum_squares() + 3.0 * p.b.get(0, 0)
    }

    fn model() -> DenseParams<f64> {
        DenseParams {
            w: Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]),
            b: Matrix::from_vec(1, 1, vec![0.1]),
        }
    }

    fn exact_grad(p: &DenseParams<f64>) -> DenseParams<f64> {
        let mut g = p.clone();
        g.w.scale(2.0);
        g.b.fill(3.0);
        g
    }

    #[test]
    fn exact_gradient_passes() {
        let m = model();
        let r = grad_check(&m, &exact_grad(&m), quad_loss, &GradCheckOptions::default());
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 4);
        assert!(r.max_rel_err < 1e-8);
    }

    #[test]
    fn corrupted_entry_is_reported() {
        let m = model();
        let mut g = exact_grad(&m);
        g.w.set(0, 1, 0.0);
        let r = grad_check(&m, &g, quad_loss, &GradCheckOptions::default());
        assert!(!r.passed);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].param, "w");
        assert_eq!(r.failures[0].index, 1);
    }

    #[test]
    fn infinite_tolerance_always_passes() {
        let m = model();
        let mut g = exact_grad(&m);
        g.w.fill(1e9);
        let opts = GradCheckOptions {
            tol: f64::INFINITY,
            ..Default::default()
        };
        assert!(grad_check(&m, &g, quad_loss, &opts).passed);
    }

    #[test]
    fn subsamples_large_models() {
        let m = model();
        let opts = GradCheckOptions {
            max_params: 2,
            subsample: 3,
            ..Default::default()
        };
        let r = grad_check(&m, &exact_grad(&m), quad_loss, &opts);
        assert_eq!(r.checked, 3);
    }
}
