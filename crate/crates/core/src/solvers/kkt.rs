use nalgebra::DVector;

use crate::dataset::Dataset;
use crate::solvers::{LassoFit, SUPPORT_THRESHOLD};

/// Largest violation of the lasso stationarity conditions.
///
/// Active coordinates contribute `|X_j'(Y - X beta) - lambda s_j|`, inactive
/// ones contribute the amount by which `|X_j'(Y - X beta)|` exceeds lambda.
pub fn kkt_residual(data: &Dataset, fit: &LassoFit) -> f64 {
    let resid = data.y() - data.x() * &fit.beta;
    let corr = data.x().tr_mul(&resid);
    let mut worst = 0.0f64;
    let mut active = fit.support.iter().zip(&fit.signs).peekable();
    for j in 0..corr.len() {
        match active.peek() {
            Some(&(&k, &s)) if k == j => {
                worst = worst.max((corr[j] - fit.lambda * s).abs());
                active.next();
            }
            _ => worst = worst.max(corr[j].abs() - fit.lambda),
        }
    }
    worst
}

/// Same as [`kkt_residual`], with the support read off `beta` directly and
/// the residual `Y - X beta` supplied by the caller.
pub(crate) fn kkt_residual_raw(
    data: &Dataset,
    beta: &DVector<f64>,
    resid: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let corr = data.x().tr_mul(resid);
    corr.iter()
        .zip(beta.iter())
        .map(|(&c, &b)| {
            if b.abs() > SUPPORT_THRESHOLD {
                (c - lambda * b.signum()).abs()
            } else {
                c.abs() - lambda
            }
        })
        .fold(0.0, f64::max)
}

/// True when every stationarity condition holds to within `tol`.
pub fn kkt_check(data: &Dataset, fit: &LassoFit, tol: f64) -> bool {
    fit.beta.len() == data.p() && kkt_residual(data, fit) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{lasso_fit, LassoOptions};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(15, 6, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(15, |_, _| rng.random_range(-2.0..2.0));
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn zero_is_stationary_above_critical_penalty() {
        let d = data(1);
        let lmax = d.x().tr_mul(d.y()).amax();
        let fit = LassoFit::from_beta(&d, DVector::zeros(6), lmax);
        assert!(kkt_check(&d, &fit, 1e-12));
    }

    #[test]
    fn converged_fit_passes() {
        for seed in 0..10 {
            let d = data(seed);
            let fit = lasso_fit(&d, 0.5, &LassoOptions::default()).unwrap();
            assert!(kkt_check(&d, &fit, 1e-4));
        }
    }

    #[test]
    fn perturbed_active_coefficient_fails() {
        let d = data(3);
        let fit = lasso_fit(&d, 0.3, &LassoOptions::default()).unwrap();
        let j = *fit.support.first().expect("nonempty support");
        let mut beta = fit.beta.clone();
        beta[j] += 1.0;
        let bumped = LassoFit::from_beta(&d, beta, fit.lambda);
        assert!(!kkt_check(&d, &bumped, 1e-4));
    }
}
