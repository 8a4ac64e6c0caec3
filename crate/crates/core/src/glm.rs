//! Ordinary logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::normal::norm_cdf;

#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)` without overflow.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 35.0 {
        t
    } else if t < -35.0 {
        t.exp()
    } else {
        t.exp().ln_1p()
    }
}

/// Bernoulli log likelihood `Σ z η - log(1 + e^η)` for linear predictor `eta`.
pub fn bernoulli_loglik(z: &[f64], eta: &[f64]) -> f64 {
    z.iter().zip(eta).map(|(&zi, &e)| zi * e - log1p_exp(e)).sum()
}

#[derive(Clone, Debug)]
pub struct LogisticFit {
    pub coefficients: DVector<f64>,
    /// Inverse of the (penalized) Fisher information at the estimate.
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub fitted: DVector<f64>,
}

impl LogisticFit {
    pub fn std_errors(&self) -> DVector<f64> {
        self.covariance.diagonal().map(f64::sqrt)
    }

    /// Two-sided Wald p-value for coefficient `j`.
    pub fn wald_p(&self, j: usize) -> f64 {
        let z = self.coefficients[j] / self.covariance[(j, j)].sqrt();
        (2.0 * norm_cdf(-z.abs())).clamp(0.0, 1.0)
    }
}

/// Maximum likelihood logistic regression. `ridge > 0` adds `ridge/2 · ‖β‖²` to the
/// negative log likelihood.
///
/// Returns [`Error::FitFailed`] on non-convergence or apparent separation
/// (fitted probabilities collapsing to 0 or 1).
pub fn fit_logistic(x: &DMatrix<f64>, z: &[f64], ridge: f64) -> Result<LogisticFit> {
    let (n, p) = x.shape();
    if z.len() != n {
        return Err(Error::dim(format!("response has {} entries, design has {n} rows", z.len())));
    }
    let mut beta = DVector::<f64>::zeros(p);
    let zv = DVector::from_column_slice(z);
    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 1..=100 {
        let eta = x * &beta;
        let mu = eta.map(logistic);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        let ll = bernoulli_loglik(z, eta.as_slice()) - 0.5 * ridge * beta.norm_squared();
        // Newton step: (X'WX + λI) δ = X'(z - μ) - λβ
        let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
        let mut info = x.transpose() * xw;
        for j in 0..p {
            info[(j, j)] += ridge;
        }
        let grad = x.transpose() * (&zv - &mu) - &beta * ridge;
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::FitFailed("singular information in logistic fit".into()))?;
        let step = chol.solve(&grad);
        beta += &step;
        if beta.amax() > 50.0 {
            return Err(Error::FitFailed("logistic fit diverging (separation)".into()));
        }
        if step.amax() < 1e-10 || (ll - prev_ll).abs() < 1e-12 * ll.abs().max(1.0) && iter > 2 {
            let eta = x * &beta;
            let mu = eta.map(logistic);
            if mu.iter().all(|&m| m < 1e-10 || m > 1.0 - 1e-10) && ridge == 0.0 {
                return Err(Error::FitFailed("perfect separation".into()));
            }
            let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
            let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
            let mut info = x.transpose() * xw;
            for j in 0..p {
                info[(j, j)] += ridge;
            }
            let covariance = crate::linalg::spd_inverse(&info, "logistic information")?;
            return Ok(LogisticFit {
                loglik: bernoulli_loglik(z, eta.as_slice()),
                coefficients: beta,
                covariance,
                iterations: iter,
                fitted: mu,
            });
        }
        prev_ll = ll;
    }
    Err(Error::FitFailed("logistic IRLS did not converge in 100 iterations".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::numerical_gradient;

    fn toy() -> (DMatrix<f64>, Vec<f64>) {
        let x = DMatrix::from_fn(12, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / 4.0 - 1.4 });
        let z = vec![0., 0., 1., 0., 0., 1., 0., 1., 1., 0., 1., 1.];
        (x, z)
    }

    #[test]
    fn score_is_zero_at_mle() {
        let (x, z) = toy();
        let fit = fit_logistic(&x, &z, 0.0).unwrap();
        let g = numerical_gradient(
            |b| bernoulli_loglik(&z, (&x * b).as_slice()),
            &fit.coefficients,
            1e-6,
        );
        assert!(g.amax() < 1e-6);
        assert!(fit.std_errors().iter().all(|&s| s > 0.0));
        assert!(fit.wald_p(1) > 0.0 && fit.wald_p(1) < 1.0);
    }

    #[test]
    fn separation_detected_and_ridge_recovers() {
        let x = DMatrix::from_fn(8, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let z = vec![0., 0., 0., 0., 1., 1., 1., 1.];
        assert!(fit_logistic(&x, &z, 0.0).is_err());
        assert!(fit_logistic(&x, &z, 1.0).is_ok());
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(800.0), 1.0);
        assert_eq!(logistic(-800.0), 0.0);
        assert!((logistic(0.2) - 0.549833997312478).abs() < 1e-15);
        assert!((log1p_exp(100.0) - 100.0).abs() < 1e-12);
    }
}
