//! Matérn covariance for half-integer smoothness.

use crate::error::{Error, Result};

/// Matérn covariance `σ² 2^{1-ν}/Γ(ν) (√(2ν)d/ρ)^ν K_ν(√(2ν)d/ρ)` for `ν ∈ {1/2, 3/2, 5/2}`.
pub fn matern(d: f64, sigma2: f64, nu: f64, rho: f64) -> Result<f64> {
    if !(d >= 0.0) || !(sigma2 > 0.0) || !(rho > 0.0) {
        return Err(Error::invalid(format!(
            "matern needs d >= 0, sigma2 > 0, rho > 0 (got {d}, {sigma2}, {rho})"
        )));
    }
    let t = |k: f64| (2.0 * k).sqrt() * d / rho;
    let v = if nu == 0.5 {
        (-t(0.5)).exp()
    } else if nu == 1.5 {
        let u = t(1.5);
        (1.0 + u) * (-u).exp()
    } else if nu == 2.5 {
        let u = t(2.5);
        (1.0 + u + u * u / 3.0) * (-u).exp()
    } else {
        return Err(Error::UnsupportedSmoothness(nu));
    };
    Ok(sigma2 * v)
}
