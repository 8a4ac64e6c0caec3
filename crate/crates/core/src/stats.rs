//! Small descriptive-statistics helpers.

use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

/// Sample quantile with linear interpolation between order statistics (type 7).
pub fn quantile(values: &[f64], prob: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, prob)
}

pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Equal-tailed interval at the given level.
pub fn equal_tailed(values: &[f64], level: f64) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
}

/// Monte Carlo standard error of the mean of an autocorrelated chain, by batch means.
pub fn batch_means_se(chain: &[f64], batches: usize) -> f64 {
    let b = chain.len() / batches;
    let means: Vec<f64> = (0..batches).map(|k| mean(&chain[k * b..(k + 1) * b])).collect();
    (variance(&means) / batches as f64).sqrt()
}

/// Kolmogorov–Smirnov distance between a sample and a continuous cdf.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic p-value of the one-sample KS test (Kolmogorov distribution, with the
/// Stephens small-sample correction).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let t = (sn + 0.12 + 0.11 / sn) * d;
    if t < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * t * t).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Quantile of Gamma(`shape`, `rate`) by safeguarded Newton iteration on the cdf, started
/// from the Wilson–Hilferty approximation. Stable for very large shapes.
pub fn gamma_quantile(shape: f64, rate: f64, p: f64) -> f64 {
    assert!(shape > 0.0 && rate > 0.0, "gamma parameters must be positive");
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let dist = Gamma::new(shape, 1.0).expect("positive parameters");
    let lg = ln_gamma(shape + 1.0);
    // the series keeps precision near 0, where the library cdf underflows
    let cdf = |x: f64| {
        if x >= 1.0 {
            return dist.cdf(x);
        }
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..200 {
            term *= x / (shape + k as f64);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        (shape * x.ln() - x - lg).exp() * sum
    };
    let pdf = |x: f64| ((shape - 1.0) * x.ln() - x - lg + shape.ln()).exp();
    let c = 1.0 / (9.0 * shape);
    let wh = shape * (1.0 - c + crate::normal::norm_quantile(p) * c.sqrt()).powi(3);
    // small-x tail: F(x) ≈ x^a / Γ(a+1)
    let tail = (p.ln() + lg) / shape;
    let mut x = if wh > 0.0 { wh } else { tail.exp() };
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = f / pdf(x);
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(1e-300) };
        }
        if (next - x).abs() <= 1e-14 * x.abs() {
            x = next;
            break;
        }
        x = next;
    }
    x / rate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_quantile_inverts_cdf() {
        for (a, r) in [(0.05, 2.0), (0.7, 1.0), (3.2, 2.0), (40.0, 0.5), (1.6e6, 1e6), (3.3e6, 1e6)] {
            let g = Gamma::new(a, r).unwrap();
            for p in [1e-12, 1e-4, 0.05, 0.5, 0.95, 1.0 - 1e-9] {
                let x = gamma_quantile(a, r, p);
                assert!(x.is_finite() && x > 0.0, "a={a} p={p}: {x}");
                let back = if x < 1e-8 { (a * (r * x).ln() - ln_gamma(a + 1.0)).exp() } else { g.cdf(x) };
                assert!((back - p).abs() <= 1e-8 * p.min(1.0 - p).max(1e-3), "a={a} p={p}: x {x:e} cdf {back}");
            }
        }
        assert_eq!(gamma_quantile(2.0, 1.0, 0.0), 0.0);
        // exponential closed form
        assert!((gamma_quantile(1.0, 2.0, 0.75) - 4f64.ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn quantiles() {
        let v: Vec<f64> = (1..=1001).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.025), 26.0);
        assert_eq!(quantile(&v, 0.975), 976.0);
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
        assert_eq!(median(&[4.2]), 4.2);
    }

    #[test]
    fn ks_uniform() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let d = ks_statistic(&v, |x| x);
        assert!(d <= 0.0005 + 1e-12);
        assert!(ks_pvalue(d, 1000) > 0.99);
        assert!(ks_pvalue(0.1, 1000) < 1e-6);
    }
}
