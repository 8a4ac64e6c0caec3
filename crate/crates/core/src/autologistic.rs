//! Centered autologistic model: exact pmf for small graphs, Gibbs sampling,
//! maximum pseudolikelihood and interval estimation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{beta_names, FitResult, Interval, Method};
use crate::glm::{fit_logistic, log1p_exp, logistic};
use crate::graph::ArealGraph;
use crate::linalg::spd_inverse;
use crate::normal::norm_quantile;
use crate::optim::{bfgs_minimize, hessian_from_gradient, BfgsOptions};
use crate::stats::equal_tailed;

/// Largest graph for which the normalizing constant is enumerated.
pub const EXACT_LIMIT: usize = 20;

/// Burn-in sweeps before the first retained bootstrap sample.
pub const BOOT_BURN_IN: usize = 500;
/// Sweeps between retained bootstrap samples.
pub const BOOT_THIN: usize = 10;

const HESSIAN_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoParams {
    pub beta: DVector<f64>,
    pub kappa: f64,
}

impl AutoParams {
    pub fn new(beta: Vec<f64>, kappa: f64) -> Self {
        Self {
            beta: DVector::from_vec(beta),
            kappa,
        }
    }

    /// `θ = (β', κ)'`.
    pub fn theta(&self) -> DVector<f64> {
        let p = self.beta.len();
        DVector::from_fn(p + 1, |i, _| if i < p { self.beta[i] } else { self.kappa })
    }

    pub fn from_theta(theta: &DVector<f64>) -> Self {
        let p = theta.len() - 1;
        Self {
            beta: theta.rows(0, p).into_owned(),
            kappa: theta[p],
        }
    }
}

#[derive(Clone, Debug)]
pub struct IndependenceExpectation {
    pub zeta: DVector<f64>,
}

pub fn independence_expectation(x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<IndependenceExpectation> {
    if x.ncols() != beta.len() {
        return Err(Error::dim(format!("X has {} columns, beta has {} entries", x.ncols(), beta.len())));
    }
    Ok(IndependenceExpectation {
        zeta: (x * beta).map(logistic),
    })
}

fn check_inputs(z: Option<&[f64]>, params: &AutoParams, graph: &ArealGraph, x: &DMatrix<f64>) -> Result<()> {
    let n = graph.n();
    if x.nrows() != n {
        return Err(Error::dim(format!("X has {} rows, graph has {n} vertices", x.nrows())));
    }
    if x.ncols() != params.beta.len() {
        return Err(Error::dim(format!(
            "X has {} columns, beta has {} entries",
            x.ncols(),
            params.beta.len()
        )));
    }
    if let Some(z) = z {
        if z.len() != n {
            return Err(Error::dim(format!("Z has {} entries, graph has {n} vertices", z.len())));
        }
    }
    if !params.kappa.is_finite() || params.beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("autologistic parameters must be finite"));
    }
    Ok(())
}

pub(crate) fn check_binary(z: &[f64]) -> Result<()> {
    if z.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("response must be binary (0/1)"));
    }
    Ok(())
}

/// Per-vertex linear term `x_i'β - κ a_i'ζ` of the joint energy.
fn field(params: &AutoParams, graph: &ArealGraph, x: &DMatrix<f64>) -> Vec<f64> {
    let xb = x * &params.beta;
    let zeta: Vec<f64> = xb.iter().map(|&t| logistic(t)).collect();
    let az = graph.adjacency_mul(&zeta);
    xb.iter().zip(&az).map(|(&e, &a)| e - params.kappa * a).collect()
}

fn energy(y: &[f64], h: &[f64], kappa: f64, graph: &ArealGraph) -> f64 {
    let lin: f64 = y.iter().zip(h).map(|(a, b)| a * b).sum();
    let pair: f64 = graph.edges().iter().map(|&(i, j)| y[i] * y[j]).sum();
    lin + kappa * pair
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|&e| (e - m).exp()).sum::<f64>().ln()
}

fn state_from_bits(bits: usize, n: usize, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(n) {
        *o = ((bits >> i) & 1) as f64;
    }
}

/// Log energies of all `2ⁿ` states, state `s` having `Z_i = (s >> i) & 1`.
fn all_energies(params: &AutoParams, graph: &ArealGraph, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = graph.n();
    if n > EXACT_LIMIT {
        return Err(Error::Infeasible { n, limit: EXACT_LIMIT });
    }
    check_inputs(None, params, graph, x)?;
    let h = field(params, graph, x);
    let mut y = vec![0.0; n];
    Ok((0..1usize << n)
        .map(|s| {
            state_from_bits(s, n, &mut y);
            energy(&y, &h, params.kappa, graph)
        })
        .collect())
}

/// `log π(Z | θ)` with the normalizing constant computed by enumeration.
pub fn exact_log_pmf(z: &[f64], params: &AutoParams, graph: &ArealGraph, x: &DMatrix<f64>) -> Result<f64> {
    let e = all_energies(params, graph, x)?;
    check_inputs(Some(z), params, graph, x)?;
    check_binary(z)?;
    let h = field(params, graph, x);
    Ok(energy(z, &h, params.kappa, graph) - log_sum_exp(&e))
}

/// Probabilities of all `2ⁿ` states, indexed as in bit `i` = `Z_i`.
pub fn exact_pmf_table(params: &AutoParams, graph: &ArealGraph, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let e = all_energies(params, graph, x)?;
    let lc = log_sum_exp(&e);
    Ok(e.into_iter().map(|v| (v - lc).exp()).collect())
}

/// Systematic-scan single-site Gibbs sampler.
pub struct GibbsSampler<'a> {
    graph: &'a ArealGraph,
    h: Vec<f64>,
    kappa: f64,
    state: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<'a> GibbsSampler<'a> {
    /// Starts from independent Bernoulli(ζ_i) draws.
    pub fn new(params: &AutoParams, graph: &'a ArealGraph, x: &DMatrix<f64>, seed: u64) -> Result<Self> {
        check_inputs(None, params, graph, x)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let zeta = independence_expectation(x, &params.beta)?.zeta;
        let state = zeta
            .iter()
            .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            graph,
            h: field(params, graph, x),
            kappa: params.kappa,
            state,
            rng,
        })
    }

    pub fn sweep(&mut self) {
        for i in 0..self.state.len() {
            let s: f64 = self.graph.neighbors(i).iter().map(|&j| self.state[j]).sum();
            let p = logistic(self.h[i] + self.kappa * s);
            self.state[i] = if self.rng.random::<f64>() < p { 1.0 } else { 0.0 };
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

/// `n_samples` draws, each `sweeps_per_sample` sweeps apart, after `burn_in` sweeps.
pub fn gibbs_simulate(
    params: &AutoParams,
    graph: &ArealGraph,
    x: &DMatrix<f64>,
    n_samples: usize,
    sweeps_per_sample: usize,
    burn_in: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if sweeps_per_sample == 0 {
        return Err(Error::invalid("sweeps_per_sample must be at least 1"));
    }
    let mut g = GibbsSampler::new(params, graph, x, seed)?;
    for _ in 0..burn_in {
        g.sweep();
    }
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        for _ in 0..sweeps_per_sample {
            g.sweep();
        }
        out.push(g.state().to_vec());
    }
    Ok(out)
}

/// Linear predictors `x_i'β + κ a_i'(Z - ζ)` and `ζ`.
fn conditional_predictor(params: &AutoParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let xb = x * &params.beta;
    let zeta: Vec<f64> = xb.iter().map(|&t| logistic(t)).collect();
    let centered: Vec<f64> = z.iter().zip(&zeta).map(|(a, b)| a - b).collect();
    let ac = graph.adjacency_mul(&centered);
    let eta = xb.iter().zip(&ac).map(|(&e, &a)| e + params.kappa * a).collect();
    (eta, zeta)
}

/// `P(Z_i = 1 | neighbors)` at the observed neighbor values.
pub fn conditional_probs(params: &AutoParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_inputs(Some(z), params, graph, x)?;
    let (eta, _) = conditional_predictor(params, z, graph, x);
    Ok(eta.into_iter().map(logistic).collect())
}

/// Log pseudolikelihood.
pub fn log_pl(params: &AutoParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> Result<f64> {
    check_inputs(Some(z), params, graph, x)?;
    Ok(log_pl_unchecked(params, z, graph, x))
}

fn log_pl_unchecked(params: &AutoParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> f64 {
    let (eta, _) = conditional_predictor(params, z, graph, x);
    z.iter().zip(&eta).map(|(&zi, &e)| zi * e - log1p_exp(e)).sum()
}

/// Gradient of [`log_pl`] with respect to `(β', κ)'`.
///
/// `z` need not be binary, which allows plugging in `ζ` itself.
pub fn score_pl(params: &AutoParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_inputs(Some(z), params, graph, x)?;
    Ok(score_unchecked(params, z, graph, x))
}

fn score_unchecked(params: &AutoParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> DVector<f64> {
    let p = x.ncols();
    let (eta, zeta) = conditional_predictor(params, z, graph, x);
    let r: Vec<f64> = z.iter().zip(&eta).map(|(&zi, &e)| zi - logistic(e)).collect();
    // (Z-p)'(I - κAD)X = X'r - κ X'DAr
    let ar = graph.adjacency_mul(&r);
    let w: Vec<f64> = (0..r.len())
        .map(|i| r[i] - params.kappa * zeta[i] * (1.0 - zeta[i]) * ar[i])
        .collect();
    let gb = x.transpose() * DVector::from_vec(w);
    let centered: Vec<f64> = z.iter().zip(&zeta).map(|(a, b)| a - b).collect();
    let gk: f64 = ar.iter().zip(&centered).map(|(a, b)| a * b).sum();
    DVector::from_fn(p + 1, |i, _| if i < p { gb[i] } else { gk })
}

/// Maximum pseudolikelihood fit together with the data it was computed from.
#[derive(Clone, Debug)]
pub struct MpleFit {
    pub params: AutoParams,
    /// Negative Hessian of the log pseudolikelihood at the estimate.
    pub observed_info: DMatrix<f64>,
    pub log_pl: f64,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub z: Vec<f64>,
    pub x: DMatrix<f64>,
    pub graph: ArealGraph,
}

impl MpleFit {
    pub fn param_names(&self) -> Vec<String> {
        let mut names = beta_names(self.params.beta.len());
        names.push("kappa".into());
        names
    }

    /// Conditional probabilities at the observed data.
    pub fn predict(&self) -> Vec<f64> {
        let (eta, _) = conditional_predictor(&self.params, &self.z, &self.graph, &self.x);
        eta.into_iter().map(logistic).collect()
    }

    /// Package the estimate with the supplied intervals.
    pub fn to_fit_result(&self, intervals: Vec<Interval>) -> FitResult {
        FitResult {
            method: Method::Autologistic,
            param_names: self.param_names(),
            estimates: self.params.theta().as_slice().to_vec(),
            intervals,
            converged: self.converged,
            iterations: self.iterations,
            p_hat: self.predict(),
            warnings: self.warnings.clone(),
        }
    }

    /// Wald intervals from the inverse observed information alone (no sandwich).
    pub fn naive_intervals(&self, level: f64) -> Result<Vec<Interval>> {
        let cov = spd_inverse(&self.observed_info, "observed pseudolikelihood information")?;
        Ok(normal_intervals(&self.params.theta(), &cov, level))
    }
}

fn normal_intervals(theta: &DVector<f64>, cov: &DMatrix<f64>, level: f64) -> Vec<Interval> {
    let zq = norm_quantile(0.5 + level / 2.0);
    (0..theta.len())
        .map(|j| {
            let se = cov[(j, j)].sqrt();
            Interval::new(theta[j] - zq * se, theta[j] + zq * se)
        })
        .collect()
}

/// Maximize the log pseudolikelihood from the ordinary logistic estimate with `κ = 0`.
pub fn fit_mple(z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> Result<MpleFit> {
    let p = x.ncols();
    let start = AutoParams {
        beta: DVector::zeros(p),
        kappa: 0.0,
    };
    check_inputs(Some(z), &start, graph, x)?;
    check_binary(z)?;
    crate::moran::column_space_basis(x)?;
    let mut warnings = Vec::new();
    let beta0 = match fit_logistic(x, z, 0.0) {
        Ok(f) => f.coefficients,
        Err(_) => {
            warnings.push("ordinary logistic start failed (separation); using a ridge-regularized start".into());
            fit_logistic(x, z, 1.0)?.coefficients
        }
    };
    let theta0 = AutoParams { beta: beta0, kappa: 0.0 }.theta();

    let neg = |t: &DVector<f64>| {
        let pr = AutoParams::from_theta(t);
        (-log_pl_unchecked(&pr, z, graph, x), -score_unchecked(&pr, z, graph, x))
    };
    let opts = BfgsOptions {
        max_iter: 500,
        gtol: 1e-6,
        ftol: 0.0,
    };
    let res = bfgs_minimize(neg, theta0, &opts);
    let mut theta = res.x;
    let mut grad = res.grad;
    let score = |t: &DVector<f64>| score_unchecked(&AutoParams::from_theta(t), z, graph, x);
    let mut info = -hessian_from_gradient(score, &theta, HESSIAN_STEP);
    // Newton polish: the objective is close to quadratic near the optimum
    for _ in 0..3 {
        let Some(chol) = info.clone().cholesky() else { break };
        let cand = &theta - chol.solve(&grad);
        let g = -score(&cand);
        if g.amax() < grad.amax() {
            theta = cand;
            grad = g;
            info = -hessian_from_gradient(score, &theta, HESSIAN_STEP);
        } else {
            break;
        }
    }
    if grad.amax() > opts.gtol {
        return Err(Error::NonConvergence {
            iterations: res.iterations,
            last: theta.as_slice().to_vec(),
        });
    }
    let params = AutoParams::from_theta(&theta);
    Ok(MpleFit {
        log_pl: log_pl_unchecked(&params, z, graph, x),
        params,
        observed_info: info,
        iterations: res.iterations,
        converged: true,
        warnings,
        z: z.to_vec(),
        x: x.clone(),
        graph: graph.clone(),
    })
}

/// Draw `b` samples from `π(Z | θ̃)` with one chain, [`BOOT_BURN_IN`] burn-in and [`BOOT_THIN`] thinning.
pub fn bootstrap_samples(fit: &MpleFit, b: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    gibbs_simulate(&fit.params, &fit.graph, &fit.x, b, BOOT_THIN, BOOT_BURN_IN, seed)
}

/// Parametric-bootstrap percentile intervals.
pub fn bootstrap_ci(fit: &MpleFit, b: usize, level: f64, seed: u64) -> Result<Vec<Interval>> {
    if b < 100 {
        return Err(Error::invalid(format!("bootstrap needs b >= 100, got {b}")));
    }
    check_level(level)?;
    let samples = bootstrap_samples(fit, b, seed)?;
    let thetas: Vec<Option<DVector<f64>>> = samples
        .par_iter()
        .map(|zb| fit_mple(zb, &fit.graph, &fit.x).ok().map(|f| f.params.theta()))
        .collect();
    let ok: Vec<DVector<f64>> = thetas.into_iter().flatten().collect();
    let failed = b - ok.len();
    if failed as f64 > 0.05 * b as f64 {
        return Err(Error::FitFailed(format!("{failed} of {b} bootstrap fits failed")));
    }
    let k = fit.params.beta.len() + 1;
    Ok((0..k)
        .map(|j| {
            let col: Vec<f64> = ok.iter().map(|t| t[j]).collect();
            let (lo, hi) = equal_tailed(&col, level);
            Interval::new(lo, hi)
        })
        .collect())
}

/// `Ĵ = b⁻¹ Σ ∇ℓ_PL(θ̃ | Z⁽ᵏ⁾) ∇ℓ_PL(θ̃ | Z⁽ᵏ⁾)'`.
pub fn score_outer_product(fit: &MpleFit, samples: &[Vec<f64>]) -> DMatrix<f64> {
    let k = fit.params.beta.len() + 1;
    let mut j = DMatrix::zeros(k, k);
    for zb in samples {
        let s = score_unchecked(&fit.params, zb, &fit.graph, &fit.x);
        j += &s * s.transpose();
    }
    j / samples.len() as f64
}

/// Godambe covariance `Î⁻¹ Ĵ Î⁻¹` with `Ĵ` from `b` simulated scores.
pub fn sandwich_covariance(fit: &MpleFit, b: usize, seed: u64) -> Result<DMatrix<f64>> {
    if b < 100 {
        return Err(Error::invalid(format!("sandwich needs b >= 100, got {b}")));
    }
    let inv = spd_inverse(&fit.observed_info, "observed information").map_err(|_| {
        Error::FitFailed("observed information is singular; use bootstrap_ci instead".into())
    })?;
    let samples = bootstrap_samples(fit, b, seed)?;
    let j = score_outer_product(fit, &samples);
    Ok(crate::linalg::symmetrize(&inv * j * &inv))
}

pub fn sandwich_ci(fit: &MpleFit, b: usize, level: f64, seed: u64) -> Result<Vec<Interval>> {
    check_level(level)?;
    let cov = sandwich_covariance(fit, b, seed)?;
    Ok(normal_intervals(&fit.params.theta(), &cov, level))
}

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("confidence level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

/// Conditional probabilities under the fitted parameters given observed neighbors.
pub fn predict(params: &AutoParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    conditional_probs(params, z, graph, x)
}
