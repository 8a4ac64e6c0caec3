//! MCMC for spatial generalized linear mixed models: the traditional CAR model,
//! restricted spatial regression (RSR) and Bayesian spatial filtering (BSF).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{beta_names, FitResult, Interval, Method};
use crate::glm::{fit_logistic, log1p_exp, logistic};
use crate::graph::{laplacian, ArealGraph};
use crate::linalg::{cholesky, spd_inverse, sorted_symmetric_eigen, symmetrize};
use crate::moran::{MoranBasis, EIGEN_TOL};
use crate::stats::{equal_tailed, median};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Car,
    Rsr,
    Bsf,
}

/// Treatment of the CAR dependence parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPrior {
    Fixed(f64),
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Bernoulli,
    /// Identity link with known noise variance; every update is a Gibbs step.
    Gaussian { noise_var: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedModelSpec {
    pub kind: ModelKind,
    /// Basis size for rsr/bsf; ignored for car.
    pub q: usize,
    pub prior_beta_var: f64,
    pub tau_shape: f64,
    pub tau_scale: f64,
    pub rho: RhoPrior,
    /// Initial sd of the spherical random-walk proposal for η.
    pub sigma_eta: f64,
    pub thin: usize,
    pub response: Response,
    /// Hold τ at this value instead of sampling it.
    #[serde(default)]
    pub fixed_tau: Option<f64>,
    /// Keep every retained draw of the random effects, not only their mean.
    #[serde(default = "default_true")]
    pub store_effects: bool,
}

fn default_true() -> bool {
    true
}

impl MixedModelSpec {
    fn base(kind: ModelKind, q: usize) -> Self {
        Self {
            kind,
            q,
            prior_beta_var: 100.0,
            tau_shape: 0.5,
            tau_scale: 2000.0,
            rho: RhoPrior::Uniform,
            sigma_eta: 0.1,
            thin: 5,
            response: Response::Bernoulli,
            fixed_tau: None,
            store_effects: true,
        }
    }

    pub fn car() -> Self {
        Self::base(ModelKind::Car, 0)
    }

    pub fn rsr(q: usize) -> Self {
        Self::base(ModelKind::Rsr, q)
    }

    pub fn bsf(q: usize) -> Self {
        Self::base(ModelKind::Bsf, q)
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.prior_beta_var > 0.0 && self.tau_shape > 0.0 && self.tau_scale > 0.0) {
            return Err(Error::invalid("prior variance, tau shape and tau scale must be positive"));
        }
        if self.kind != ModelKind::Car && self.q > n {
            return Err(Error::invalid(format!("basis size q = {} exceeds n = {n}", self.q)));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thinning factor must be at least 1"));
        }
        if !(self.sigma_eta > 0.0) {
            return Err(Error::invalid("sigma_eta must be positive"));
        }
        if let RhoPrior::Fixed(r) = self.rho {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("fixed rho must lie in [0, 1), got {r}")));
            }
        }
        if let Some(t) = self.fixed_tau {
            if !(t > 0.0) {
                return Err(Error::invalid("fixed tau must be positive"));
            }
        }
        if let Response::Gaussian { noise_var } = self.response {
            if !(noise_var > 0.0) {
                return Err(Error::invalid("Gaussian noise variance must be positive"));
            }
        }
        Ok(())
    }

    fn method(&self) -> Method {
        match self.kind {
            ModelKind::Car => Method::Car,
            ModelKind::Rsr => Method::Rsr,
            ModelKind::Bsf => Method::Bsf,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PosteriorSamples {
    pub spec: MixedModelSpec,
    pub seed: u64,
    pub iterations: usize,
    pub burn_in: usize,
    /// Retained draws × p.
    pub beta: DMatrix<f64>,
    /// Retained draws × (q or n); zero rows when effects are not stored.
    pub effects: DMatrix<f64>,
    pub effect_mean: DVector<f64>,
    pub tau: Vec<f64>,
    pub rho: Option<Vec<f64>>,
    /// Post-burn-in acceptance rate per Metropolis block.
    pub acceptance: BTreeMap<String, f64>,
    pub beta_tilde: Option<DMatrix<f64>>,
    /// Posterior mean of the fitted mean `g⁻¹(Xβ + effect)`.
    pub fitted_mean: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PosteriorSamples {
    pub fn draws(&self) -> usize {
        self.beta.nrows()
    }

    pub fn beta_column(&self, j: usize) -> Vec<f64> {
        self.beta.column(j).iter().copied().collect()
    }
}

/// Parameters of the gamma full conditional of `τ`, shape–rate form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub shape: f64,
    pub rate: f64,
}

impl GammaParams {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        Gamma::new(self.shape, 1.0 / self.rate)
            .expect("valid gamma parameters")
            .sample(rng)
    }
}

/// `τ | η ~ Gamma(shape + q/2, rate = 1/scale + η'Pη/2)`.
pub fn tau_full_conditional(effects: &DVector<f64>, penalty: &DMatrix<f64>, shape: f64, scale: f64) -> Result<GammaParams> {
    let q = effects.len();
    if penalty.nrows() != q || penalty.ncols() != q {
        return Err(Error::dim(format!("penalty is {}x{}, effects have {q} entries", penalty.nrows(), penalty.ncols())));
    }
    let quad = effects.dot(&(penalty * effects));
    Ok(tau_conditional_from_quad(q, quad, shape, scale))
}

fn tau_conditional_from_quad(q: usize, quad: f64, shape: f64, scale: f64) -> GammaParams {
    GammaParams {
        shape: shape + q as f64 / 2.0,
        rate: 1.0 / scale + quad / 2.0,
    }
}

/// Robbins–Monro style scale tuning over batches during burn-in.
#[derive(Clone, Debug)]
struct Tuner {
    scale: f64,
    target: f64,
    accepted: usize,
    proposed: usize,
    total_accepted: usize,
    total_proposed: usize,
}

impl Tuner {
    const BATCH: usize = 50;

    fn new(scale: f64, target: f64) -> Self {
        Self {
            scale,
            target,
            accepted: 0,
            proposed: 0,
            total_accepted: 0,
            total_proposed: 0,
        }
    }

    fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.proposed += 1;
            self.accepted += accepted as usize;
            if self.proposed == Self::BATCH {
                let rate = self.accepted as f64 / self.proposed as f64;
                self.scale *= (2.0 * (rate - self.target)).exp();
                self.proposed = 0;
                self.accepted = 0;
            }
        } else {
            self.total_proposed += 1;
            self.total_accepted += accepted as usize;
        }
    }

    fn rate(&self) -> f64 {
        if self.total_proposed == 0 {
            f64::NAN
        } else {
            self.total_accepted as f64 / self.total_proposed as f64
        }
    }
}

fn check_response(z: &[f64], spec: &MixedModelSpec) -> Result<()> {
    match spec.response {
        Response::Bernoulli => crate::autologistic::check_binary(z),
        Response::Gaussian { .. } => {
            if z.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(Error::invalid("response contains non-finite values"))
            }
        }
    }
}

fn check_xz(z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>) -> Result<()> {
    let n = graph.n();
    if z.len() != n || x.nrows() != n {
        return Err(Error::dim(format!(
            "Z has {} entries, X has {} rows, graph has {n} vertices",
            z.len(),
            x.nrows()
        )));
    }
    crate::moran::column_space_basis(x)?;
    Ok(())
}

/// Ordinary GLM estimate and covariance used to start and tune the β block.
fn glm_start(z: &[f64], x: &DMatrix<f64>, warnings: &mut Vec<String>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match fit_logistic(x, z, 0.0) {
        Ok(f) => Ok((f.coefficients, f.covariance)),
        Err(_) => {
            warnings.push("ordinary logistic fit failed (separation); ridge-regularized proposal used".into());
            let f = fit_logistic(x, z, 1.0)?;
            Ok((f.coefficients, f.covariance))
        }
    }
}

fn loglik(z: &[f64], lin: &[f64]) -> f64 {
    z.iter().zip(lin).map(|(&zi, &e)| zi * e - log1p_exp(e)).sum()
}

fn standard_normals(rng: &mut ChaCha8Rng, k: usize) -> DVector<f64> {
    DVector::from_fn(k, |_, _| StandardNormal.sample(rng))
}

fn acceptance_warnings(acc: &BTreeMap<String, f64>, warnings: &mut Vec<String>) {
    for (k, &r) in acc {
        if r.is_finite() && !(0.05..=0.9).contains(&r) {
            warnings.push(format!("acceptance rate for {k} is {r:.3}, outside (0.05, 0.9)"));
        }
    }
}

fn check_budget(iterations: usize, burn_in: usize) -> Result<()> {
    if iterations <= burn_in {
        return Err(Error::invalid(format!(
            "iterations ({iterations}) must exceed burn-in ({burn_in})"
        )));
    }
    Ok(())
}

/// Eigenvalues of `D^{-1/2} A D^{-1/2}`, giving `log det Q(ρ) = Σ log d_i + Σ log(1 - ρμ_k)`.
#[derive(Clone, Debug)]
pub struct CarSpectrum {
    log_deg_sum: f64,
    mu: Vec<f64>,
}

impl CarSpectrum {
    pub fn new(graph: &ArealGraph) -> Result<Self> {
        let d = graph.degrees();
        if d.iter().any(|&v| v == 0.0) {
            return Err(Error::invalid("CAR model needs every vertex to have a neighbor"));
        }
        let n = graph.n();
        let a = graph.adjacency();
        let s = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (d[i] * d[j]).sqrt());
        let (mu, _) = sorted_symmetric_eigen(&s);
        Ok(Self {
            log_deg_sum: d.iter().map(|v| v.ln()).sum(),
            mu: mu.iter().copied().collect(),
        })
    }

    pub fn log_det(&self, rho: f64) -> f64 {
        self.log_deg_sum + self.mu.iter().map(|m| (1.0 - rho * m).ln()).sum::<f64>()
    }
}

/// Traditional CAR mixed model `logit(μ) = Xβ + ψ`, `ψ ~ N{0, (τQ)⁻¹}`, `Q = diag(A1) - ρA`.
pub fn fit_car_mcmc(
    z: &[f64],
    graph: &ArealGraph,
    x: &DMatrix<f64>,
    spec: &MixedModelSpec,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    let spectrum = match spec.rho {
        RhoPrior::Uniform => Some(CarSpectrum::new(graph)?),
        RhoPrior::Fixed(_) => None,
    };
    fit_car_mcmc_with(z, graph, spectrum.as_ref(), x, spec, iterations, burn_in, seed)
}

/// As [`fit_car_mcmc`], reusing a precomputed spectrum (required when `ρ` has a prior).
#[allow(clippy::too_many_arguments)]
pub fn fit_car_mcmc_with(
    z: &[f64],
    graph: &ArealGraph,
    spectrum: Option<&CarSpectrum>,
    x: &DMatrix<f64>,
    spec: &MixedModelSpec,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    if spec.kind != ModelKind::Car {
        return Err(Error::invalid("fit_car_mcmc needs a car model spec"));
    }
    let n = graph.n();
    spec.validate(n)?;
    check_xz(z, graph, x)?;
    check_response(z, spec)?;
    check_budget(iterations, burn_in)?;
    if graph.degrees().iter().any(|&d| d == 0.0) {
        return Err(Error::invalid("CAR model needs every vertex to have a neighbor"));
    }
    if let Response::Gaussian { noise_var } = spec.response {
        let RhoPrior::Fixed(rho) = spec.rho else {
            return Err(Error::invalid("the Gaussian CAR sampler needs a fixed rho"));
        };
        let penalty = crate::graph::car_precision(graph, rho)?;
        let design = DMatrix::identity(n, n);
        return gaussian_gibbs(z, x, &design, &penalty, noise_var, spec, iterations, burn_in, seed);
    }
    let spectrum = match spec.rho {
        RhoPrior::Uniform => Some(spectrum.ok_or_else(|| Error::invalid("a CAR spectrum is required when rho has a prior"))?),
        RhoPrior::Fixed(_) => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let p = x.ncols();
    let (mut beta, glm_cov) = glm_start(z, x, &mut warnings)?;
    let beta_chol = cholesky(&glm_cov, "GLM covariance")?.l();
    let deg = graph.degrees().to_vec();
    let mut psi = vec![0.0; n];
    let mut rho = match spec.rho {
        RhoPrior::Fixed(r) => r,
        RhoPrior::Uniform => 0.5,
    };
    let mut tau = spec.fixed_tau.unwrap_or(1.0);
    let xb = x * &beta;
    let mut lin: Vec<f64> = xb.iter().copied().collect();
    let mut ll = loglik(z, &lin);

    let mut t_psi = Tuner::new(0.5, 0.4);
    let mut t_beta = Tuner::new(1.0, 0.25);
    let mut t_rho = Tuner::new(0.5, 0.4);
    let mut t_ridge = Tuner::new(1.0, 0.25);
    let mut t_tau = Tuner::new(0.2, 0.35);

    let keep = (iterations - burn_in) / spec.thin;
    let mut beta_draws = DMatrix::zeros(keep, p);
    let mut effect_draws = if spec.store_effects {
        DMatrix::zeros(keep, n)
    } else {
        DMatrix::zeros(0, n)
    };
    let mut effect_sum = DVector::zeros(n);
    let mut tau_draws = Vec::with_capacity(keep);
    let mut rho_draws = Vec::with_capacity(keep);
    let mut fitted_sum = vec![0.0; n];
    let mut k = 0;

    let quad_parts = |psi: &[f64]| {
        let sd: f64 = psi.iter().zip(&deg).map(|(v, d)| d * v * v).sum();
        let sa: f64 = graph.edges().iter().map(|&(i, j)| psi[i] * psi[j]).sum();
        (sd, sa)
    };

    for it in 0..iterations {
        let adapting = it < burn_in;
        // ψ: single-site random walk
        for i in 0..n {
            let old = psi[i];
            let new = old + t_psi.scale * rng.sample::<f64, _>(StandardNormal);
            let nb: f64 = graph.neighbors(i).iter().map(|&j| psi[j]).sum();
            // -τ/2 [d_i ψ_i² - 2ρ ψ_i Σ_{j~i} ψ_j]
            let dprior = -0.5 * tau * (deg[i] * (new * new - old * old) - 2.0 * rho * (new - old) * nb);
            let (l_old, l_new) = (lin[i], lin[i] + new - old);
            let dlik = z[i] * (l_new - l_old) - (log1p_exp(l_new) - log1p_exp(l_old));
            let acc = (dprior + dlik) >= 0.0 || rng.random::<f64>().ln() < dprior + dlik;
            if acc {
                psi[i] = new;
                lin[i] = l_new;
                ll += dlik;
            }
            t_psi.record(acc, adapting);
        }
        // β: block random walk shaped by the GLM covariance
        {
            let step = &beta_chol * standard_normals(&mut rng, p) * t_beta.scale;
            let cand = &beta + &step;
            let dx = x * &step;
            let lin_new: Vec<f64> = lin.iter().zip(dx.iter()).map(|(a, b)| a + b).collect();
            let ll_new = loglik(z, &lin_new);
            let dprior = -(cand.norm_squared() - beta.norm_squared()) / (2.0 * spec.prior_beta_var);
            let lr = ll_new - ll + dprior;
            let acc = lr >= 0.0 || rng.random::<f64>().ln() < lr;
            if acc {
                beta = cand;
                lin = lin_new;
                ll = ll_new;
            }
            t_beta.record(acc, adapting);
        }
        // (β + d, ψ - Xd) leaves Xβ + ψ, hence the likelihood, unchanged
        {
            let d = &beta_chol * standard_normals(&mut rng, p) * t_ridge.scale;
            let cand = &beta + &d;
            let xd = x * &d;
            let psi_new: Vec<f64> = psi.iter().zip(xd.iter()).map(|(a, b)| a - b).collect();
            let (sd0, sa0) = quad_parts(&psi);
            let (sd1, sa1) = quad_parts(&psi_new);
            let dprior = -(cand.norm_squared() - beta.norm_squared()) / (2.0 * spec.prior_beta_var)
                - 0.5 * tau * ((sd1 - 2.0 * rho * sa1) - (sd0 - 2.0 * rho * sa0));
            let acc = dprior >= 0.0 || rng.random::<f64>().ln() < dprior;
            if acc {
                beta = cand;
                psi = psi_new;
            }
            t_ridge.record(acc, adapting);
        }
        // τ: scaling move log τ' = log τ + δ, ψ' = ψ·e^(-δ/2), then Gibbs
        if spec.fixed_tau.is_none() {
            let d = t_tau.scale * rng.sample::<f64, _>(StandardNormal);
            let shrink = (-0.5 * d).exp();
            let lin_new: Vec<f64> = lin.iter().zip(&psi).map(|(l, v)| l - v + v * shrink).collect();
            let ll_new = loglik(z, &lin_new);
            let tau_new = tau * d.exp();
            let lr = ll_new - ll + spec.tau_shape * d - (tau_new - tau) / spec.tau_scale;
            let acc = lr >= 0.0 || rng.random::<f64>().ln() < lr;
            if acc {
                psi.iter_mut().for_each(|v| *v *= shrink);
                lin = lin_new;
                ll = ll_new;
            }
            t_tau.record(acc, adapting);
        }
        let (sd, sa) = quad_parts(&psi);
        if spec.fixed_tau.is_none() {
            tau = tau_conditional_from_quad(n, sd - 2.0 * rho * sa, spec.tau_shape, spec.tau_scale).sample(&mut rng);
        }
        // ρ: random walk on logit(ρ) under a uniform prior
        if let Some(spec_rho) = spectrum {
            let lo = (rho / (1.0 - rho)).ln();
            let ln = lo + t_rho.scale * rng.sample::<f64, _>(StandardNormal);
            let new = logistic(ln);
            if new > 0.0 && new < 1.0 {
                let lp = |r: f64| 0.5 * spec_rho.log_det(r) - 0.5 * tau * (sd - 2.0 * r * sa) + (r * (1.0 - r)).ln();
                let lr = lp(new) - lp(rho);
                let acc = lr >= 0.0 || rng.random::<f64>().ln() < lr;
                if acc {
                    rho = new;
                }
                t_rho.record(acc, adapting);
            } else {
                t_rho.record(false, adapting);
            }
        }
        if !adapting && (it - burn_in + 1) % spec.thin == 0 && k < keep {
            beta_draws.set_row(k, &beta.transpose());
            if spec.store_effects {
                for i in 0..n {
                    effect_draws[(k, i)] = psi[i];
                }
            }
            for i in 0..n {
                effect_sum[i] += psi[i];
                fitted_sum[i] += logistic(lin[i]);
            }
            tau_draws.push(tau);
            rho_draws.push(rho);
            k += 1;
        }
    }
    let mut acceptance = BTreeMap::new();
    acceptance.insert("psi".to_string(), t_psi.rate());
    acceptance.insert("beta".to_string(), t_beta.rate());
    acceptance.insert("ridge".to_string(), t_ridge.rate());
    if spec.fixed_tau.is_none() {
        acceptance.insert("tau".to_string(), t_tau.rate());
    }
    if spectrum.is_some() {
        acceptance.insert("rho".to_string(), t_rho.rate());
    }
    acceptance_warnings(&acceptance, &mut warnings);
    Ok(PosteriorSamples {
        spec: spec.clone(),
        seed,
        iterations,
        burn_in,
        beta: beta_draws,
        effects: effect_draws,
        effect_mean: effect_sum / keep as f64,
        tau: tau_draws,
        rho: Some(rho_draws),
        acceptance,
        beta_tilde: None,
        fitted_mean: fitted_sum.into_iter().map(|s| s / keep as f64).collect(),
        warnings,
    })
}

/// The basis a rsr/bsf fit uses: `M_x` eigenvectors for rsr, `M₁` eigenvectors for bsf.
pub fn model_basis(graph: &ArealGraph, x: &DMatrix<f64>, kind: ModelKind, q: usize) -> Result<MoranBasis> {
    let basis = match kind {
        ModelKind::Rsr => MoranBasis::new(graph, x, q)?,
        ModelKind::Bsf => MoranBasis::intercept_only(graph, q)?,
        ModelKind::Car => return Err(Error::invalid("the CAR model has no basis")),
    };
    if q > 0 && basis.values[q - 1] <= EIGEN_TOL {
        return Err(Error::invalid(format!(
            "q = {q} exceeds the number of attractive (positive-eigenvalue) patterns ({})",
            basis.positive_count()
        )));
    }
    Ok(basis)
}

/// `B'QB` with `Q` the graph Laplacian.
pub fn basis_penalty(basis: &DMatrix<f64>, graph: &ArealGraph) -> DMatrix<f64> {
    symmetrize(basis.transpose() * laplacian(graph) * basis)
}

/// Prior variances `diag{(B'QB)⁻¹}` of the basis coefficients at `τ = 1`.
pub fn prior_variances(basis: &DMatrix<f64>, graph: &ArealGraph) -> Result<Vec<f64>> {
    let inv = spd_inverse(&basis_penalty(basis, graph), "basis penalty")?;
    Ok(inv.diagonal().iter().copied().collect())
}

/// Mode of `(β, η)` under a logit link at fixed `τ`, and the Laplace log marginal
/// posterior of `log τ` (up to a constant).
fn laplace_at(
    z: &[f64],
    design: &DMatrix<f64>,
    p: usize,
    penalty: &DMatrix<f64>,
    spec: &MixedModelSpec,
    log_tau: f64,
    theta: &mut DVector<f64>,
) -> Option<f64> {
    let (n, m) = design.shape();
    let q = m - p;
    let tau = log_tau.exp();
    let mut prior = DMatrix::zeros(m, m);
    for j in 0..p {
        prior[(j, j)] = 1.0 / spec.prior_beta_var;
    }
    prior.view_mut((p, p), (q, q)).copy_from(&(penalty * tau));
    let zv = DVector::from_column_slice(z);
    let mut chol = None;
    for _ in 0..50 {
        let eta = design * &*theta;
        let mu = eta.map(logistic);
        let sw = mu.map(|v| (v * (1.0 - v)).max(1e-12).sqrt());
        let dw = DMatrix::from_fn(n, m, |i, j| design[(i, j)] * sw[i]);
        let h = dw.tr_mul(&dw) + &prior;
        let g = design.tr_mul(&(&zv - mu)) - &prior * &*theta;
        let c = h.cholesky()?;
        let step = c.solve(&g);
        *theta += &step;
        chol = Some(c);
        if step.amax() < 1e-8 {
            break;
        }
    }
    let eta = design * &*theta;
    let quad = theta.dot(&(&prior * &*theta));
    let ld_h = chol?.ln_determinant();
    Some(
        loglik(z, eta.as_slice()) - 0.5 * quad + 0.5 * q as f64 * log_tau - 0.5 * ld_h + spec.tau_shape * log_tau
            - tau / spec.tau_scale,
    )
}

/// Starting state for the basis sampler: `τ` from a coarse grid search of its Laplace
/// marginal posterior and `(β, η)` at their conditional mode.
fn laplace_start(
    z: &[f64],
    x: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    spec: &MixedModelSpec,
    beta0: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, f64, DMatrix<f64>)> {
    let (n, p) = x.shape();
    let q = basis.ncols();
    let design = DMatrix::from_fn(n, p + q, |i, j| if j < p { x[(i, j)] } else { basis[(i, j - p)] });
    let mut warm = DVector::from_fn(p + q, |j, _| if j < p { beta0[j] } else { 0.0 });
    let grid: Vec<f64> = match spec.fixed_tau {
        Some(t) => vec![t.ln()],
        // descending so each mode warm-starts from a smoother neighbor
        None => (0..=32).rev().map(|k| -6.0 + 0.5 * k as f64).collect(),
    };
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for lt in grid {
        let mut th = warm.clone();
        if let Some(v) = laplace_at(z, &design, p, penalty, spec, lt, &mut th) {
            if v.is_finite() && best.as_ref().is_none_or(|b| v > b.0) {
                best = Some((v, lt, th.clone()));
            }
            warm = th;
        }
    }
    let (_, lt, th) = best?;
    let h = joint_hessian(&design, p, penalty, spec, lt.exp(), &th);
    Some((th.rows(0, p).into_owned(), th.rows(p, q).into_owned(), lt.exp(), h))
}

/// Negative Hessian of the log conditional posterior of `(β, η)` at `theta`.
fn joint_hessian(
    design: &DMatrix<f64>,
    p: usize,
    penalty: &DMatrix<f64>,
    spec: &MixedModelSpec,
    tau: f64,
    theta: &DVector<f64>,
) -> DMatrix<f64> {
    let (n, m) = design.shape();
    let q = m - p;
    let eta = design * theta;
    let sw = eta.map(|v| {
        let mu = logistic(v);
        (mu * (1.0 - mu)).max(1e-12).sqrt()
    });
    let dw = DMatrix::from_fn(n, m, |i, j| design[(i, j)] * sw[i]);
    let mut h = dw.tr_mul(&dw);
    for j in 0..p {
        h[(j, j)] += 1.0 / spec.prior_beta_var;
    }
    let mut block = h.view_mut((p, p), (q, q));
    block += penalty * tau;
    h
}

/// Basis mixed model `g(μ) = Xβ + Bη`, `η ~ N{0, (τB'QB)⁻¹}`.
pub fn fit_basis_mcmc(
    z: &[f64],
    graph: &ArealGraph,
    x: &DMatrix<f64>,
    spec: &MixedModelSpec,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    spec.validate(graph.n())?;
    let basis = if spec.q == 0 {
        DMatrix::zeros(graph.n(), 0)
    } else {
        model_basis(graph, x, spec.kind, spec.q)?.vectors
    };
    fit_basis_mcmc_with(z, graph, x, &basis, spec, iterations, burn_in, seed)
}

/// As [`fit_basis_mcmc`] with a precomputed `n × q` basis.
#[allow(clippy::too_many_arguments)]
pub fn fit_basis_mcmc_with(
    z: &[f64],
    graph: &ArealGraph,
    x: &DMatrix<f64>,
    basis: &DMatrix<f64>,
    spec: &MixedModelSpec,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    if spec.kind == ModelKind::Car {
        return Err(Error::invalid("fit_basis_mcmc needs an rsr or bsf spec"));
    }
    let n = graph.n();
    spec.validate(n)?;
    check_xz(z, graph, x)?;
    check_response(z, spec)?;
    check_budget(iterations, burn_in)?;
    if basis.nrows() != n || basis.ncols() != spec.q {
        return Err(Error::dim(format!(
            "basis is {}x{}, expected {n}x{}",
            basis.nrows(),
            basis.ncols(),
            spec.q
        )));
    }
    let q = spec.q;
    let penalty = basis_penalty(basis, graph);
    if let Response::Gaussian { noise_var } = spec.response {
        return gaussian_gibbs(z, x, basis, &penalty, noise_var, spec, iterations, burn_in, seed);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let p = x.ncols();
    let (mut beta, glm_cov) = glm_start(z, x, &mut warnings)?;
    let beta_chol = cholesky(&glm_cov, "GLM covariance")?.l();
    let mut eta = DVector::<f64>::zeros(q);
    let mut tau = spec.fixed_tau.unwrap_or(1.0);
    // upper factor U with H = U'U; a joint step is U⁻¹ε
    let mut joint_factor = None;
    if q > 0 {
        match laplace_start(z, x, basis, &penalty, spec, &beta) {
            Some((b, e, t, h)) => {
                beta = b;
                eta = e;
                tau = t;
                joint_factor = h.cholesky().map(|c| c.l().transpose());
            }
            None => warnings.push("Laplace starting point failed; chain started at eta = 0".into()),
        }
    }
    let mut quad = eta.dot(&(&penalty * &eta));
    let mut xb = x * &beta;
    let mut be = basis * &eta;
    let mut lin: Vec<f64> = xb.iter().zip(be.iter()).map(|(a, b)| a + b).collect();
    let mut ll = loglik(z, &lin);

    let mut t_beta = Tuner::new(1.0, 0.25);
    let mut t_eta = Tuner::new(spec.sigma_eta, 0.25);
    let mut t_joint = Tuner::new(2.38 / ((p + q) as f64).sqrt(), 0.234);
    let mut t_tau = Tuner::new(0.5, 0.35);

    let keep = (iterations - burn_in) / spec.thin;
    let mut beta_draws = DMatrix::zeros(keep, p);
    let mut effect_draws = if spec.store_effects {
        DMatrix::zeros(keep, q)
    } else {
        DMatrix::zeros(0, q)
    };
    let mut effect_sum = DVector::zeros(q);
    let mut tau_draws = Vec::with_capacity(keep);
    let mut fitted_sum = vec![0.0; n];
    let mut k = 0;

    for it in 0..iterations {
        let adapting = it < burn_in;
        {
            let step = &beta_chol * standard_normals(&mut rng, p) * t_beta.scale;
            let cand = &beta + &step;
            let xb_new = &xb + x * &step;
            let lin_new: Vec<f64> = xb_new.iter().zip(be.iter()).map(|(a, b)| a + b).collect();
            let ll_new = loglik(z, &lin_new);
            let dprior = -(cand.norm_squared() - beta.norm_squared()) / (2.0 * spec.prior_beta_var);
            let lr = ll_new - ll + dprior;
            let acc = lr >= 0.0 || rng.random::<f64>().ln() < lr;
            if acc {
                beta = cand;
                xb = xb_new;
                lin = lin_new;
                ll = ll_new;
            }
            t_beta.record(acc, adapting);
        }
        if q > 0 {
            let cand = &eta + standard_normals(&mut rng, q) * t_eta.scale;
            let be_new = basis * &cand;
            let lin_new: Vec<f64> = xb.iter().zip(be_new.iter()).map(|(a, b)| a + b).collect();
            let ll_new = loglik(z, &lin_new);
            let quad_new = cand.dot(&(&penalty * &cand));
            let lr = ll_new - ll - 0.5 * tau * (quad_new - quad);
            let acc = lr >= 0.0 || rng.random::<f64>().ln() < lr;
            if acc {
                eta = cand;
                be = be_new;
                lin = lin_new;
                ll = ll_new;
                quad = quad_new;
            }
            t_eta.record(acc, adapting);
            if let Some(u) = &joint_factor {
                let step = u
                    .solve_upper_triangular(&standard_normals(&mut rng, p + q))
                    .expect("Cholesky factor has a positive diagonal")
                    * t_joint.scale;
                let db = step.rows(0, p).into_owned();
                let de = step.rows(p, q).into_owned();
                let cand_b = &beta + &db;
                let cand_e = &eta + &de;
                let xb_new = &xb + x * &db;
                let be_new = &be + basis * &de;
                let lin_new: Vec<f64> = xb_new.iter().zip(be_new.iter()).map(|(a, b)| a + b).collect();
                let ll_new = loglik(z, &lin_new);
                let quad_new = cand_e.dot(&(&penalty * &cand_e));
                let dprior = -(cand_b.norm_squared() - beta.norm_squared()) / (2.0 * spec.prior_beta_var);
                let lr = ll_new - ll + dprior - 0.5 * tau * (quad_new - quad);
                let acc = lr >= 0.0 || rng.random::<f64>().ln() < lr;
                if acc {
                    beta = cand_b;
                    eta = cand_e;
                    xb = xb_new;
                    be = be_new;
                    lin = lin_new;
                    ll = ll_new;
                    quad = quad_new;
                }
                t_joint.record(acc, adapting);
            }
            if spec.fixed_tau.is_none() {
                // log τ' = log τ + δ with η' = η·e^(-δ/2), so τ'η''Qη' = τη'Qη
                let d = t_tau.scale * rng.sample::<f64, _>(StandardNormal);
                let shrink = (-0.5 * d).exp();
                let be_new = &be * shrink;
                let lin_new: Vec<f64> = xb.iter().zip(be_new.iter()).map(|(a, b)| a + b).collect();
                let ll_new = loglik(z, &lin_new);
                let tau_new = tau * d.exp();
                let lr = ll_new - ll + spec.tau_shape * d - (tau_new - tau) / spec.tau_scale;
                let acc = lr >= 0.0 || rng.random::<f64>().ln() < lr;
                if acc {
                    eta *= shrink;
                    be = be_new;
                    lin = lin_new;
                    ll = ll_new;
                    quad *= shrink * shrink;
                }
                t_tau.record(acc, adapting);
                // the Gibbs draw below depends on τ' only through quad
                tau = tau_conditional_from_quad(q, quad, spec.tau_shape, spec.tau_scale).sample(&mut rng);
            }
        }
        if !adapting && (it - burn_in + 1) % spec.thin == 0 && k < keep {
            beta_draws.set_row(k, &beta.transpose());
            if spec.store_effects {
                effect_draws.set_row(k, &eta.transpose());
            }
            effect_sum += &eta;
            for i in 0..n {
                fitted_sum[i] += logistic(lin[i]);
            }
            tau_draws.push(tau);
            k += 1;
        }
    }
    let mut acceptance = BTreeMap::new();
    acceptance.insert("beta".to_string(), t_beta.rate());
    if q > 0 {
        acceptance.insert("eta".to_string(), t_eta.rate());
        if joint_factor.is_some() {
            acceptance.insert("joint".to_string(), t_joint.rate());
        }
        if spec.fixed_tau.is_none() {
            acceptance.insert("tau".to_string(), t_tau.rate());
        }
    }
    acceptance_warnings(&acceptance, &mut warnings);
    Ok(PosteriorSamples {
        spec: spec.clone(),
        seed,
        iterations,
        burn_in,
        beta: beta_draws,
        effects: effect_draws,
        effect_mean: effect_sum / keep as f64,
        tau: tau_draws,
        rho: None,
        acceptance,
        beta_tilde: None,
        fitted_mean: fitted_sum.into_iter().map(|s| s / keep as f64).collect(),
        warnings,
    })
}

/// Gibbs sampler for `y = Xβ + Bu + ε`, `ε ~ N(0, σ²I)`, `u ~ N{0, (τP)⁻¹}`. Dense; small `n` only.
#[allow(clippy::too_many_arguments)]
fn gaussian_gibbs(
    y: &[f64],
    x: &DMatrix<f64>,
    design: &DMatrix<f64>,
    penalty: &DMatrix<f64>,
    noise_var: f64,
    spec: &MixedModelSpec,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorSamples> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, p) = x.shape();
    let m = design.ncols();
    let yv = DVector::from_column_slice(y);
    let mut beta_prec = x.transpose() * x / noise_var;
    for j in 0..p {
        beta_prec[(j, j)] += 1.0 / spec.prior_beta_var;
    }
    let beta_chol = cholesky(&beta_prec, "beta conditional precision")?;
    let btb = design.transpose() * design / noise_var;
    let mut u = DVector::<f64>::zeros(m);
    let mut tau = spec.fixed_tau.unwrap_or(1.0);

    let keep = (iterations - burn_in) / spec.thin;
    let mut beta_draws = DMatrix::zeros(keep, p);
    let mut effect_draws = if spec.store_effects {
        DMatrix::zeros(keep, m)
    } else {
        DMatrix::zeros(0, m)
    };
    let mut effect_sum = DVector::zeros(m);
    let mut tau_draws = Vec::with_capacity(keep);
    let mut fitted_sum = DVector::zeros(n);
    let mut k = 0;
    let mut u_chol = None;
    for it in 0..iterations {
        // β | u
        let r = &yv - design * &u;
        let mean = beta_chol.solve(&(x.transpose() * r / noise_var));
        let beta = mean + draw_with_precision(&beta_chol, &mut rng);
        // u | β, τ; the factorization is reused while τ is fixed
        if m > 0 {
            if u_chol.is_none() || spec.fixed_tau.is_none() {
                u_chol = Some(cholesky(&(&btb + penalty * tau), "effect conditional precision")?);
            }
            let chol = u_chol.as_ref().unwrap();
            let r = &yv - x * &beta;
            let mean = chol.solve(&(design.transpose() * r / noise_var));
            u = mean + draw_with_precision(chol, &mut rng);
            if spec.fixed_tau.is_none() {
                let quad = u.dot(&(penalty * &u));
                tau = tau_conditional_from_quad(m, quad, spec.tau_shape, spec.tau_scale).sample(&mut rng);
            }
        }
        if it >= burn_in && (it - burn_in + 1) % spec.thin == 0 && k < keep {
            beta_draws.set_row(k, &beta.transpose());
            if spec.store_effects {
                effect_draws.set_row(k, &u.transpose());
            }
            effect_sum += &u;
            fitted_sum += x * &beta + design * &u;
            tau_draws.push(tau);
            k += 1;
        }
    }
    let rho = match (spec.kind, spec.rho) {
        (ModelKind::Car, RhoPrior::Fixed(r)) => Some(vec![r; keep]),
        _ => None,
    };
    Ok(PosteriorSamples {
        spec: spec.clone(),
        seed,
        iterations,
        burn_in,
        beta: beta_draws,
        effects: effect_draws,
        effect_mean: effect_sum / keep as f64,
        tau: tau_draws,
        rho,
        acceptance: BTreeMap::new(),
        beta_tilde: None,
        fitted_mean: (fitted_sum / keep as f64).iter().copied().collect(),
        warnings: Vec::new(),
    })
}

/// A draw from `N(0, P⁻¹)` given the Cholesky factor `P = LL'`: solve `L'x = ε`.
fn draw_with_precision(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let eps = standard_normals(rng, chol.l_dirty().nrows());
    chol.l()
        .transpose()
        .solve_upper_triangular(&eps)
        .expect("Cholesky factor has a positive diagonal")
}

/// `(X'X)⁻¹X' Q⁺ X (X'X)⁻¹`, `Q⁺` the Moore–Penrose inverse of the graph Laplacian.
///
/// Uses `Q⁺ = (Q + 11'/n)⁻¹ - 11'/n`, valid for a connected graph.
pub fn adjustment_kernel(x: &DMatrix<f64>, graph: &ArealGraph) -> Result<DMatrix<f64>> {
    let n = graph.n();
    if x.nrows() != n {
        return Err(Error::dim("X rows differ from the number of vertices"));
    }
    let xtx = x.transpose() * x;
    let h = spd_inverse(&xtx, "X'X")? * x.transpose();
    let shifted = laplacian(graph).add_scalar(1.0 / n as f64);
    let chol = cholesky(&shifted, "shifted Laplacian (is the graph connected?)")?;
    let ht = h.transpose();
    let mut qp = chol.solve(&ht);
    for j in 0..qp.ncols() {
        let s = ht.column(j).sum() / n as f64;
        qp.column_mut(j).add_scalar_mut(-s);
    }
    Ok(symmetrize(&h * qp))
}

/// Posterior-predictive draws `β̃⁽ᵏ⁾ ~ N{δ⁽ᵏ⁾, (X'X)⁻¹X'Σ⁽ᵏ⁾X(X'X)⁻¹}` with `Σ⁽ᵏ⁾ = (τ⁽ᵏ⁾Q)⁺`,
/// the covariance of the unrestricted spatial effect at the sampled `τ`.
pub fn adjusted_beta(samples: &PosteriorSamples, x: &DMatrix<f64>, graph: &ArealGraph, seed: u64) -> Result<DMatrix<f64>> {
    let kernel = adjustment_kernel(x, graph)?;
    adjusted_beta_with(samples, &kernel, seed)
}

/// As [`adjusted_beta`] with a precomputed [`adjustment_kernel`].
pub fn adjusted_beta_with(samples: &PosteriorSamples, kernel: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    let p = samples.beta.ncols();
    if kernel.nrows() != p {
        return Err(Error::dim("adjustment kernel size differs from the number of coefficients"));
    }
    let l = match cholesky(kernel, "adjustment kernel") {
        Ok(c) => c.l(),
        Err(_) => DMatrix::zeros(p, p),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = samples.beta.clone();
    for k in 0..samples.draws() {
        let sd = (1.0 / samples.tau[k]).sqrt();
        let noise = &l * standard_normals(&mut rng, p) * sd;
        for j in 0..p {
            out[(k, j)] += noise[j];
        }
    }
    Ok(out)
}

/// Identity check `Xβ + ψ = Xδ + (I - P_x)ψ`, `δ = β + (X'X)⁻¹X'ψ`.
#[derive(Clone, Debug)]
pub struct DecompositionReport {
    pub delta: DVector<f64>,
    /// `(I - P_x)ψ`.
    pub residual_effect: DVector<f64>,
    pub max_abs_error: f64,
}

pub fn decomposition_check(x: &DMatrix<f64>, beta: &DVector<f64>, psi: &DVector<f64>) -> Result<DecompositionReport> {
    if x.ncols() != beta.len() || x.nrows() != psi.len() {
        return Err(Error::dim("X, beta and psi sizes disagree"));
    }
    let xtx = x.transpose() * x;
    let coef = cholesky(&xtx, "X'X")
        .map_err(|_| Error::RankDeficient { column: x.ncols() - 1 })?
        .solve(&(x.transpose() * psi));
    let delta = beta + &coef;
    let residual_effect = psi - x * &coef;
    let lhs = x * beta + psi;
    let rhs = x * &delta + &residual_effect;
    Ok(DecompositionReport {
        max_abs_error: (lhs - rhs).amax(),
        delta,
        residual_effect,
    })
}

fn summarize(draws: &DMatrix<f64>, level: f64) -> (Vec<f64>, Vec<Interval>) {
    let mut est = Vec::new();
    let mut ints = Vec::new();
    for j in 0..draws.ncols() {
        let col: Vec<f64> = draws.column(j).iter().copied().collect();
        est.push(median(&col));
        let (lo, hi) = equal_tailed(&col, level);
        ints.push(Interval::new(lo, hi));
    }
    (est, ints)
}

/// Posterior medians and equal-tailed credible intervals for β (and τ, ρ), with `p̂` the
/// posterior mean fitted probability. Uses the adjusted draws when present.
pub fn posterior_summary(samples: &PosteriorSamples, level: f64) -> Result<FitResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("credible level must lie in (0, 1), got {level}")));
    }
    if samples.draws() == 0 {
        return Err(Error::invalid("no retained draws"));
    }
    let mut warnings = samples.warnings.clone();
    if samples.draws() < 500 {
        warnings.push(format!("only {} retained draws (fewer than 500)", samples.draws()));
    }
    let (draws, method) = match &samples.beta_tilde {
        Some(bt) => (bt, Method::RsrAdjusted),
        None => (&samples.beta, samples.spec.method()),
    };
    let (mut estimates, mut intervals) = summarize(draws, level);
    let mut names = beta_names(draws.ncols());
    let tau = DMatrix::from_column_slice(samples.tau.len(), 1, &samples.tau);
    let (e, i) = summarize(&tau, level);
    names.push("tau".into());
    estimates.extend(e);
    intervals.extend(i);
    if let Some(rho) = &samples.rho {
        let r = DMatrix::from_column_slice(rho.len(), 1, rho);
        let (e, i) = summarize(&r, level);
        names.push("rho".into());
        estimates.extend(e);
        intervals.extend(i);
    }
    Ok(FitResult {
        method,
        param_names: names,
        estimates,
        intervals,
        converged: true,
        iterations: samples.iterations,
        p_hat: samples.fitted_mean.clone(),
        warnings,
    })
}

#[derive(Serialize, Deserialize)]
struct Meta {
    spec: MixedModelSpec,
    seed: u64,
    iterations: usize,
    burn_in: usize,
    acceptance: BTreeMap<String, f64>,
    #[serde(default)]
    warnings: Vec<String>,
    fitted_mean: Vec<f64>,
    effect_mean: Vec<f64>,
}

fn write_matrix(path: &Path, prefix: &str, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("{prefix}{j}")).collect();
    w.write_record(&header)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let cols = r.headers()?.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        for f in rec.iter() {
            data.push(f.parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

impl PosteriorSamples {
    /// Write `beta.csv`, `eta.csv`, `tau.csv`, optional `rho.csv` and `beta_tilde.csv`, and `meta.json`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_matrix(&dir.join("beta.csv"), "beta", &self.beta)?;
        write_matrix(&dir.join("eta.csv"), "effect", &self.effects)?;
        write_matrix(&dir.join("tau.csv"), "tau", &DMatrix::from_column_slice(self.tau.len(), 1, &self.tau))?;
        if let Some(rho) = &self.rho {
            write_matrix(&dir.join("rho.csv"), "rho", &DMatrix::from_column_slice(rho.len(), 1, rho))?;
        }
        if let Some(bt) = &self.beta_tilde {
            write_matrix(&dir.join("beta_tilde.csv"), "beta_tilde", bt)?;
        }
        let meta = Meta {
            spec: self.spec.clone(),
            seed: self.seed,
            iterations: self.iterations,
            burn_in: self.burn_in,
            acceptance: self.acceptance.clone(),
            warnings: self.warnings.clone(),
            fitted_mean: self.fitted_mean.clone(),
            effect_mean: self.effect_mean.iter().copied().collect(),
        };
        std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: Meta = serde_json::from_str(&std::fs::read_to_string(dir.join("meta.json"))?)?;
        let beta = read_matrix(&dir.join("beta.csv"))?;
        let effects = read_matrix(&dir.join("eta.csv"))?;
        let tau = read_matrix(&dir.join("tau.csv"))?.iter().copied().collect();
        let rho_path = dir.join("rho.csv");
        let rho = if rho_path.exists() {
            Some(read_matrix(&rho_path)?.iter().copied().collect())
        } else {
            None
        };
        let bt_path = dir.join("beta_tilde.csv");
        let beta_tilde = if bt_path.exists() { Some(read_matrix(&bt_path)?) } else { None };
        Ok(Self {
            spec: meta.spec,
            seed: meta.seed,
            iterations: meta.iterations,
            burn_in: meta.burn_in,
            beta,
            effects,
            effect_mean: DVector::from_vec(meta.effect_mean),
            tau,
            rho,
            acceptance: meta.acceptance,
            beta_tilde,
            fitted_mean: meta.fitted_mean,
            warnings: meta.warnings,
        })
    }
}
