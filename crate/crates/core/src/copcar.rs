//! CAR copula model for binary outcomes, fit by adjacent-pair composite marginal likelihood.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{beta_names, FitResult, Interval, Method};
use crate::glm::{fit_logistic, logistic};
use crate::graph::{car_precision, ArealGraph};
use crate::linalg::{spd_inverse, BandCholesky, BandSymmetric};
use crate::normal::{bvn_cdf, norm_cdf, norm_quantile};
use crate::optim::{bfgs_minimize, numerical_gradient, numerical_hessian, BfgsOptions};

/// Bound on `|Φ⁻¹(ρ)|` during optimization.
pub const PHI_INV_RHO_BOUND: f64 = 8.0;
/// Smallest pair probability admitted into the log.
pub const PAIR_FLOOR: f64 = 1e-300;

const GRAD_STEP: f64 = 1e-6;
const HESS_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CopParams {
    pub beta: DVector<f64>,
    pub rho: f64,
}

impl CopParams {
    pub fn new(beta: Vec<f64>, rho: f64) -> Self {
        Self {
            beta: DVector::from_vec(beta),
            rho,
        }
    }

    /// `(β', Φ⁻¹(ρ))'`.
    pub fn theta(&self) -> DVector<f64> {
        let p = self.beta.len();
        DVector::from_fn(p + 1, |i, _| if i < p { self.beta[i] } else { norm_quantile(self.rho) })
    }

    pub fn from_theta(theta: &DVector<f64>) -> Self {
        let p = theta.len() - 1;
        Self {
            beta: theta.rows(0, p).into_owned(),
            rho: norm_cdf(theta[p]),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CarMarginals {
    pub sigma2: Vec<f64>,
}

/// Band factorization of `Q = diag(A1) - ρA` with the in-band entries of `Q⁻¹`.
#[derive(Clone, Debug)]
pub struct CarCovariance {
    pub rho: f64,
    chol: BandCholesky,
    inv: BandSymmetric,
    sigma: Vec<f64>,
}

impl CarCovariance {
    pub fn new(graph: &ArealGraph, rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::invalid(format!("rho must lie in [0, 1), got {rho}")));
        }
        let a = graph.adjacency();
        let d = graph.degrees();
        if d.iter().any(|&v| v == 0.0) {
            return Err(Error::invalid("CAR precision needs every vertex to have a neighbor"));
        }
        let chol = BandCholesky::factor(graph.n(), graph.bandwidth(), |i, j| {
            if i == j {
                d[i]
            } else {
                -rho * a[(i, j)]
            }
        })?;
        let inv = chol.selected_inverse();
        let sigma = inv.diagonal().into_iter().map(f64::sqrt).collect();
        Ok(Self { rho, chol, inv, sigma })
    }

    pub fn marginals(&self) -> CarMarginals {
        CarMarginals {
            sigma2: self.sigma.iter().map(|s| s * s).collect(),
        }
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `(Q⁻¹)_{ij}` for `|i - j|` within the graph bandwidth.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.inv.get(i, j)
    }

    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.inv.get(i, j) / (self.sigma[i] * self.sigma[j])
    }

    /// Draw `ψ ~ N(0, Q⁻¹)` and return `ψ_i / σ_i`.
    pub fn standardized_draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let eps: Vec<f64> = (0..self.sigma.len()).map(|_| StandardNormal.sample(rng)).collect();
        let psi = self.chol.solve_upper(&eps);
        psi.iter().zip(&self.sigma).map(|(p, s)| p / s).collect()
    }
}

/// Diagonal of `Q⁻¹` for the CAR precision at `rho`.
pub fn car_marginals(graph: &ArealGraph, rho: f64) -> Result<CarMarginals> {
    Ok(CarCovariance::new(graph, rho)?.marginals())
}

fn check_design(graph: &ArealGraph, x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<()> {
    if x.nrows() != graph.n() {
        return Err(Error::dim(format!("X has {} rows, graph has {} vertices", x.nrows(), graph.n())));
    }
    if x.ncols() != beta.len() {
        return Err(Error::dim(format!("X has {} columns, beta has {} entries", x.ncols(), beta.len())));
    }
    Ok(())
}

/// One copCAR draw using a precomputed CAR factorization.
pub fn simulate_copcar_with(cov: &CarCovariance, beta: &DVector<f64>, x: &DMatrix<f64>, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = cov.standardized_draw(&mut rng);
    let pi = (x * beta).map(logistic);
    // Z = F⁻¹(Φ(u)) = 1 exactly when Φ(u) > 1 - π, i.e. u > Φ⁻¹(1 - π)
    u.iter()
        .zip(pi.iter())
        .map(|(&ui, &p)| if norm_cdf(ui) > 1.0 - p { 1.0 } else { 0.0 })
        .collect()
}

pub fn simulate_copcar(params: &CopParams, graph: &ArealGraph, x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
    check_design(graph, x, &params.beta)?;
    let cov = CarCovariance::new(graph, params.rho)?;
    Ok(simulate_copcar_with(&cov, &params.beta, x, seed))
}

/// Counts from the hierarchical gamma–Poisson copula: `λ_i ~ Gamma(νμ_i, rate ν)` coupled
/// through the CAR correlation, `Z_i | λ_i ~ Poisson(λ_i)`, `μ = exp(Xβ)`.
pub fn simulate_gamma_poisson(
    beta: &DVector<f64>,
    nu: f64,
    graph: &ArealGraph,
    x: &DMatrix<f64>,
    rho: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(nu > 0.0) {
        return Err(Error::invalid(format!("gamma shape multiplier must be positive, got {nu}")));
    }
    check_design(graph, x, beta)?;
    let cov = CarCovariance::new(graph, rho)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = cov.standardized_draw(&mut rng);
    let mu = (x * beta).map(f64::exp);
    let mut out = Vec::with_capacity(u.len());
    for (i, &ui) in u.iter().enumerate() {
        let lambda = crate::stats::gamma_quantile(nu * mu[i], nu, norm_cdf(ui).clamp(1e-300, 1.0 - 1e-16));
        if !lambda.is_finite() {
            return Err(Error::invalid(format!("gamma quantile overflowed at site {i}")));
        }
        let z = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng)
        } else {
            0.0
        };
        out.push(z);
    }
    Ok(out)
}

/// `P(l_1 < X ≤ u_1, l_2 < Y ≤ u_2)` for a standard bivariate normal with correlation `r`.
///
/// A coordinate with an infinite endpoint is reflected so the rectangle reduces to a
/// single cdf evaluation where possible; otherwise inclusion–exclusion is used.
pub fn rectangle_prob(lo: (f64, f64), hi: (f64, f64), r: f64) -> f64 {
    let (mut a, mut b, mut r) = (lo, hi, r);
    // reflect (l, +∞) into (-∞, -l]
    if b.0 == f64::INFINITY && a.0 > f64::NEG_INFINITY {
        a.0 = f64::NEG_INFINITY;
        b.0 = -lo.0;
        r = -r;
    }
    if b.1 == f64::INFINITY && a.1 > f64::NEG_INFINITY {
        a.1 = f64::NEG_INFINITY;
        b.1 = -lo.1;
        r = -r;
    }
    let mut total = 0.0;
    for (j1, x) in [(0, b.0), (1, a.0)] {
        if x == f64::NEG_INFINITY {
            continue;
        }
        for (j2, y) in [(0, b.1), (1, a.1)] {
            if y == f64::NEG_INFINITY {
                continue;
            }
            let sign = if (j1 + j2) % 2 == 0 { 1.0 } else { -1.0 };
            total += sign * bvn_cdf(x, y, r);
        }
    }
    total
}

/// Standardized limits `(Φ⁻¹{F(z-1)}, Φ⁻¹{F(z)})` for a Bernoulli(π) outcome.
#[inline]
fn bernoulli_limits(z: f64, pi: f64) -> (f64, f64) {
    let t = norm_quantile(1.0 - pi);
    if z == 0.0 {
        (f64::NEG_INFINITY, t)
    } else {
        (t, f64::INFINITY)
    }
}

/// Probability that a pair of outcomes takes the observed values.
pub fn pair_probability(zi: f64, zj: f64, pi_i: f64, pi_j: f64, r: f64) -> f64 {
    let (li, ui) = bernoulli_limits(zi, pi_i);
    let (lj, uj) = bernoulli_limits(zj, pi_j);
    rectangle_prob((li, lj), (ui, uj), r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pairs {
    Adjacent,
    All,
}

/// Correlations for the pairs entering the CML.
enum PairCorrelation {
    Band(CarCovariance),
    Dense(DMatrix<f64>),
}

impl PairCorrelation {
    fn new(graph: &ArealGraph, rho: f64, pairs: Pairs) -> Result<Self> {
        Ok(match pairs {
            Pairs::Adjacent => PairCorrelation::Band(CarCovariance::new(graph, rho)?),
            Pairs::All => {
                let inv = spd_inverse(&car_precision(graph, rho)?, "CAR precision")?;
                let s: Vec<f64> = (0..graph.n()).map(|i| inv[(i, i)].sqrt()).collect();
                PairCorrelation::Dense(DMatrix::from_fn(graph.n(), graph.n(), |i, j| inv[(i, j)] / (s[i] * s[j])))
            }
        })
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            PairCorrelation::Band(c) => c.correlation(i, j),
            PairCorrelation::Dense(m) => m[(i, j)],
        }
    }
}

/// Composite likelihood evaluator that caches the CAR factorization for the last few `ρ`.
pub struct Cml<'a> {
    z: &'a [f64],
    graph: &'a ArealGraph,
    x: &'a DMatrix<f64>,
    pairs: Pairs,
    pair_list: Vec<(usize, usize)>,
    cache: RefCell<Vec<(u64, Arc<PairCorrelation>)>>,
    floored: RefCell<usize>,
}

impl<'a> Cml<'a> {
    pub fn new(z: &'a [f64], graph: &'a ArealGraph, x: &'a DMatrix<f64>, pairs: Pairs) -> Result<Self> {
        if z.len() != graph.n() || x.nrows() != graph.n() {
            return Err(Error::dim("Z, X and graph sizes disagree"));
        }
        crate::autologistic::check_binary(z)?;
        let pair_list = match pairs {
            Pairs::Adjacent => graph.edges().to_vec(),
            Pairs::All => {
                let n = graph.n();
                (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect()
            }
        };
        Ok(Self {
            z,
            graph,
            x,
            pairs,
            pair_list,
            cache: RefCell::new(Vec::new()),
            floored: RefCell::new(0),
        })
    }

    pub fn pair_count(&self) -> usize {
        self.pair_list.len()
    }

    /// Number of pair probabilities floored at [`PAIR_FLOOR`] so far.
    pub fn floored(&self) -> usize {
        *self.floored.borrow()
    }

    fn correlations(&self, rho: f64) -> Result<Arc<PairCorrelation>> {
        let key = rho.to_bits();
        if let Some((_, c)) = self.cache.borrow().iter().find(|(k, _)| *k == key) {
            return Ok(c.clone());
        }
        let c = Arc::new(PairCorrelation::new(self.graph, rho, self.pairs)?);
        let mut cache = self.cache.borrow_mut();
        if cache.len() >= 8 {
            cache.remove(0);
        }
        cache.push((key, c.clone()));
        Ok(c)
    }

    /// Log composite likelihood at `(β, ρ)`.
    pub fn value(&self, beta: &DVector<f64>, rho: f64) -> Result<f64> {
        if beta.len() != self.x.ncols() {
            return Err(Error::dim("beta length differs from the number of design columns"));
        }
        let corr = self.correlations(rho)?;
        let pi = (self.x * beta).map(logistic);
        let mut total = 0.0;
        let mut floored = 0;
        for &(i, j) in &self.pair_list {
            let p = pair_probability(self.z[i], self.z[j], pi[i], pi[j], corr.get(i, j));
            if p <= PAIR_FLOOR {
                floored += 1;
                total += PAIR_FLOOR.ln();
            } else {
                total += p.ln();
            }
        }
        *self.floored.borrow_mut() += floored;
        Ok(total)
    }

    /// Log composite likelihood at `θ = (β', Φ⁻¹(ρ))'`; `-∞` outside the admissible box.
    pub fn value_theta(&self, theta: &DVector<f64>) -> f64 {
        let p = theta.len() - 1;
        if !(theta[p].abs() < PHI_INV_RHO_BOUND) {
            return f64::NEG_INFINITY;
        }
        let params = CopParams::from_theta(theta);
        self.value(&params.beta, params.rho).unwrap_or(f64::NEG_INFINITY)
    }

    /// Log composite likelihood at `(β', ρ)'`; `-∞` outside `[0, 1)`.
    pub fn value_direct(&self, v: &DVector<f64>) -> f64 {
        let p = v.len() - 1;
        if !(0.0..1.0).contains(&v[p]) {
            return f64::NEG_INFINITY;
        }
        self.value(&v.rows(0, p).into_owned(), v[p]).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Log composite likelihood of `Z` over adjacent or all pairs.
pub fn cml(params: &CopParams, z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>, pairs: Pairs) -> Result<f64> {
    check_design(graph, x, &params.beta)?;
    Cml::new(z, graph, x, pairs)?.value(&params.beta, params.rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinates {
    /// Optimize over `Φ⁻¹(ρ)`.
    Transformed,
    /// Optimize over `ρ` itself.
    Direct,
}

#[derive(Clone, Debug)]
pub struct CmlOptions {
    pub pairs: Pairs,
    pub coordinates: Coordinates,
    /// Simulated score replicates for `Ĵ`; `0` skips interval estimation.
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
    pub gtol: f64,
}

impl Default for CmlOptions {
    fn default() -> Self {
        Self {
            pairs: Pairs::Adjacent,
            coordinates: Coordinates::Transformed,
            bootstrap: 500,
            level: 0.95,
            seed: 1,
            gtol: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CmlFit {
    pub params: CopParams,
    /// `θ̂ = (β̂', Φ⁻¹(ρ̂))'`.
    pub theta: DVector<f64>,
    pub log_cml: f64,
    pub iterations: usize,
    /// Godambe covariance of `θ̂`, when intervals were requested.
    pub covariance: Option<DMatrix<f64>>,
    pub result: FitResult,
}

/// Maximize the composite likelihood and attach Godambe intervals.
pub fn fit_cml(z: &[f64], graph: &ArealGraph, x: &DMatrix<f64>, opts: &CmlOptions) -> Result<CmlFit> {
    let p = x.ncols();
    check_design(graph, x, &DVector::zeros(p))?;
    crate::moran::column_space_basis(x)?;
    let obj = Cml::new(z, graph, x, opts.pairs)?;
    let mut warnings = Vec::new();
    let beta0 = match fit_logistic(x, z, 0.0) {
        Ok(f) => f.coefficients,
        Err(_) => {
            warnings.push("ordinary logistic start failed (separation); using a ridge-regularized start".into());
            fit_logistic(x, z, 1.0)?.coefficients
        }
    };
    let bopts = BfgsOptions {
        max_iter: 500,
        gtol: opts.gtol,
        ftol: 0.0,
    };
    let (theta, iterations) = match opts.coordinates {
        Coordinates::Transformed => {
            let start = DVector::from_fn(p + 1, |i, _| if i < p { beta0[i] } else { norm_quantile(0.5) });
            let f = |t: &DVector<f64>| {
                let v = -obj.value_theta(t);
                let g = if v.is_finite() {
                    -numerical_gradient(|u| obj.value_theta(u), t, GRAD_STEP)
                } else {
                    DVector::from_element(t.len(), f64::NAN)
                };
                (v, g)
            };
            let r = bfgs_minimize(f, start, &bopts);
            if !r.converged {
                return Err(Error::NonConvergence {
                    iterations: r.iterations,
                    last: r.x.as_slice().to_vec(),
                });
            }
            (r.x, r.iterations)
        }
        Coordinates::Direct => {
            let start = DVector::from_fn(p + 1, |i, _| if i < p { beta0[i] } else { 0.5 });
            let f = |t: &DVector<f64>| {
                let v = -obj.value_direct(t);
                let step = GRAD_STEP.min(0.5 * (1.0 - t[p])).min(0.5 * t[p].max(1e-12));
                let g = if v.is_finite() && step > 0.0 {
                    -numerical_gradient(|u| obj.value_direct(u), t, step)
                } else {
                    DVector::from_element(t.len(), f64::NAN)
                };
                (v, g)
            };
            let r = bfgs_minimize(f, start, &bopts);
            if !r.converged {
                return Err(Error::NonConvergence {
                    iterations: r.iterations,
                    last: r.x.as_slice().to_vec(),
                });
            }
            let mut t = r.x;
            t[p] = norm_quantile(t[p]);
            (t, r.iterations)
        }
    };
    let params = CopParams::from_theta(&theta);
    let log_cml = obj.value(&params.beta, params.rho)?;
    if obj.floored() > 0 {
        warnings.push(format!("{} pair probabilities floored at {PAIR_FLOOR:e}", obj.floored()));
    }
    let at_boundary = theta[p] <= -PHI_INV_RHO_BOUND + 0.5 || theta[p] >= PHI_INV_RHO_BOUND - 0.5;
    if at_boundary {
        warnings.push(format!("rho estimate {:.3e} lies at the boundary of its range", params.rho));
    }

    let mut names = beta_names(p);
    names.push("rho".into());
    names.push("phi_inv_rho".into());
    let mut estimates: Vec<f64> = params.beta.iter().copied().collect();
    estimates.push(params.rho);
    estimates.push(theta[p]);

    let mut covariance = None;
    let mut intervals = Vec::new();
    if opts.bootstrap > 0 {
        let cov = godambe_covariance(&obj, &theta, graph, x, opts.bootstrap, opts.seed)?;
        let zq = norm_quantile(0.5 + opts.level / 2.0);
        for j in 0..p {
            let se = cov[(j, j)].sqrt();
            intervals.push(Interval::new(theta[j] - zq * se, theta[j] + zq * se));
        }
        let se = cov[(p, p)].sqrt();
        let t_int = if at_boundary && theta[p] < 0.0 {
            // one-sided: ρ ≥ 0 is known, only an upper bound is informative
            let z1 = norm_quantile(opts.level);
            Interval::new(f64::NEG_INFINITY, theta[p] + z1 * se)
        } else if at_boundary {
            let z1 = norm_quantile(opts.level);
            Interval::new(theta[p] - z1 * se, f64::INFINITY)
        } else {
            Interval::new(theta[p] - zq * se, theta[p] + zq * se)
        };
        intervals.push(Interval::new(norm_cdf(t_int.lower), norm_cdf(t_int.upper)));
        intervals.push(t_int);
        covariance = Some(cov);
    }
    let p_hat = (x * &params.beta).map(logistic).as_slice().to_vec();
    let result = FitResult {
        method: Method::Copcar,
        param_names: names,
        estimates,
        intervals,
        converged: true,
        iterations,
        p_hat,
        warnings,
    };
    Ok(CmlFit {
        params,
        theta,
        log_cml,
        iterations,
        covariance,
        result,
    })
}

/// `Î⁻¹ Ĵ Î⁻¹` in `θ` coordinates, `Ĵ` the sample covariance of `b` simulated scores.
fn godambe_covariance(
    obj: &Cml,
    theta: &DVector<f64>,
    graph: &ArealGraph,
    x: &DMatrix<f64>,
    b: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let k = theta.len();
    let info = -numerical_hessian(|t| obj.value_theta(t), theta, HESS_STEP);
    let inv = spd_inverse(&info, "CML information").map_err(|_| {
        Error::FitFailed("composite likelihood information is not positive definite".into())
    })?;
    let params = CopParams::from_theta(theta);
    let sim_cov = CarCovariance::new(graph, params.rho)?;
    // every score evaluation needs the factorizations at Φ⁻¹(ρ̂) and Φ⁻¹(ρ̂) ± h only
    let t = theta[k - 1];
    let mut shared = Vec::new();
    for tv in [t, t + GRAD_STEP, t - GRAD_STEP] {
        let rho = norm_cdf(tv);
        shared.push((rho.to_bits(), obj.correlations(rho)?));
    }
    let pairs = obj.pairs;
    let scores: Vec<Result<DVector<f64>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let zb = simulate_copcar_with(&sim_cov, &params.beta, x, seed.wrapping_add(r as u64));
            let ob = Cml::new(&zb, graph, x, pairs)?;
            *ob.cache.borrow_mut() = shared.clone();
            let g = numerical_gradient(|t| ob.value_theta(t), theta, GRAD_STEP);
            if g.iter().all(|v| v.is_finite()) {
                Ok(g)
            } else {
                Err(Error::FitFailed("non-finite bootstrap score".into()))
            }
        })
        .collect();
    let scores: Vec<DVector<f64>> = scores.into_iter().collect::<Result<_>>()?;
    let mean = scores.iter().fold(DVector::zeros(k), |acc, s| acc + s) / b as f64;
    let mut j = DMatrix::zeros(k, k);
    for s in &scores {
        let d = s - &mean;
        j += &d * d.transpose();
    }
    j /= (b - 1).max(1) as f64;
    Ok(crate::linalg::symmetrize(&inv * j * &inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_lattice;
    use crate::normal::norm_pdf;

    fn design(l: &crate::graph::Lattice) -> DMatrix<f64> {
        DMatrix::from_fn(l.graph.n(), 2, |i, j| if j == 0 { 1.0 } else { l.x[i] })
    }

    /// Rectangle probability by adaptive-free tensor Gauss–Legendre on the conditional form
    /// `∫_{l1}^{u1} φ(s) [Φ((u2 - r s)/√(1-r²)) - Φ((l2 - r s)/√(1-r²))] ds`.
    fn rectangle_quadrature(lo: (f64, f64), hi: (f64, f64), r: f64) -> f64 {
        let a = lo.0.max(-12.0);
        let b = hi.0.min(12.0);
        let s = (1.0 - r * r).sqrt();
        let panels = 600;
        let w = (b - a) / panels as f64;
        // 5-point Gauss–Legendre
        let nodes = [
            (0.0, 128.0 / 225.0),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let mut total = 0.0;
        for k in 0..panels {
            let mid = a + (k as f64 + 0.5) * w;
            for &(x, wt) in &nodes {
                let t = mid + x * w / 2.0;
                let upper = if hi.1 == f64::INFINITY { 1.0 } else { norm_cdf((hi.1 - r * t) / s) };
                let lower = if lo.1 == f64::NEG_INFINITY { 0.0 } else { norm_cdf((lo.1 - r * t) / s) };
                total += wt * w / 2.0 * norm_pdf(t) * (upper - lower);
            }
        }
        total
    }

    #[test]
    fn marginals_at_zero_and_dense() {
        let l = build_lattice(3, 4).unwrap();
        let m = car_marginals(&l.graph, 0.0).unwrap();
        for (s, d) in m.sigma2.iter().zip(l.graph.degrees()) {
            assert!((s - 1.0 / d).abs() < 1e-14);
        }
        let l = build_lattice(2, 2).unwrap();
        let q = car_precision(&l.graph, 0.5).unwrap();
        let inv = q.try_inverse().unwrap();
        let c = CarCovariance::new(&l.graph, 0.5).unwrap();
        for i in 0..4 {
            for &j in l.graph.neighbors(i) {
                assert!((c.covariance(i, j) - inv[(i, j)]).abs() < 1e-12);
            }
            assert!((c.marginals().sigma2[i] - inv[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn marginal_variances_increase_with_rho() {
        let l = build_lattice(4, 4).unwrap();
        let rhos = [0.0, 0.3, 0.6, 0.9];
        let ms: Vec<_> = rhos.iter().map(|&r| car_marginals(&l.graph, r).unwrap().sigma2).collect();
        for w in ms.windows(2) {
            assert!(w[0].iter().zip(&w[1]).all(|(a, b)| b > a));
        }
    }

    #[test]
    fn pair_terms_match_quadrature() {
        let l = build_lattice(3, 3).unwrap();
        let x = design(&l);
        let beta = DVector::from_vec(vec![0.3, 1.2]);
        let pi = (&x * &beta).map(logistic);
        let c = CarCovariance::new(&l.graph, 0.8).unwrap();
        for &(i, j) in l.graph.edges() {
            let r = c.correlation(i, j);
            for zi in [0.0, 1.0] {
                for zj in [0.0, 1.0] {
                    let (li, ui) = bernoulli_limits(zi, pi[i]);
                    let (lj, uj) = bernoulli_limits(zj, pi[j]);
                    let q = rectangle_quadrature((li, lj), (ui, uj), r);
                    let v = pair_probability(zi, zj, pi[i], pi[j], r);
                    assert!((q - v).abs() < 1e-8, "({i},{j}) z=({zi},{zj}): {v} vs {q}");
                }
            }
        }
    }

    #[test]
    fn finite_rectangle_inclusion_exclusion() {
        let (lo, hi, r) = ((-0.4, -1.0), (0.9, 0.3), -0.6);
        let v = rectangle_prob(lo, hi, r);
        assert!((v - rectangle_quadrature(lo, hi, r)).abs() < 1e-9);
    }

    #[test]
    fn independence_factorizes() {
        let l = build_lattice(3, 3).unwrap();
        let x = design(&l);
        let params = CopParams::new(vec![-0.2, 0.9], 0.0);
        let z = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let pi = (&x * &params.beta).map(logistic);
        let ll: Vec<f64> = (0..9).map(|i| if z[i] == 1.0 { pi[i].ln() } else { (1.0 - pi[i]).ln() }).collect();
        let expect: f64 = (0..9).map(|i| l.graph.degrees()[i] * ll[i]).sum();
        let v = cml(&params, &z, &l.graph, &x, Pairs::Adjacent).unwrap();
        assert!((v - expect).abs() < 1e-10);
        let all = cml(&params, &z, &l.graph, &x, Pairs::All).unwrap();
        assert!((all - 8.0 * ll.iter().sum::<f64>()).abs() < 1e-10);
    }

    #[test]
    fn pair_count_on_lattice() {
        let l = build_lattice(30, 30).unwrap();
        let z = vec![0.0; 900];
        let x = DMatrix::from_element(900, 1, 1.0);
        assert_eq!(Cml::new(&z, &l.graph, &x, Pairs::Adjacent).unwrap().pair_count(), 1740);
    }

    #[test]
    fn marginal_means_preserved() {
        let l = build_lattice(3, 3).unwrap();
        let x = design(&l);
        let params = CopParams::new(vec![0.2, 1.5], 0.9);
        let cov = CarCovariance::new(&l.graph, params.rho).unwrap();
        let draws = 10_000;
        let mut sums = vec![0.0; 9];
        for s in 0..draws {
            let z = simulate_copcar_with(&cov, &params.beta, &x, s);
            for i in 0..9 {
                sums[i] += z[i];
            }
        }
        let pi = (&x * &params.beta).map(logistic);
        for i in 0..9 {
            let m = sums[i] / draws as f64;
            let se = (pi[i] * (1.0 - pi[i]) / draws as f64).sqrt();
            assert!((m - pi[i]).abs() < 3.5 * se, "site {i}: {m} vs {}", pi[i]);
        }
    }

    #[test]
    fn p_hat_is_logistic_of_beta() {
        let l = build_lattice(6, 6).unwrap();
        let x = design(&l);
        let z = simulate_copcar(&CopParams::new(vec![0.2, 1.0], 0.7), &l.graph, &x, 9).unwrap();
        let opts = CmlOptions {
            bootstrap: 0,
            ..Default::default()
        };
        let fit = fit_cml(&z, &l.graph, &x, &opts).unwrap();
        let expect = (&x * &fit.params.beta).map(logistic);
        assert_eq!(fit.result.p_hat, expect.as_slice().to_vec());
    }
}
