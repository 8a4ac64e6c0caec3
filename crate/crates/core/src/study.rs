//! Simulation design with an unmeasured spatial confounder, a replication driver over
//! every model, and the summary table.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autologistic::{bootstrap_ci, fit_mple, sandwich_ci};
use crate::bayes::{
    adjusted_beta_with, adjustment_kernel, fit_basis_mcmc_with, fit_car_mcmc_with, model_basis, posterior_summary, CarSpectrum,
    MixedModelSpec, ModelKind, PosteriorSamples, RhoPrior,
};
use crate::copcar::{fit_cml, CmlOptions};
use crate::error::{Error, Result};
use crate::fit::{beta_names, FitResult, Interval, Method};
use crate::glm::{fit_logistic, logistic};
use crate::graph::{build_lattice, ArealGraph, Lattice};
use crate::moran::MoranBasis;
use crate::normal::norm_quantile;
use crate::stats::{mean, median};

/// Target sample correlation between `x₁` and `x₂`.
pub const TARGET_CORRELATION: f64 = 0.45;
const CORRELATION_TOL: f64 = 0.005;

/// Fixed covariates and true mean surface of the design.
#[derive(Clone, Debug)]
pub struct Covariates {
    pub lattice: Lattice,
    pub x1: Vec<f64>,
    /// Withheld confounder `x + y + 3s`.
    pub x2: Vec<f64>,
    pub s: Vec<f64>,
    pub p: Vec<f64>,
    /// Amplitude of `s`.
    pub amplitude: f64,
    pub beta_true: [f64; 3],
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (u, v) in a.iter().zip(b) {
        sab += (u - ma) * (v - mb);
        saa += (u - ma) * (u - ma);
        sbb += (v - mb) * (v - mb);
    }
    sab / (saa * sbb).sqrt()
}

pub fn generate_covariates(rows: usize, cols: usize) -> Result<Covariates> {
    generate_covariates_with(rows, cols, [0.2, 1.0, 1.0])
}

/// `s = c·sin(3πx)·sin(3πy)` with `c` chosen so that `cor(x₁, x₂) = 0.45`.
pub fn generate_covariates_with(rows: usize, cols: usize, beta_true: [f64; 3]) -> Result<Covariates> {
    let lattice = build_lattice(rows, cols)?;
    let n = lattice.graph.n();
    let s0: Vec<f64> = (0..n).map(|i| (3.0 * PI * lattice.x[i]).sin() * (3.0 * PI * lattice.y[i]).sin()).collect();
    let x1 = lattice.x.clone();
    let x2_of = |c: f64| -> Vec<f64> { (0..n).map(|i| lattice.x[i] + lattice.y[i] + 3.0 * c * s0[i]).collect() };
    let cor_of = |c: f64| correlation(&x1, &x2_of(c));
    let (mut lo, mut hi) = (0.0, 10.0);
    let (clo, chi) = (cor_of(lo), cor_of(hi));
    if !(clo.is_finite() && chi.is_finite()) || !(clo > TARGET_CORRELATION && chi < TARGET_CORRELATION) {
        return Err(Error::invalid(format!(
            "cannot calibrate the confounder on a {rows}x{cols} lattice: correlation ranges over [{chi:.4}, {clo:.4}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cor_of(mid) > TARGET_CORRELATION {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let amplitude = 0.5 * (lo + hi);
    let achieved = cor_of(amplitude);
    if (achieved - TARGET_CORRELATION).abs() > CORRELATION_TOL {
        return Err(Error::invalid(format!("confounder calibration reached correlation {achieved:.5}")));
    }
    let x2 = x2_of(amplitude);
    let s: Vec<f64> = s0.iter().map(|v| amplitude * v).collect();
    let p = (0..n)
        .map(|i| logistic(beta_true[0] + beta_true[1] * x1[i] + beta_true[2] * x2[i]))
        .collect();
    Ok(Covariates {
        lattice,
        x1,
        x2,
        s,
        p,
        amplitude,
        beta_true,
    })
}

impl Covariates {
    /// The analysis design `(1, x₁)`; `x₂` is never part of it.
    pub fn design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.x1.len(), 2, |i, j| if j == 0 { 1.0 } else { self.x1[i] })
    }

    pub fn graph(&self) -> &ArealGraph {
        &self.lattice.graph
    }
}

/// One simulated response.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub covariates: Covariates,
    pub z: Vec<f64>,
}

pub fn simulate_replicate(covariates: &Covariates, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = covariates
        .p
        .iter()
        .map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        .collect();
    Dataset {
        covariates: covariates.clone(),
        z,
    }
}

/// Columns: `id,row,col,x,y,x1,x2,s,p,z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub x: f64,
    pub y: f64,
    pub x1: f64,
    pub x2: f64,
    pub s: f64,
    pub p: f64,
    pub z: f64,
}

impl Dataset {
    pub fn rows(&self) -> Vec<DataRow> {
        let c = &self.covariates;
        let cols = c.lattice.cols;
        (0..self.z.len())
            .map(|i| DataRow {
                id: i,
                row: i / cols,
                col: i % cols,
                x: c.lattice.x[i],
                y: c.lattice.y[i],
                x1: c.x1[i],
                x2: c.x2[i],
                s: c.s[i],
                p: c.p[i],
                z: self.z[i],
            })
            .collect()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in self.rows() {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Read rows written by [`Dataset::write_csv`] (or any CSV with those columns).
pub fn read_data_csv(path: impl AsRef<Path>) -> Result<Vec<DataRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows: std::result::Result<Vec<DataRow>, _> = r.deserialize().collect();
    Ok(rows?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoInterval {
    Sandwich,
    Bootstrap,
    Naive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

/// Interval and sampler settings shared by every fitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSettings {
    pub level: f64,
    pub autologistic_interval: AutoInterval,
    /// Simulated datasets behind the autologistic sandwich or bootstrap.
    pub autologistic_b: usize,
    /// Simulated score replicates behind the copCAR Godambe information.
    pub copcar_bootstrap: usize,
    pub basis_mcmc: McmcSettings,
    pub car_mcmc: McmcSettings,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            level: 0.95,
            autologistic_interval: AutoInterval::Sandwich,
            autologistic_b: 500,
            copcar_bootstrap: 500,
            basis_mcmc: McmcSettings {
                iterations: 25_000,
                burn_in: 5_000,
                thin: 5,
            },
            car_mcmc: McmcSettings {
                iterations: 60_000,
                burn_in: 10_000,
                thin: 5,
            },
        }
    }
}

impl FitSettings {
    /// Shorter chains used for the desk-scale study.
    pub fn desk() -> Self {
        Self {
            basis_mcmc: McmcSettings {
                iterations: 15_000,
                burn_in: 5_000,
                thin: 5,
            },
            car_mcmc: McmcSettings {
                iterations: 30_000,
                burn_in: 5_000,
                thin: 5,
            },
            ..Self::default()
        }
    }
}

/// A model to fit, with its basis size where one applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyModel {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
}

impl StudyModel {
    pub fn new(method: Method) -> Self {
        Self { method, q: None }
    }

    pub fn with_q(method: Method, q: usize) -> Self {
        Self { method, q: Some(q) }
    }

    pub fn label(&self) -> String {
        match self.q {
            Some(q) => format!("{}_q{q}", self.method.as_str()),
            None => self.method.as_str().to_string(),
        }
    }

    fn needs_q(&self) -> bool {
        matches!(self.method, Method::Rsr | Method::RsrAdjusted | Method::Bsf)
    }

    fn validate(&self) -> Result<()> {
        match (self.needs_q(), self.q) {
            (true, None) => Err(Error::invalid(format!("model {} needs a basis size q", self.method.as_str()))),
            (false, Some(_)) => Err(Error::invalid(format!("model {} takes no basis size", self.method.as_str()))),
            _ => Ok(()),
        }
    }
}

/// Read-only pieces shared by every fit on one graph and design.
pub struct ModelContext<'a> {
    pub graph: &'a ArealGraph,
    pub x: &'a DMatrix<f64>,
    rsr_basis: Option<MoranBasis>,
    bsf_basis: Option<MoranBasis>,
    car_spectrum: Option<CarSpectrum>,
    adjust_kernel: Option<DMatrix<f64>>,
}

impl<'a> ModelContext<'a> {
    /// Precompute the bases, CAR spectrum and adjustment kernel the listed models need.
    pub fn new(graph: &'a ArealGraph, x: &'a DMatrix<f64>, models: &[StudyModel]) -> Result<Self> {
        for m in models {
            m.validate()?;
        }
        let max_q = |pred: fn(Method) -> bool| models.iter().filter(|m| pred(m.method)).filter_map(|m| m.q).max();
        let rsr_q = max_q(|m| matches!(m, Method::Rsr | Method::RsrAdjusted));
        let bsf_q = max_q(|m| m == Method::Bsf);
        let rsr_basis = rsr_q.filter(|&q| q > 0).map(|q| model_basis(graph, x, ModelKind::Rsr, q)).transpose()?;
        let bsf_basis = bsf_q.filter(|&q| q > 0).map(|q| model_basis(graph, x, ModelKind::Bsf, q)).transpose()?;
        let car_spectrum = if models.iter().any(|m| m.method == Method::Car) {
            Some(CarSpectrum::new(graph)?)
        } else {
            None
        };
        let adjust_kernel = if models.iter().any(|m| m.method == Method::RsrAdjusted) {
            Some(adjustment_kernel(x, graph)?)
        } else {
            None
        };
        Ok(Self {
            graph,
            x,
            rsr_basis,
            bsf_basis,
            car_spectrum,
            adjust_kernel,
        })
    }

    fn basis(&self, kind: ModelKind, q: usize) -> Result<DMatrix<f64>> {
        if q == 0 {
            return Ok(DMatrix::zeros(self.graph.n(), 0));
        }
        let b = match kind {
            ModelKind::Rsr => self.rsr_basis.as_ref(),
            _ => self.bsf_basis.as_ref(),
        };
        match b {
            Some(b) if b.q >= q => Ok(b.vectors.columns(0, q).into_owned()),
            _ => Ok(model_basis(self.graph, self.x, kind, q)?.vectors),
        }
    }

    fn kernel(&self) -> Result<std::borrow::Cow<'_, DMatrix<f64>>> {
        match &self.adjust_kernel {
            Some(k) => Ok(std::borrow::Cow::Borrowed(k)),
            None => Ok(std::borrow::Cow::Owned(adjustment_kernel(self.x, self.graph)?)),
        }
    }
}

fn logistic_result(z: &[f64], x: &DMatrix<f64>, level: f64) -> Result<FitResult> {
    let f = fit_logistic(x, z, 0.0)?;
    let zq = norm_quantile(0.5 + level / 2.0);
    let se = f.std_errors();
    let intervals = (0..f.coefficients.len())
        .map(|j| Interval::new(f.coefficients[j] - zq * se[j], f.coefficients[j] + zq * se[j]))
        .collect();
    Ok(FitResult {
        method: Method::Logistic,
        param_names: beta_names(x.ncols()),
        estimates: f.coefficients.iter().copied().collect(),
        intervals,
        converged: true,
        iterations: f.iterations,
        p_hat: f.fitted.iter().copied().collect(),
        warnings: Vec::new(),
    })
}

fn mixed_spec(model: &StudyModel) -> MixedModelSpec {
    match model.method {
        Method::Car => MixedModelSpec {
            rho: RhoPrior::Uniform,
            ..MixedModelSpec::car()
        },
        Method::Bsf => MixedModelSpec::bsf(model.q.unwrap_or(0)),
        _ => MixedModelSpec::rsr(model.q.unwrap_or(0)),
    }
}

/// Run the sampler behind a car/rsr/bsf/rsr_adjusted model.
pub fn sample_posterior(model: &StudyModel, z: &[f64], ctx: &ModelContext<'_>, settings: &FitSettings, seed: u64) -> Result<PosteriorSamples> {
    model.validate()?;
    let mut spec = mixed_spec(model);
    spec.store_effects = false;
    match model.method {
        Method::Car => {
            spec.thin = settings.car_mcmc.thin;
            let m = settings.car_mcmc;
            fit_car_mcmc_with(z, ctx.graph, ctx.car_spectrum.as_ref(), ctx.x, &spec, m.iterations, m.burn_in, seed)
        }
        Method::Rsr | Method::RsrAdjusted | Method::Bsf => {
            spec.thin = settings.basis_mcmc.thin;
            let kind = spec.kind;
            let basis = ctx.basis(kind, spec.q)?;
            let m = settings.basis_mcmc;
            fit_basis_mcmc_with(z, ctx.graph, ctx.x, &basis, &spec, m.iterations, m.burn_in, seed)
        }
        other => Err(Error::invalid(format!("{} is not a mixed model", other.as_str()))),
    }
}

/// Summarize posterior draws as a fit; `rsr_adjusted` adds posterior-predictive draws of β.
pub fn summarize_posterior(model: &StudyModel, samples: &PosteriorSamples, ctx: &ModelContext<'_>, level: f64, seed: u64) -> Result<FitResult> {
    if model.method == Method::RsrAdjusted {
        let mut s = samples.clone();
        s.beta_tilde = Some(adjusted_beta_with(samples, &*ctx.kernel()?, seed ^ 0xA5A5_A5A5)?);
        posterior_summary(&s, level)
    } else {
        posterior_summary(samples, level)
    }
}

/// Fit one model to a binary response.
pub fn fit_model(model: &StudyModel, z: &[f64], ctx: &ModelContext<'_>, settings: &FitSettings, seed: u64) -> Result<FitResult> {
    model.validate()?;
    let (graph, x) = (ctx.graph, ctx.x);
    match model.method {
        Method::Logistic => logistic_result(z, x, settings.level),
        Method::Autologistic => {
            let fit = fit_mple(z, graph, x)?;
            let intervals = match settings.autologistic_interval {
                AutoInterval::Sandwich => sandwich_ci(&fit, settings.autologistic_b, settings.level, seed)?,
                AutoInterval::Bootstrap => bootstrap_ci(&fit, settings.autologistic_b, settings.level, seed)?,
                AutoInterval::Naive => fit.naive_intervals(settings.level)?,
            };
            Ok(fit.to_fit_result(intervals))
        }
        Method::Copcar => {
            let opts = CmlOptions {
                bootstrap: settings.copcar_bootstrap,
                level: settings.level,
                seed,
                ..CmlOptions::default()
            };
            Ok(fit_cml(z, graph, x, &opts)?.result)
        }
        Method::Car | Method::Rsr | Method::RsrAdjusted | Method::Bsf => {
            let s = sample_posterior(model, z, ctx, settings, seed)?;
            summarize_posterior(model, &s, ctx, settings.level, seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub rows: usize,
    pub cols: usize,
    pub replicates: usize,
    pub beta_true: Vec<f64>,
    pub models: Vec<StudyModel>,
    pub seed: u64,
    #[serde(default)]
    pub settings: FitSettings,
    /// Worker threads for concurrent replicates; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
}

impl StudyConfig {
    /// Logistic, autologistic, copCAR, CAR, RSR and adjusted RSR (q = 100), and BSF at
    /// q ∈ {50, 100, 200, 400}.
    pub fn all_models() -> Vec<StudyModel> {
        let mut m = vec![
            StudyModel::new(Method::Logistic),
            StudyModel::new(Method::Autologistic),
            StudyModel::new(Method::Copcar),
            StudyModel::new(Method::Car),
            StudyModel::with_q(Method::Rsr, 100),
            StudyModel::with_q(Method::RsrAdjusted, 100),
        ];
        m.extend([50, 100, 200, 400].map(|q| StudyModel::with_q(Method::Bsf, q)));
        m
    }

    /// 100 replicates on a 30×30 lattice with the default chain lengths.
    pub fn full() -> Self {
        Self {
            rows: 30,
            cols: 30,
            replicates: 100,
            beta_true: vec![0.2, 1.0, 1.0],
            models: Self::all_models(),
            seed: 2024,
            settings: FitSettings::default(),
            parallelism: 0,
        }
    }

    /// 30 replicates with shorter chains.
    pub fn desk() -> Self {
        Self {
            replicates: 30,
            settings: FitSettings::desk(),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be at least 1"));
        }
        if self.beta_true.len() != 3 {
            return Err(Error::invalid(format!("beta_true needs 3 entries, got {}", self.beta_true.len())));
        }
        if self.models.is_empty() {
            return Err(Error::invalid("no models configured"));
        }
        if !(self.settings.level > 0.0 && self.settings.level < 1.0) {
            return Err(Error::invalid("interval level must lie in (0, 1)"));
        }
        for m in &self.models {
            m.validate()?;
        }
        let mut labels: Vec<String> = self.models.iter().map(|m| m.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.models.len() {
            return Err(Error::invalid("duplicate models in configuration"));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Outcome of one model on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub model: String,
    pub estimate: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pred_error: Option<f64>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    /// `(covers 1, covers 0)` from the same interval.
    pub fn indicators(&self, truth: f64) -> Option<(bool, bool)> {
        let iv = Interval::new(self.lower?, self.upper?);
        Some((iv.contains(truth), iv.contains(0.0)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub median_estimate: f64,
    pub median_ci_width: f64,
    pub mse: f64,
    pub coverage_rate: f64,
    pub type2_rate: f64,
    pub median_pred_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
    pub records: Vec<ReplicateRecord>,
    pub failures: BTreeMap<String, usize>,
}

impl StudyReport {
    pub fn row(&self, model: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn save_records_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut wr = csv::Writer::from_path(path)?;
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Aggregate per-replicate records, failures excluded, in model order.
pub fn aggregate(models: &[String], records: &[ReplicateRecord], truth: f64) -> Vec<ReportRow> {
    models
        .iter()
        .map(|m| {
            let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| &r.model == m && r.error.is_none()).collect();
            let est: Vec<f64> = ok.iter().filter_map(|r| r.estimate).collect();
            let widths: Vec<f64> = ok.iter().filter_map(|r| Some(r.upper? - r.lower?)).collect();
            let preds: Vec<f64> = ok.iter().filter_map(|r| r.pred_error).collect();
            let ind: Vec<(bool, bool)> = ok.iter().filter_map(|r| r.indicators(truth)).collect();
            let rate = |f: fn(&(bool, bool)) -> bool| {
                if ind.is_empty() {
                    f64::NAN
                } else {
                    ind.iter().filter(|v| f(v)).count() as f64 / ind.len() as f64
                }
            };
            let nan_median = |v: &[f64]| if v.is_empty() { f64::NAN } else { median(v) };
            ReportRow {
                model: m.clone(),
                median_estimate: nan_median(&est),
                median_ci_width: nan_median(&widths),
                mse: if est.is_empty() {
                    f64::NAN
                } else {
                    est.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / est.len() as f64
                },
                coverage_rate: rate(|v| v.0),
                type2_rate: rate(|v| v.1),
                median_pred_error: nan_median(&preds),
            }
        })
        .collect()
}

fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = base ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the simulated response for replicate `r`.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    mix_seed(base, r as u64, 0)
}

fn pred_error(p_hat: &[f64], p: &[f64]) -> f64 {
    p_hat.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}

/// Fit every model to one replicate; RSR chains are shared with adjusted RSR at the same `q`.
pub fn fit_replicate(
    data: &Dataset,
    ctx: &ModelContext<'_>,
    models: &[StudyModel],
    settings: &FitSettings,
    base_seed: u64,
    replicate: usize,
) -> Vec<(ReplicateRecord, Option<FitResult>)> {
    let mut chains: BTreeMap<usize, std::result::Result<PosteriorSamples, String>> = BTreeMap::new();
    models
        .iter()
        .map(|m| {
            let seed = match m.method {
                // adjusted RSR reuses the RSR chain
                Method::Rsr | Method::RsrAdjusted => mix_seed(base_seed, replicate as u64, 1000 + m.q.unwrap_or(0) as u64),
                _ => mix_seed(base_seed, replicate as u64, 1 + m.method as u64 * 7919 + m.q.unwrap_or(0) as u64),
            };
            let result = match m.method {
                Method::Rsr | Method::RsrAdjusted => {
                    let q = m.q.unwrap_or(0);
                    let chain = chains.entry(q).or_insert_with(|| {
                        sample_posterior(&StudyModel::with_q(Method::Rsr, q), &data.z, ctx, settings, seed).map_err(|e| e.to_string())
                    });
                    match chain {
                        Ok(s) => summarize_posterior(m, s, ctx, settings.level, seed).map_err(|e| e.to_string()),
                        Err(e) => Err(e.clone()),
                    }
                }
                _ => fit_model(m, &data.z, ctx, settings, seed).map_err(|e| e.to_string()),
            };
            match result {
                Ok(f) => {
                    let iv = f.interval("beta1");
                    let rec = ReplicateRecord {
                        replicate,
                        model: m.label(),
                        estimate: f.estimate("beta1"),
                        lower: iv.map(|i| i.lower),
                        upper: iv.map(|i| i.upper),
                        pred_error: Some(pred_error(&f.p_hat, &data.covariates.p)),
                        error: None,
                    };
                    (rec, Some(f))
                }
                Err(e) => (
                    ReplicateRecord {
                        replicate,
                        model: m.label(),
                        estimate: None,
                        lower: None,
                        upper: None,
                        pred_error: None,
                        error: Some(e),
                    },
                    None,
                ),
            }
        })
        .collect()
}

/// Run the configured study. Surfaces of the first replicate go to `surfaces_dir` when given;
/// `progress` is called once per finished replicate.
pub fn run_study(config: &StudyConfig, surfaces_dir: Option<&Path>, progress: Option<&(dyn Fn(usize, &[ReplicateRecord]) + Sync)>) -> Result<StudyReport> {
    config.validate()?;
    let beta_true = [config.beta_true[0], config.beta_true[1], config.beta_true[2]];
    let cov = generate_covariates_with(config.rows, config.cols, beta_true)?;
    let x = cov.design();
    let ctx = ModelContext::new(cov.graph(), &x, &config.models)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let per_rep: Vec<Vec<ReplicateRecord>> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| -> Result<Vec<ReplicateRecord>> {
                let data = simulate_replicate(&cov, replicate_seed(config.seed, r));
                let out = fit_replicate(&data, &ctx, &config.models, &config.settings, config.seed, r);
                if r == 0 {
                    if let Some(dir) = surfaces_dir {
                        let fits: Vec<(String, Vec<f64>)> = config
                            .models
                            .iter()
                            .zip(&out)
                            .filter_map(|(m, (_, f))| f.as_ref().map(|f| (m.label(), f.p_hat.clone())))
                            .collect();
                        emit_surfaces(&data, &fits, dir)?;
                    }
                }
                let recs: Vec<ReplicateRecord> = out.into_iter().map(|(r, _)| r).collect();
                if let Some(cb) = progress {
                    cb(r, &recs);
                }
                Ok(recs)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let records: Vec<ReplicateRecord> = per_rep.into_iter().flatten().collect();
    let labels: Vec<String> = config.models.iter().map(|m| m.label()).collect();
    let mut failures = BTreeMap::new();
    for l in &labels {
        let k = records.iter().filter(|r| &r.model == l && r.error.is_some()).count();
        failures.insert(l.clone(), k);
        if k as f64 > 0.1 * config.replicates as f64 {
            let first = records
                .iter()
                .find(|r| &r.model == l && r.error.is_some())
                .and_then(|r| r.error.clone())
                .unwrap_or_default();
            return Err(Error::FitFailed(format!(
                "model {l} failed on {k} of {} replicates (first error: {first})",
                config.replicates
            )));
        }
    }
    Ok(StudyReport {
        rows: aggregate(&labels, &records, beta_true[1]),
        records,
        failures,
    })
}

fn write_grid(path: &Path, values: &[f64], rows: usize, cols: usize) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for r in 0..rows {
        w.write_record(values[r * cols..(r + 1) * cols].iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Read a grid written by [`emit_surfaces`] as a rows × cols matrix.
pub fn read_grid(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    let mut cols = 0;
    for rec in r.records() {
        let rec = rec?;
        cols = rec.len();
        for f in rec.iter() {
            data.push(f.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Write the true mean surface (`true_p.csv`) and each fit's `p̂` (`<label>.csv`) as
/// row-major grids.
pub fn emit_surfaces(data: &Dataset, fits: &[(String, Vec<f64>)], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let (rows, cols) = (data.covariates.lattice.rows, data.covariates.lattice.cols);
    let mut out = Vec::new();
    let path = dir.join("true_p.csv");
    write_grid(&path, &data.covariates.p, rows, cols)?;
    out.push(path);
    for (label, p) in fits {
        if p.len() != rows * cols {
            return Err(Error::dim(format!("surface {label} has {} values, grid is {rows}x{cols}", p.len())));
        }
        let path = dir.join(format!("{label}.csv"));
        write_grid(&path, p, rows, cols)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariates_calibrated() {
        let c = generate_covariates(30, 30).unwrap();
        assert!((correlation(&c.x1, &c.x2) - 0.45).abs() <= 0.005);
        assert!(mean(&c.x1).abs() < 1e-15);
        assert!((c.amplitude - 0.33).abs() < 0.01, "{}", c.amplitude);
        assert!(c.p.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn design_withholds_confounder() {
        let c = generate_covariates(6, 6).unwrap();
        let x = c.design();
        assert_eq!(x.ncols(), 2);
        for i in 0..36 {
            assert_eq!(x[(i, 0)], 1.0);
            assert_eq!(x[(i, 1)], c.x1[i]);
        }
        assert!((0..36).any(|i| c.x2[i] != c.x1[i]));
    }

    #[test]
    fn replicate_is_deterministic() {
        let c = generate_covariates(8, 8).unwrap();
        assert_eq!(simulate_replicate(&c, 5).z, simulate_replicate(&c, 5).z);
        assert_ne!(simulate_replicate(&c, 5).z, simulate_replicate(&c, 6).z);
    }

    #[test]
    fn coverage_and_type2_share_the_interval() {
        let rec = |lo: f64, hi: f64| ReplicateRecord {
            replicate: 0,
            model: "m".into(),
            estimate: Some(0.5 * (lo + hi)),
            lower: Some(lo),
            upper: Some(hi),
            pred_error: Some(1.0),
            error: None,
        };
        assert_eq!(rec(-1.0, 2.0).indicators(1.0), Some((true, true)));
        assert_eq!(rec(1.5, 2.0).indicators(1.0), Some((false, false)));
        assert_eq!(rec(0.5, 2.0).indicators(1.0), Some((true, false)));
    }

    #[test]
    fn single_replicate_aggregation() {
        let r = ReplicateRecord {
            replicate: 0,
            model: "a".into(),
            estimate: Some(1.7),
            lower: Some(1.2),
            upper: Some(2.2),
            pred_error: Some(3.0),
            error: None,
        };
        let rows = aggregate(&["a".to_string()], &[r], 1.0);
        assert_eq!(rows[0].median_estimate, 1.7);
        assert!((rows[0].median_ci_width - 1.0).abs() < 1e-15);
        assert!((rows[0].mse - 0.49).abs() < 1e-12);
        assert_eq!(rows[0].coverage_rate, 0.0);
        assert_eq!(rows[0].type2_rate, 0.0);
        assert_eq!(rows[0].median_pred_error, 3.0);
    }

    #[test]
    fn model_labels_and_validation() {
        assert_eq!(StudyModel::with_q(Method::Bsf, 50).label(), "bsf_q50");
        assert_eq!(StudyModel::new(Method::Car).label(), "car");
        assert!(StudyModel::new(Method::Rsr).validate().is_err());
        assert!(StudyModel::with_q(Method::Logistic, 3).validate().is_err());
        let mut c = StudyConfig::desk();
        c.beta_true = vec![1.0];
        assert!(c.validate().is_err());
        let c = StudyConfig::desk();
        assert_eq!(StudyConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn surfaces_round_trip() {
        let c = generate_covariates(5, 7).unwrap();
        let d = simulate_replicate(&c, 1);
        let dir = tempfile::tempdir().unwrap();
        let x = c.design();
        let f = logistic_result(&d.z, &x, 0.95);
        let fits = match f {
            Ok(f) => vec![("logistic".to_string(), f.p_hat)],
            Err(_) => vec![],
        };
        let paths = emit_surfaces(&d, &fits, dir.path()).unwrap();
        let g = read_grid(&paths[0]).unwrap();
        assert_eq!(g.shape(), (5, 7));
        for i in 0..35 {
            assert_eq!(g[(i / 7, i % 7)].to_bits(), c.p[i].to_bits());
        }
    }

    #[test]
    fn data_csv_round_trip() {
        let c = generate_covariates(4, 5).unwrap();
        let d = simulate_replicate(&c, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.save_csv(&path).unwrap();
        let rows = read_data_csv(&path).unwrap();
        assert_eq!(rows, d.rows());
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("id,row,col,x,y,x1,x2,s,p,z"));
    }
}
