//! Common fit result record shared by every estimator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Logistic,
    Autologistic,
    Copcar,
    Car,
    Rsr,
    RsrAdjusted,
    Bsf,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Logistic => "logistic",
            Method::Autologistic => "autologistic",
            Method::Copcar => "copcar",
            Method::Car => "car",
            Method::Rsr => "rsr",
            Method::RsrAdjusted => "rsr_adjusted",
            Method::Bsf => "bsf",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Point estimates, 95% intervals and fitted probabilities for one model fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub method: Method,
    pub param_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub intervals: Vec<Interval>,
    pub converged: bool,
    pub iterations: usize,
    pub p_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    fn index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn estimate(&self, name: &str) -> Option<f64> {
        self.index(name).map(|i| self.estimates[i])
    }

    pub fn interval(&self, name: &str) -> Option<Interval> {
        self.index(name).and_then(|i| self.intervals.get(i).copied())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Names `beta0, beta1, ...` for `p` regression coefficients.
pub fn beta_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("beta{j}")).collect()
}
