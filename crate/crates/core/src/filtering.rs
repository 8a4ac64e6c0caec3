//! Classical spatial-filtering eigenvector selection.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::glm::fit_logistic;
use crate::graph::ArealGraph;
use crate::moran::{moran_i, MoranBasis};

/// Moran's I of a response with its normality-assumption moments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoranZ {
    pub i: f64,
    pub expected: f64,
    pub variance: f64,
    pub z: f64,
}

pub fn moran_z(graph: &ArealGraph, z: &[f64]) -> Result<MoranZ> {
    let n = graph.n();
    if z.len() != n {
        return Err(Error::dim(format!("response has {} entries, graph has {n} vertices", z.len())));
    }
    if n < 3 || graph.edge_count() == 0 {
        return Err(Error::invalid("Moran's I needs at least 3 vertices and one edge"));
    }
    if z.iter().all(|&v| v == z[0]) {
        return Err(Error::invalid("Moran's I is undefined for a constant response"));
    }
    let ones = DMatrix::from_element(n, 1, 1.0);
    let i = moran_i(graph, &ones, &DVector::from_column_slice(z))?;
    let nf = n as f64;
    let s0 = 2.0 * graph.edge_count() as f64;
    let s1 = 2.0 * s0;
    let s2: f64 = graph.degrees().iter().map(|d| (2.0 * d).powi(2)).sum();
    let expected = -1.0 / (nf - 1.0);
    let variance = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / (s0 * s0 * (nf * nf - 1.0)) - expected * expected;
    Ok(MoranZ {
        i,
        expected,
        variance,
        z: (i - expected) / variance.sqrt(),
    })
}

/// Number of eigenvectors to offer a stepwise search, from the count `n_plus` of positive
/// `M₁` eigenvalues and the Moran z-score of the response.
pub fn candidate_count(n_plus: usize, z_mi: f64) -> Result<usize> {
    if n_plus == 0 {
        return Err(Error::invalid("n_plus must be at least 1"));
    }
    if !(z_mi > -0.6) {
        return Err(Error::invalid(format!("candidate count needs z_MI > -0.6, got {z_mi}")));
    }
    Ok(candidate_count_raw(n_plus, z_mi).round().clamp(0.0, n_plus as f64) as usize)
}

/// Unrounded candidate count.
pub fn candidate_count_raw(n_plus: usize, z_mi: f64) -> f64 {
    let np = n_plus as f64;
    let a = (z_mi + 0.6).powf(0.1742);
    let expo = 2.148 - 6.1808 * a / np.powf(0.1298) + 3.3534 / a;
    np / (1.0 + expo.exp())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    Q0Stepwise,
    Ttest,
    TtestStepwise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateDiagnostic {
    pub index: usize,
    /// t-test p-value, or the last Wald p-value seen in a stepwise search.
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub rule: SelectionRule,
    pub candidate_count: usize,
    /// Basis columns in order of entry.
    pub selected_indices: Vec<usize>,
    pub diagnostics: Vec<CandidateDiagnostic>,
}

impl SelectionResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Welch two-sample t-test; returns `(t, df, two-sided p)` or `None` if a group has fewer
/// than two members. With no within-group spread, `p` is 0 for distinct means and 1 otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (ma, va) = (crate::stats::mean(a), crate::stats::variance(a));
    let (mb, vb) = (crate::stats::mean(b), crate::stats::variance(b));
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 <= 0.0 {
        let d = ma - mb;
        return Some(if d == 0.0 { (0.0, f64::INFINITY, 1.0) } else { (d.signum() * f64::INFINITY, f64::INFINITY, 0.0) });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    let p = (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0);
    Some((t, df, p))
}

/// Default number of leading basis columns screened by the t-test rule.
pub fn default_screen_size(basis: &MoranBasis) -> usize {
    basis.positive_count().min(200)
}

/// Screen the first `screen` basis columns with a Welch t-test grouping by `Z`; keep `p < alpha`.
pub fn ttest_select(basis: &MoranBasis, z: &[f64], alpha: f64, screen: usize) -> Result<SelectionResult> {
    crate::autologistic::check_binary(z)?;
    if z.len() != basis.vectors.nrows() {
        return Err(Error::dim("response length differs from basis rows"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let screen = screen.min(basis.q);
    let ones = z.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == z.len() {
        return Err(Error::invalid("both response groups must be nonempty"));
    }
    let mut selected = Vec::new();
    let mut diagnostics = Vec::with_capacity(screen);
    for j in 0..screen {
        let col = basis.vectors.column(j);
        let (g1, g0): (Vec<f64>, Vec<f64>) = {
            let mut g1 = Vec::with_capacity(ones);
            let mut g0 = Vec::with_capacity(z.len() - ones);
            for (i, &zi) in z.iter().enumerate() {
                if zi == 1.0 {
                    g1.push(col[i]);
                } else {
                    g0.push(col[i]);
                }
            }
            (g1, g0)
        };
        match welch_t_test(&g1, &g0) {
            Some((_, _, p)) => {
                if p < alpha {
                    selected.push(j);
                }
                diagnostics.push(CandidateDiagnostic { index: j, p_value: Some(p), note: None });
            }
            None => diagnostics.push(CandidateDiagnostic {
                index: j,
                p_value: None,
                note: Some("group of size < 2; skipped".into()),
            }),
        }
    }
    Ok(SelectionResult {
        rule: SelectionRule::Ttest,
        candidate_count: screen,
        selected_indices: selected,
        diagnostics,
    })
}

/// Forward stepwise logistic regression over basis columns `candidates`, entering the
/// candidate with the smallest Wald p-value while it is below `enter_p`.
pub fn stepwise_glm(z: &[f64], x: &DMatrix<f64>, basis: &DMatrix<f64>, candidates: &[usize], enter_p: f64) -> Result<SelectionResult> {
    crate::autologistic::check_binary(z)?;
    let n = z.len();
    if x.nrows() != n || basis.nrows() != n {
        return Err(Error::dim("response, design and basis row counts disagree"));
    }
    if candidates.is_empty() {
        return Err(Error::invalid("stepwise selection needs at least one candidate"));
    }
    if let Some(&bad) = candidates.iter().find(|&&c| c >= basis.ncols()) {
        return Err(Error::invalid(format!("candidate {bad} is outside the {}-column basis", basis.ncols())));
    }
    let mut remaining: Vec<usize> = candidates.to_vec();
    remaining.sort_unstable();
    remaining.dedup();
    let mut diag: Vec<CandidateDiagnostic> = remaining
        .iter()
        .map(|&index| CandidateDiagnostic { index, p_value: None, note: None })
        .collect();
    let mut selected: Vec<usize> = Vec::new();
    let p0 = x.ncols();
    while !remaining.is_empty() {
        let trials: Vec<(usize, std::result::Result<f64, String>)> = remaining
            .par_iter()
            .map(|&c| {
                let k = selected.len() + 1;
                let design = DMatrix::from_fn(n, p0 + k, |i, j| {
                    if j < p0 {
                        x[(i, j)]
                    } else if j < p0 + selected.len() {
                        basis[(i, selected[j - p0])]
                    } else {
                        basis[(i, c)]
                    }
                });
                let r = fit_logistic(&design, z, 0.0).map(|f| f.wald_p(p0 + k - 1)).map_err(|e| e.to_string());
                (c, r)
            })
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (c, r) in trials {
            let d = diag.iter_mut().find(|d| d.index == c).expect("candidate diagnostic");
            match r {
                Ok(p) => {
                    d.p_value = Some(p);
                    d.note = None;
                    if best.is_none_or(|(bc, bp)| p < bp || (p == bp && c < bc)) {
                        best = Some((c, p));
                    }
                }
                Err(e) => d.note = Some(format!("skipped at step {}: {e}", selected.len() + 1)),
            }
        }
        match best {
            Some((c, p)) if p < enter_p => {
                selected.push(c);
                remaining.retain(|&r| r != c);
            }
            _ => break,
        }
    }
    Ok(SelectionResult {
        rule: SelectionRule::Q0Stepwise,
        candidate_count: candidates.len(),
        selected_indices: selected,
        diagnostics: diag,
    })
}

/// `q₀` rule: offer the leading `candidate_count(n₊, z_MI)` columns of the `M₁` basis to a
/// stepwise search. `basis` must hold at least the positive-eigenvalue columns.
pub fn q0_stepwise(graph: &ArealGraph, z: &[f64], x: &DMatrix<f64>, basis: &MoranBasis, enter_p: f64) -> Result<SelectionResult> {
    let n_plus = basis.positive_count();
    let mz = moran_z(graph, z)?;
    let q0 = candidate_count(n_plus, mz.z)?;
    if q0 == 0 {
        return Ok(SelectionResult {
            rule: SelectionRule::Q0Stepwise,
            candidate_count: 0,
            selected_indices: Vec::new(),
            diagnostics: Vec::new(),
        });
    }
    let cands: Vec<usize> = (0..q0).collect();
    let mut r = stepwise_glm(z, x, &basis.vectors, &cands, enter_p)?;
    r.candidate_count = q0;
    Ok(r)
}

/// t-test screen followed by a stepwise search over the retained columns.
pub fn ttest_stepwise(z: &[f64], x: &DMatrix<f64>, basis: &MoranBasis, alpha: f64, screen: usize, enter_p: f64) -> Result<SelectionResult> {
    let screened = ttest_select(basis, z, alpha, screen)?;
    if screened.selected_indices.is_empty() {
        return Ok(SelectionResult {
            rule: SelectionRule::TtestStepwise,
            ..screened
        });
    }
    let mut r = stepwise_glm(z, x, &basis.vectors, &screened.selected_indices, enter_p)?;
    r.rule = SelectionRule::TtestStepwise;
    r.candidate_count = screened.selected_indices.len();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_lattice;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkerboard_is_repulsive() {
        let l = build_lattice(4, 4).unwrap();
        let z: Vec<f64> = (0..16).map(|i| ((i / 4 + i % 4) % 2) as f64).collect();
        let m = moran_z(&l.graph, &z).unwrap();
        assert!(m.i < m.expected && m.z < 0.0);
    }

    #[test]
    fn half_plane_is_strongly_attractive() {
        let l = build_lattice(30, 30).unwrap();
        let z: Vec<f64> = (0..900).map(|i| if i % 30 < 15 { 1.0 } else { 0.0 }).collect();
        assert!(moran_z(&l.graph, &z).unwrap().z > 10.0);
    }

    #[test]
    fn permutation_z_scores_are_standard() {
        let l = build_lattice(15, 15).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base: Vec<f64> = (0..225).map(|i| if i % 15 < 7 { 1.0 } else { 0.0 }).collect();
        let mut inside = 0;
        let mut zs = Vec::new();
        for _ in 0..1000 {
            let mut z = base.clone();
            for i in (1..z.len()).rev() {
                z.swap(i, rng.random_range(0..=i));
            }
            let s = moran_z(&l.graph, &z).unwrap().z;
            zs.push(s);
            inside += (s.abs() <= 3.0) as usize;
        }
        assert!(inside >= 990, "{inside}");
        let sd = crate::stats::variance(&zs).sqrt();
        assert!((sd - 1.0).abs() < 0.1, "sd of permutation z {sd}");
    }

    #[test]
    fn constant_response_rejected() {
        let l = build_lattice(3, 3).unwrap();
        assert!(moran_z(&l.graph, &[1.0; 9]).is_err());
    }

    #[test]
    fn candidate_count_limits_and_domain() {
        assert!(candidate_count(100, -0.6).is_err());
        assert_eq!(candidate_count(450, -0.6 + 1e-12).unwrap(), 0);
        for z in [0.0, 5.0, 100.0, 1e6] {
            assert!(candidate_count(450, z).unwrap() <= 450);
        }
        // regression constant from an independent 50-digit evaluation of the formula
        assert!((candidate_count_raw(450, 10.0) - 208.029_921_977_360_77).abs() < 1e-9);
    }

    #[test]
    fn candidate_count_monotone_in_z() {
        for n_plus in [10, 100, 450] {
            let mut prev = 0.0;
            for k in 0..=5050 {
                let z = -0.5 + k as f64 * 0.01;
                let v = candidate_count_raw(n_plus, z);
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn welch_matches_hand_computation() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0];
        let (t, df, p) = welch_t_test(&a, &b).unwrap();
        // means 2.5 and 4, variances 5/3 and 4
        let se2: f64 = 5.0 / 12.0 + 4.0 / 3.0;
        assert!((t + 1.5 / se2.sqrt()).abs() < 1e-14);
        let want_df = se2 * se2 / ((5.0f64 / 12.0).powi(2) / 3.0 + (4.0f64 / 3.0).powi(2) / 2.0);
        assert!((df - want_df).abs() < 1e-12);
        assert!(p > 0.2 && p < 0.4);
        assert!(welch_t_test(&[1.0], &b).is_none());
    }

    fn noise_basis(n: usize, q: usize, rng: &mut ChaCha8Rng) -> MoranBasis {
        MoranBasis {
            q,
            values: vec![1.0; q],
            vectors: DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal)),
            residual_to: DMatrix::from_element(n, 1, 1.0),
        }
    }

    #[test]
    fn ttest_null_calibration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = 0;
        for _ in 0..1000 {
            let z: Vec<f64> = (0..100).map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
            let b = noise_basis(100, 1, &mut rng);
            hits += ttest_select(&b, &z, 0.1, 1).unwrap().selected_indices.len();
        }
        assert!((70..=130).contains(&hits), "{hits}");
    }

    #[test]
    fn ttest_edge_cases() {
        let l = build_lattice(6, 6).unwrap();
        let z: Vec<f64> = (0..36).map(|i| if l.x[i] + 0.3 * l.y[i] > 0.0 { 1.0 } else { 0.0 }).collect();
        let mean = z.iter().sum::<f64>() / 36.0;
        let mut b = MoranBasis::intercept_only(&l.graph, 5).unwrap();
        for i in 0..36 {
            b.vectors[(i, 2)] = z[i] - mean;
        }
        let r = ttest_select(&b, &z, 0.1, 5).unwrap();
        assert!(r.selected_indices.contains(&2));
        assert_eq!(r.diagnostics[2].p_value, Some(0.0));
        assert!(ttest_select(&b, &z, 0.0, 5).unwrap().selected_indices.is_empty());
        let mut flipped = b.clone();
        for j in [0, 3] {
            flipped.vectors.column_mut(j).neg_mut();
        }
        assert_eq!(ttest_select(&flipped, &z, 0.1, 5).unwrap().selected_indices, r.selected_indices);
    }

    fn null_data(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, DMatrix<f64>) {
        let z: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect();
        (z, DMatrix::from_element(n, 1, 1.0))
    }

    #[test]
    fn stepwise_null_selections_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cands: Vec<usize> = (0..10).collect();
        let mut ok = 0;
        for _ in 0..200 {
            let (z, x) = null_data(&mut rng, 300);
            let b = noise_basis(300, 10, &mut rng);
            let r = stepwise_glm(&z, &x, &b.vectors, &cands, 0.2).unwrap();
            ok += (r.selected_indices.len() <= 5) as usize;
        }
        assert!(ok >= 190, "{ok}");
    }

    #[test]
    fn stepwise_enter_all_and_order_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (z, x) = null_data(&mut rng, 200);
        let b = noise_basis(200, 6, &mut rng);
        let r = stepwise_glm(&z, &x, &b.vectors, &[0, 1, 2, 3, 4, 5], 1.0 + 1e-9).unwrap();
        assert_eq!(r.selected_indices.len(), 6);
        let a = stepwise_glm(&z, &x, &b.vectors, &[5, 3, 1, 0, 4, 2], 0.5).unwrap();
        let c = stepwise_glm(&z, &x, &b.vectors, &[0, 1, 2, 3, 4, 5], 0.5).unwrap();
        assert_eq!(a.selected_indices, c.selected_indices);
    }

    #[test]
    fn selection_serializes_rule_in_snake_case() {
        let r = SelectionResult {
            rule: SelectionRule::TtestStepwise,
            candidate_count: 1,
            selected_indices: vec![0],
            diagnostics: vec![CandidateDiagnostic { index: 0, p_value: Some(0.01), note: None }],
        };
        let s = r.to_json().unwrap();
        assert!(s.contains("\"ttest_stepwise\""));
        let back: SelectionResult = serde_json::from_str(&s).unwrap();
        assert_eq!(back, r);
    }
}
