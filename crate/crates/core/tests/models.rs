//! Monte Carlo and consistency checks for the autologistic, copCAR and mixed-model fitters.

use arealreg::autologistic::{
    bootstrap_ci, bootstrap_samples, fit_mple, gibbs_simulate, independence_expectation, log_pl, predict, sandwich_ci, score_outer_product,
    score_pl, AutoParams, MpleFit,
};
use arealreg::copcar::{fit_cml, simulate_copcar, simulate_copcar_with, simulate_gamma_poisson, CarCovariance, CmlOptions, Coordinates};
use arealreg::glm::{fit_logistic, logistic};
use arealreg::optim::hessian_from_gradient;
use arealreg::stats::median;
use arealreg::{build_lattice, Lattice};
use nalgebra::{DMatrix, DVector};

fn design(l: &Lattice) -> DMatrix<f64> {
    DMatrix::from_fn(l.graph.n(), 2, |i, j| if j == 0 { 1.0 } else { l.x[i] })
}

fn agreement(z: &[f64], l: &Lattice) -> f64 {
    let e = l.graph.edges();
    e.iter().filter(|&&(i, j)| z[i] == z[j]).count() as f64 / e.len() as f64
}

#[test]
fn gibbs_at_zero_kappa_matches_independence_means() {
    let l = build_lattice(3, 4).unwrap();
    let x = design(&l);
    let params = AutoParams::new(vec![0.3, -1.4], 0.0);
    let draws = 10_000;
    let zs = gibbs_simulate(&params, &l.graph, &x, draws, 1, 10, 3).unwrap();
    let zeta = independence_expectation(&x, &params.beta).unwrap().zeta;
    for i in 0..12 {
        let m = zs.iter().map(|z| z[i]).sum::<f64>() / draws as f64;
        let se = (zeta[i] * (1.0 - zeta[i]) / draws as f64).sqrt();
        assert!((m - zeta[i]).abs() <= 3.0 * se, "site {i}: {m} vs {}", zeta[i]);
    }
}

#[test]
fn strong_attraction_raises_neighbor_agreement() {
    let l = build_lattice(6, 6).unwrap();
    let x = DMatrix::from_element(36, 1, 1.0);
    let rate = |kappa: f64| {
        let zs = gibbs_simulate(&AutoParams::new(vec![0.0], kappa), &l.graph, &x, 2000, 2, 200, 8).unwrap();
        zs.iter().map(|z| agreement(z, &l)).sum::<f64>() / zs.len() as f64
    };
    assert!(rate(2.0) > rate(0.0));
}

#[test]
fn zero_kappa_reduces_to_logistic() {
    let l = build_lattice(5, 6).unwrap();
    let x = design(&l);
    let z: Vec<f64> = (0..30).map(|i| ((i * 7 + 3) % 5 < 2) as u8 as f64).collect();
    let lf = fit_logistic(&x, &z, 0.0).unwrap();
    let params = AutoParams {
        beta: lf.coefficients.clone(),
        kappa: 0.0,
    };
    let p = predict(&params, &z, &l.graph, &x).unwrap();
    for (a, b) in p.iter().zip(lf.fitted.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let ll: f64 = z.iter().zip(lf.fitted.iter()).map(|(&zi, &pi)| if zi == 1.0 { pi.ln() } else { (1.0 - pi).ln() }).sum();
    assert!((log_pl(&params, &z, &l.graph, &x).unwrap() - ll).abs() < 1e-10);
    // The logistic MLE is a stationary point of the PL in the β directions.
    let s = score_pl(&params, &z, &l.graph, &x).unwrap();
    assert!(s.rows(0, 2).amax() < 1e-8);
}

#[test]
fn mple_invariant_to_vertex_relabeling() {
    let l = build_lattice(7, 6).unwrap();
    let x = design(&l);
    let z = gibbs_simulate(&AutoParams::new(vec![0.1, 1.2], 0.4), &l.graph, &x, 1, 1, 300, 4).unwrap().remove(0);
    let fit = fit_mple(&z, &l.graph, &x).unwrap();
    let n = l.graph.n();
    // new label k holds old vertex perm[k]
    let perm: Vec<usize> = (0..n).map(|k| (k * 11 + 5) % n).collect();
    let mut new_label = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        new_label[i] = k;
    }
    let g2 = l.graph.permuted(&new_label).unwrap();
    let x2 = DMatrix::from_fn(n, 2, |k, j| x[(perm[k], j)]);
    let z2: Vec<f64> = perm.iter().map(|&i| z[i]).collect();
    let fit2 = fit_mple(&z2, &g2, &x2).unwrap();
    let d = (fit.params.theta() - fit2.params.theta()).amax();
    assert!(d < 1e-8, "max diff {d}");
}

#[test]
fn kappa_zero_data_gives_kappa_within_three_se() {
    let l = build_lattice(20, 20).unwrap();
    let x = design(&l);
    let truth = AutoParams::new(vec![0.2, 1.0], 0.0);
    let reps = 200;
    let mut hits = 0;
    for r in 0..reps {
        let z = gibbs_simulate(&truth, &l.graph, &x, 1, 1, 5, 700 + r).unwrap().remove(0);
        let fit = fit_mple(&z, &l.graph, &x).unwrap();
        let cov = fit.observed_info.clone().try_inverse().unwrap();
        let se = cov[(2, 2)].sqrt();
        if fit.params.kappa.abs() <= 3.0 * se {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.9 * reps as f64, "{hits} of {reps}");
}

#[test]
fn bootstrap_endpoints_are_empirical_quantiles() {
    let l = build_lattice(8, 8).unwrap();
    let x = design(&l);
    let z = gibbs_simulate(&AutoParams::new(vec![0.0, 1.0], 0.3), &l.graph, &x, 1, 1, 200, 2).unwrap().remove(0);
    let fit = fit_mple(&z, &l.graph, &x).unwrap();
    let b = 1000;
    let iv = bootstrap_ci(&fit, b, 0.95, 9).unwrap();
    let samples = bootstrap_samples(&fit, b, 9).unwrap();
    let mut kappas: Vec<f64> = samples
        .iter()
        .filter_map(|s| fit_mple(s, &l.graph, &x).ok())
        .map(|f| f.params.kappa)
        .collect();
    kappas.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (kappas.len() - 1) as f64 * p;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        kappas[lo] + (h - lo as f64) * (kappas[hi] - kappas[lo])
    };
    assert!((iv[2].lower - q(0.025)).abs() < 1e-12);
    assert!((iv[2].upper - q(0.975)).abs() < 1e-12);
}

#[test]
fn intervals_narrow_with_larger_lattice() {
    let truth = AutoParams::new(vec![0.2, 1.0], 0.4);
    let width = |side: usize| {
        let l = build_lattice(side, side).unwrap();
        let x = design(&l);
        let w: Vec<f64> = (0..50)
            .map(|r| {
                let z = gibbs_simulate(&truth, &l.graph, &x, 1, 1, 500, 300 + r).unwrap().remove(0);
                let fit = fit_mple(&z, &l.graph, &x).unwrap();
                sandwich_ci(&fit, 200, 0.95, 900 + r).unwrap()[2].width()
            })
            .collect();
        median(&w)
    };
    let (w20, w30) = (width(20), width(30));
    assert!(w30 < w20, "20x20 {w20} vs 30x30 {w30}");
}

#[test]
fn sandwich_and_bootstrap_widths_agree() {
    let l = build_lattice(20, 20).unwrap();
    let x = design(&l);
    let z = gibbs_simulate(&AutoParams::new(vec![0.2, 1.0], 0.5), &l.graph, &x, 1, 1, 1000, 31).unwrap().remove(0);
    let fit = fit_mple(&z, &l.graph, &x).unwrap();
    let sw = sandwich_ci(&fit, 500, 0.95, 1).unwrap();
    let bs = bootstrap_ci(&fit, 500, 0.95, 2).unwrap();
    for j in 0..3 {
        let ratio = sw[j].width() / bs[j].width();
        assert!((ratio - 1.0).abs() <= 0.2, "param {j}: ratio {ratio}");
    }
}

#[test]
fn score_variance_at_independence() {
    // At κ = 0 the β block of Ĵ matches Î, while the κ entry is twice Î_κκ: neighboring
    // conditional scores are correlated through the shared edge term.
    let l = build_lattice(20, 20).unwrap();
    let x = design(&l);
    let params = AutoParams::new(vec![0.2, 1.0], 0.0);
    let z = gibbs_simulate(&params, &l.graph, &x, 1, 1, 5, 77).unwrap().remove(0);
    let mut fit: MpleFit = fit_mple(&z, &l.graph, &x).unwrap();
    fit.params = params.clone();
    let theta = params.theta();
    let mut info = DMatrix::zeros(3, 3);
    let samples = bootstrap_samples(&fit, 2000, 5).unwrap();
    for s in &samples {
        info -= hessian_from_gradient(|t| score_pl(&AutoParams::from_theta(t), s, &l.graph, &x).unwrap(), &theta, 1e-5);
    }
    info /= samples.len() as f64;
    let j = score_outer_product(&fit, &samples);
    let jb = j.view((0, 0), (2, 2)).into_owned();
    let ib = info.view((0, 0), (2, 2)).into_owned();
    let rel = (&jb - &ib).norm() / ib.norm();
    assert!(rel <= 0.1, "beta block rel err {rel}");
    let ratio = j[(2, 2)] / info[(2, 2)];
    assert!((ratio - 2.0).abs() <= 0.2, "kappa ratio {ratio}");
}

#[test]
fn copcar_independent_at_zero_rho() {
    let l = build_lattice(3, 3).unwrap();
    let x = design(&l);
    let beta = DVector::from_vec(vec![0.1, 0.8]);
    let cov = CarCovariance::new(&l.graph, 0.0).unwrap();
    let draws = 10_000;
    let zs: Vec<Vec<f64>> = (0..draws).map(|s| simulate_copcar_with(&cov, &beta, &x, s)).collect();
    for &(i, j) in l.graph.edges() {
        let col = |k: usize| zs.iter().map(|z| z[k]).collect::<Vec<f64>>();
        let (a, b) = (col(i), col(j));
        let (ma, mb) = (a.iter().sum::<f64>() / draws as f64, b.iter().sum::<f64>() / draws as f64);
        let c: f64 = a.iter().zip(&b).map(|(u, v)| (u - ma) * (v - mb)).sum::<f64>() / draws as f64;
        let r = c / (ma * (1.0 - ma) * mb * (1.0 - mb)).sqrt();
        // 4 se keeps the familywise level over all edges below 1e-3
        assert!(r.abs() <= 4.0 / (draws as f64).sqrt(), "edge ({i},{j}): r = {r}");
    }
}

#[test]
fn copcar_dependence_raises_agreement() {
    let l = build_lattice(5, 5).unwrap();
    let x = DMatrix::from_element(25, 1, 1.0);
    let rate = |rho: f64| {
        let cov = CarCovariance::new(&l.graph, rho).unwrap();
        let beta = DVector::from_vec(vec![0.0]);
        (0..10_000u64).map(|s| agreement(&simulate_copcar_with(&cov, &beta, &x, s), &l)).sum::<f64>() / 10_000.0
    };
    assert!(rate(0.95) > rate(0.0));
}

#[test]
fn gamma_poisson_moments() {
    let l = build_lattice(3, 3).unwrap();
    let x = design(&l);
    let beta = DVector::from_vec(vec![0.5, 0.6]);
    let mu = (&x * &beta).map(f64::exp);
    let moments = |nu: f64, rho: f64, draws: u64| {
        let zs: Vec<Vec<f64>> = (0..draws).map(|s| simulate_gamma_poisson(&beta, nu, &l.graph, &x, rho, s).unwrap()).collect();
        (0..9)
            .map(|i| {
                let m = zs.iter().map(|z| z[i]).sum::<f64>() / draws as f64;
                let v = zs.iter().map(|z| (z[i] - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
                (m, v)
            })
            .collect::<Vec<_>>()
    };
    let draws = 20_000;
    for (i, (m, v)) in moments(2.0, 0.7, draws).into_iter().enumerate() {
        assert!((m - mu[i]).abs() <= 3.0 * (v / draws as f64).sqrt(), "site {i}: mean {m} vs {}", mu[i]);
        assert!(v >= mu[i], "site {i}: var {v} < mu {}", mu[i]);
    }
    for (i, (_, v)) in moments(1e6, 0.0, 40_000).into_iter().enumerate() {
        assert!((v / mu[i] - 1.0).abs() <= 0.05, "site {i}: var {v} vs mu {}", mu[i]);
    }
}

#[test]
fn copcar_coordinates_reach_same_optimum() {
    let l = build_lattice(10, 10).unwrap();
    let x = design(&l);
    let z = simulate_copcar(&arealreg::copcar::CopParams::new(vec![0.2, 1.0], 0.8), &l.graph, &x, 3).unwrap();
    let base = CmlOptions {
        bootstrap: 0,
        // central-difference gradients are accurate to about 1e-8
        gtol: 1e-6,
        ..CmlOptions::default()
    };
    let a = fit_cml(&z, &l.graph, &x, &base).unwrap();
    let b = fit_cml(
        &z,
        &l.graph,
        &x,
        &CmlOptions {
            coordinates: Coordinates::Direct,
            ..base.clone()
        },
    )
    .unwrap();
    let d = (a.theta - b.theta).amax();
    assert!(d <= 1e-4, "max diff {d}");
}

#[test]
fn copcar_self_consistency() {
    let l = build_lattice(30, 30).unwrap();
    let x = design(&l);
    let truth = [0.2, 1.0];
    let cov = CarCovariance::new(&l.graph, 0.9).unwrap();
    let beta = DVector::from_vec(truth.to_vec());
    let reps = 100;
    let mut hits = 0;
    for r in 0..reps {
        let z = simulate_copcar_with(&cov, &beta, &x, 5_000 + r);
        let opts = CmlOptions {
            seed: 8_000 + r,
            ..CmlOptions::default()
        };
        let fit = fit_cml(&z, &l.graph, &x, &opts).unwrap();
        let c = fit.covariance.unwrap();
        let ok = (0..2).all(|j| (fit.theta[j] - truth[j]).abs() <= 3.0 * c[(j, j)].sqrt());
        hits += ok as usize;
    }
    assert!(hits as f64 >= 0.85 * reps as f64, "{hits} of {reps}");
}

#[test]
fn copcar_rho_interval_reaches_zero_under_independence() {
    let l = build_lattice(15, 15).unwrap();
    let x = design(&l);
    let z = simulate_copcar(&arealreg::copcar::CopParams::new(vec![0.0, 1.0], 0.0), &l.graph, &x, 17).unwrap();
    let fit = fit_cml(&z, &l.graph, &x, &CmlOptions::default()).unwrap();
    let iv = fit.result.interval("phi_inv_rho").unwrap();
    // ρ̂ near 0 puts Φ⁻¹(ρ̂) deep in the left tail; the interval must extend below Φ⁻¹(0.05).
    assert!(iv.lower < arealreg::normal::norm_quantile(0.05), "{iv:?}");
    let p = fit.result.p_hat.clone();
    let expect = (&x * &fit.params.beta).map(logistic);
    assert!(p.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
}
