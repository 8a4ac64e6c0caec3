//! BFGS quasi-Newton minimization with a strong-Wolfe line search, plus
//! finite-difference helpers.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when `max |∇f| <= gtol`.
    pub gtol: f64,
    /// Also stop when the relative change in `f` over an iteration falls below this.
    pub ftol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gtol: 1e-6,
            ftol: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub grad: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f`, whose value and gradient are returned together by `fg`.
/// Non-finite values are treated as `+∞` and make the line search back off.
pub fn bfgs_minimize<F>(mut fg: F, x0: DVector<f64>, opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let mut x = x0;
    let (mut f, mut g) = fg(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut iterations = opts.max_iter;
    for iter in 0..opts.max_iter {
        if g.amax() <= opts.gtol {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter,
                converged: true,
            };
        }
        let mut d = -(&h * &g);
        if d.dot(&g) >= 0.0 {
            h = DMatrix::identity(n, n);
            d = -g.clone();
        }
        if first {
            // keep the initial step length reasonable
            let s = d.norm();
            if s > 1.0 {
                d /= s;
            }
        }
        let Some((alpha, fnew, gnew)) = wolfe_search(&mut fg, &x, f, &g, &d) else {
            if first {
                iterations = iter;
                break;
            }
            // restart from steepest descent once before giving up
            h = DMatrix::identity(n, n);
            first = true;
            continue;
        };
        let s = &d * alpha;
        let y = &gnew - &g;
        let sy = s.dot(&y);
        let fold = f;
        x += &s;
        f = fnew;
        g = gnew;
        if sy > 1e-12 * s.norm() * y.norm() {
            if first {
                let scale = sy / y.norm_squared();
                h = DMatrix::identity(n, n) * scale;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H + ((sy + yHy)/(sy)²) ss' − (Hy s' + s y'H)/sy
            h += (&s * s.transpose()) * ((sy + yhy) * rho * rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        first = false;
        if opts.ftol > 0.0 && (fold - f).abs() <= opts.ftol * f.abs().max(1.0) && g.amax() <= opts.gtol * 1e3 {
            return BfgsResult {
                x,
                f,
                grad: g,
                iterations: iter + 1,
                converged: true,
            };
        }
    }
    let converged = g.amax() <= opts.gtol;
    BfgsResult {
        x,
        f,
        grad: g,
        iterations,
        converged,
    }
}

fn wolfe_search<F>(
    fg: &mut F,
    x: &DVector<f64>,
    f0: f64,
    g0: &DVector<f64>,
    d: &DVector<f64>,
) -> Option<(f64, f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let dphi0 = g0.dot(d);
    let mut eval = |a: f64| {
        let (f, g) = fg(&(x + d * a));
        let f = if f.is_finite() && g.iter().all(|v| v.is_finite()) {
            f
        } else {
            f64::INFINITY
        };
        let dphi = g.dot(d);
        (f, g, dphi)
    };
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut dphi_prev = dphi0;
    let mut a = 1.0;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for i in 0..40 {
        let (fa, ga, dphia) = eval(a);
        if fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((a, fa, ga.clone()));
        }
        if fa > f0 + C1 * a * dphi0 || (i > 0 && fa >= f_prev) {
            return zoom(&mut eval, a_prev, a, f_prev, dphi_prev, fa, f0, dphi0).or(best);
        }
        if dphia.abs() <= -C2 * dphi0 {
            return Some((a, fa, ga));
        }
        if dphia >= 0.0 {
            return zoom(&mut eval, a, a_prev, fa, dphia, f_prev, f0, dphi0).or(best);
        }
        a_prev = a;
        f_prev = fa;
        dphi_prev = dphia;
        a *= 2.0;
    }
    best
}

fn zoom<E>(
    eval: &mut E,
    mut lo: f64,
    mut hi: f64,
    mut f_lo: f64,
    mut dphi_lo: f64,
    mut f_hi: f64,
    f0: f64,
    dphi0: f64,
) -> Option<(f64, f64, DVector<f64>)>
where
    E: FnMut(f64) -> (f64, DVector<f64>, f64),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut best: Option<(f64, f64, DVector<f64>)> = None;
    for _ in 0..60 {
        // safeguarded quadratic interpolation through (lo, f_lo, dphi_lo) and (hi, f_hi)
        let width = hi - lo;
        let mut a = lo + 0.5 * width;
        let curv = f_hi - f_lo - dphi_lo * width;
        if f_hi.is_finite() && curv > 0.0 {
            let trial = lo - dphi_lo * width * width / (2.0 * curv);
            let frac = (trial - lo) / width;
            if frac.is_finite() && frac > 0.1 && frac < 0.9 {
                a = trial;
            }
        }
        let (fa, ga, dphia) = eval(a);
        if fa < f0 && best.as_ref().is_none_or(|b| fa < b.1) {
            best = Some((a, fa, ga.clone()));
        }
        if fa > f0 + C1 * a * dphi0 || fa >= f_lo {
            hi = a;
            f_hi = fa;
        } else {
            if dphia.abs() <= -C2 * dphi0 {
                return Some((a, fa, ga));
            }
            if dphia * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
            }
            lo = a;
            f_lo = fa;
            dphi_lo = dphia;
        }
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            break;
        }
    }
    best
}

/// Central-difference gradient.
pub fn numerical_gradient<F: FnMut(&DVector<f64>) -> f64>(mut f: F, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = f(&xp);
        xp[j] = orig - h;
        let fm = f(&xp);
        xp[j] = orig;
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Jacobian of a gradient map, symmetrized.
pub fn hessian_from_gradient<G: FnMut(&DVector<f64>) -> DVector<f64>>(mut grad: G, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let orig = xp[j];
        xp[j] = orig + h;
        let gp = grad(&xp);
        xp[j] = orig - h;
        let gm = grad(&xp);
        xp[j] = orig;
        hess.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    crate::linalg::symmetrize(hess)
}

/// Central second differences of a scalar function.
pub fn numerical_hessian<F: FnMut(&DVector<f64>) -> f64>(mut f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut hess = DMatrix::zeros(n, n);
    let f0 = f(x);
    let mut xp = x.clone();
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let mut e = |si: f64, sj: f64| {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}
