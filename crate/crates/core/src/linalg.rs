//! Dense and banded linear-algebra helpers shared by the model modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky factor of a dense symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    m.clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of a dense symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = cholesky(m, what)?.inverse();
    Ok(symmetrize(inv))
}

pub fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Full symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Lower Cholesky factor of a symmetric positive-definite band matrix.
///
/// Entry `(i, j)` with `i - bw <= j <= i` is stored at `i * (bw + 1) + (j + bw - i)`.
#[derive(Clone, Debug)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    /// Factor the matrix whose lower-band entries are produced by `entry(i, j)` for `j <= i`.
    pub fn factor(n: usize, bw: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = entry(i, j);
                let klo = lo.max(j.saturating_sub(bw));
                for k in klo..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite(format!(
                            "band Cholesky pivot {i} = {s:e}"
                        )));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(Self { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (j + self.bw - i)]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.get(i, i).ln()).sum::<f64>()
    }

    /// Solve `L' x = b`. If `b` is standard normal, `x` is a draw from `N(0, (LL')⁻¹)`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            let hi = (i + self.bw).min(n - 1);
            for k in (i + 1)..=hi {
                s -= self.get(k, i) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
        x
    }

    /// Solve `L x = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        for i in 0..self.n {
            let mut s = x[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.get(i, k) * x[k];
            }
            x[i] = s / self.get(i, i);
        }
        x
    }

    /// Solve `(LL') x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Entries of the inverse inside the band, by the Takahashi recursion.
    pub fn selected_inverse(&self) -> BandSymmetric {
        let n = self.n;
        let bw = self.bw;
        let mut sigma = BandSymmetric {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        };
        for i in (0..n).rev() {
            let lii = self.get(i, i);
            let hi = (i + bw).min(n - 1);
            for j in (i..=hi).rev() {
                let mut s = 0.0;
                for k in (i + 1)..=hi {
                    s += self.get(k, i) * sigma.get(k, j);
                }
                let delta = if i == j { 1.0 / (lii * lii) } else { 0.0 };
                sigma.set(j, i, delta - s / lii);
            }
        }
        sigma
    }
}

/// Symmetric matrix known only inside a band `|i - j| <= bw`.
#[derive(Clone, Debug)]
pub struct BandSymmetric {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandSymmetric {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Entry `(i, j)`; panics if it lies outside the band.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r - c <= self.bw, "entry ({i}, {j}) outside band {}", self.bw);
        self.data[r * (self.bw + 1) + (c + self.bw - r)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        self.data[r * (self.bw + 1) + (c + self.bw - r)] = v;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

/// Thin QR-free orthonormalization of the columns of `m` (modified Gram–Schmidt, applied twice).
/// Returns `Err(column)` if a column is numerically dependent on earlier ones.
pub fn orthonormal_columns(m: &DMatrix<f64>, rel_tol: f64) -> std::result::Result<DMatrix<f64>, usize> {
    let (n, p) = m.shape();
    let mut q = DMatrix::<f64>::zeros(n, p);
    for j in 0..p {
        let orig = m.column(j).into_owned();
        let norm0 = orig.norm();
        let mut v = orig;
        for _ in 0..2 {
            for k in 0..j {
                let qk = q.column(k);
                let c = qk.dot(&v);
                v.axpy(-c, &qk, 1.0);
            }
        }
        let nv = v.norm();
        if norm0 == 0.0 || nv <= rel_tol * norm0 {
            return Err(j);
        }
        q.set_column(j, &(v / nv));
    }
    Ok(q)
}
