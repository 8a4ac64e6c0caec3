//! Projections, Moran operators, Moran eigenvector bases and the generalized Moran's I.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::ArealGraph;
use crate::linalg::{orthonormal_columns, sorted_symmetric_eigen, symmetrize};

/// Largest operator size handled by a full dense eigendecomposition.
pub const DENSE_EIGEN_LIMIT: usize = 2000;

/// Residual tolerance for accepted eigenpairs.
pub const EIGEN_TOL: f64 = 1e-10;

/// Orthonormal basis of `C(X)`; fails on the first linearly dependent column.
pub fn column_space_basis(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    orthonormal_columns(x, 1e-10).map_err(|column| Error::RankDeficient { column })
}

/// Orthogonal projection `X(X'X)⁻¹X'` onto the column space of `X`.
pub fn projection(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q = column_space_basis(x)?;
    Ok(symmetrize(&q * q.transpose()))
}

/// `(I - P_x) v` without forming `P_x`.
pub fn residualize(x: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let q = column_space_basis(x)?;
    Ok(v - &q * (q.transpose() * v))
}

/// Moran operator `(I - P_x) A (I - P_x)`.
pub fn moran_operator(graph: &ArealGraph, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != graph.n() {
        return Err(Error::dim(format!(
            "design has {} rows, graph has {} vertices",
            x.nrows(),
            graph.n()
        )));
    }
    let q = column_space_basis(x)?;
    let a = graph.adjacency();
    // (I - QQ')A(I - QQ') = A - QQ'A - AQQ' + QQ'AQQ'
    let aq = a * &q;
    let qtaq = q.transpose() * &aq;
    let aq_qt = &aq * q.transpose();
    let m = a - &aq_qt - aq_qt.transpose() + &q * (qtaq * q.transpose());
    Ok(symmetrize(m))
}

/// Truncated eigenbasis of a Moran operator.
#[derive(Clone, Debug, Serialize)]
pub struct MoranBasis {
    pub q: usize,
    /// Eigenvalues in non-increasing order.
    pub values: Vec<f64>,
    /// `n × q`, orthonormal columns.
    #[serde(skip)]
    pub vectors: DMatrix<f64>,
    /// The design the basis is residual to.
    #[serde(skip)]
    pub residual_to: DMatrix<f64>,
}

impl MoranBasis {
    /// Eigenbasis of `M_x`, keeping the `q` leading (most attractive) patterns.
    pub fn new(graph: &ArealGraph, x: &DMatrix<f64>, q: usize) -> Result<Self> {
        let m = moran_operator(graph, x)?;
        let qx = column_space_basis(x)?;
        let free = graph.n() - qx.ncols();
        if q > free {
            return Err(Error::invalid(format!("q = {q} exceeds the {free} dimensions orthogonal to the design")));
        }
        // Push C(X) below the rest of the spectrum so ties at 0 never pick a design direction.
        let max_degree = graph.degrees().iter().cloned().fold(0.0, f64::max);
        let shifted = symmetrize(m - (&qx * qx.transpose()) * (max_degree + 1.0));
        let (values, vectors) = principal_eigs(&shifted, q)?;
        Ok(Self {
            q,
            values: values.as_slice().to_vec(),
            vectors,
            residual_to: x.clone(),
        })
    }

    /// Basis for `M₁`, residual to the intercept only.
    pub fn intercept_only(graph: &ArealGraph, q: usize) -> Result<Self> {
        Self::new(graph, &DMatrix::from_element(graph.n(), 1, 1.0), q)
    }

    pub fn positive_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > EIGEN_TOL).count()
    }

    /// Leading `q` columns of this basis.
    pub fn truncate(&self, q: usize) -> Result<Self> {
        if q > self.q {
            return Err(Error::invalid(format!("cannot truncate a {}-column basis to {q}", self.q)));
        }
        Ok(Self {
            q,
            values: self.values[..q].to_vec(),
            vectors: self.vectors.columns(0, q).into_owned(),
            residual_to: self.residual_to.clone(),
        })
    }

    /// CSV: header of eigenvalues, then one row per vertex with one column per eigenvector.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let header: Vec<String> = self.values.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.vectors.nrows() {
            let row: Vec<String> = (0..self.q).map(|j| format!("{:e}", self.vectors[(i, j)])).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// The `q` largest eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Dense decomposition up to [`DENSE_EIGEN_LIMIT`], block Krylov iteration above it.
pub fn principal_eigs(s: &DMatrix<f64>, q: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::dim("principal_eigs needs a square matrix"));
    }
    if q > n {
        return Err(Error::invalid(format!("q = {q} exceeds dimension {n}")));
    }
    if n <= DENSE_EIGEN_LIMIT {
        let (vals, vecs) = sorted_symmetric_eigen(s);
        return Ok((vals.rows(0, q).into_owned(), vecs.columns(0, q).into_owned()));
    }
    krylov_eigs(s, q, EIGEN_TOL, 10 * n, 0x5eed)
}

/// Block Krylov–Rayleigh–Ritz iteration with full reorthogonalization.
///
/// Handles repeated eigenvalues up to the block size. `max_matvecs` bounds the
/// number of operator applications.
pub fn krylov_eigs(
    s: &DMatrix<f64>,
    q: usize,
    tol: f64,
    max_matvecs: usize,
    seed: u64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = s.nrows();
    if q == 0 {
        return Ok((DVector::zeros(0), DMatrix::zeros(n, 0)));
    }
    let block = q.clamp(2, 8).min(n);
    let scale = s.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut images: Vec<DVector<f64>> = Vec::new();
    let mut matvecs = 0usize;

    let orthogonalize = |v: &mut DVector<f64>, basis: &[DVector<f64>]| -> f64 {
        let before = v.norm();
        for _ in 0..2 {
            for b in basis {
                let c = b.dot(v);
                v.axpy(-c, b, 1.0);
            }
        }
        v.norm() / before.max(f64::MIN_POSITIVE)
    };

    let mut pending: Vec<DVector<f64>> = (0..block)
        .map(|_| DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng))))
        .collect();
    let mut next_check = (2 * q + 2 * block).min(n);

    loop {
        // Append the pending block to the basis.
        let mut fresh = Vec::new();
        for mut v in pending.drain(..) {
            if basis.len() + fresh.len() >= n {
                break;
            }
            let mut all: Vec<DVector<f64>> = basis.clone();
            all.extend(fresh.iter().cloned());
            let mut ratio = orthogonalize(&mut v, &all);
            let mut tries = 0;
            while ratio < 1e-8 && tries < 5 {
                v = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
                ratio = orthogonalize(&mut v, &all);
                tries += 1;
            }
            if ratio < 1e-8 {
                continue;
            }
            let nv = v.norm();
            fresh.push(v / nv);
        }
        for v in &fresh {
            images.push(s * v);
            matvecs += 1;
        }
        let start = basis.len();
        basis.extend(fresh);
        let m = basis.len();

        if m >= next_check || m >= n || matvecs >= max_matvecs {
            let vmat = DMatrix::from_columns(&basis);
            let wmat = DMatrix::from_columns(&images);
            let h = symmetrize(vmat.transpose() * &wmat);
            let (theta, u) = sorted_symmetric_eigen(&h);
            let k = q.min(m);
            let ritz = &vmat * u.columns(0, k);
            let ritz_img = &wmat * u.columns(0, k);
            let mut converged = k == q;
            for j in 0..k {
                let r = ritz_img.column(j) - ritz.column(j) * theta[j];
                if r.norm() > tol * scale {
                    converged = false;
                    break;
                }
            }
            if converged {
                return Ok((theta.rows(0, q).into_owned(), ritz));
            }
            if m >= n || matvecs >= max_matvecs {
                return Err(Error::EigenNonConvergence { iterations: matvecs });
            }
            next_check = (m + q.max(block)).min(n);
        }
        pending = images[start..].to_vec();
        if pending.is_empty() {
            pending = (0..block)
                .map(|_| DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng))))
                .collect();
        }
    }
}

/// Generalized Moran's I of `v` residual to `C(X)`.
pub fn moran_i(graph: &ArealGraph, x: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    if v.len() != graph.n() {
        return Err(Error::dim("vector length differs from vertex count"));
    }
    let r = residualize(x, v)?;
    let denom = r.norm_squared();
    if denom <= 1e-24 * v.norm_squared().max(f64::MIN_POSITIVE) || denom == 0.0 {
        return Err(Error::Undefined(
            "Moran's I is undefined for a vector in the column space of X".into(),
        ));
    }
    let ar = graph.adjacency_mul(r.as_slice());
    let num: f64 = r.iter().zip(&ar).map(|(a, b)| a * b).sum();
    Ok(graph.n() as f64 / graph.total_weight() * num / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_lattice;

    fn design(l: &crate::graph::Lattice) -> DMatrix<f64> {
        DMatrix::from_fn(l.graph.n(), 2, |i, j| if j == 0 { 1.0 } else { l.x[i] })
    }

    #[test]
    fn projection_of_intercept_is_averaging() {
        let x = DMatrix::from_element(5, 1, 1.0);
        let p = projection(&x).unwrap();
        assert!((p - DMatrix::from_element(5, 5, 0.2)).amax() < 1e-15);
    }

    #[test]
    fn projection_idempotent_and_annihilates() {
        let l = build_lattice(5, 6).unwrap();
        let x = design(&l);
        let p = projection(&x).unwrap();
        assert!((&p * &p - &p).amax() < 1e-12);
        let i = DMatrix::identity(30, 30);
        assert!(((i - &p) * &x).amax() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_column() {
        let x = DMatrix::from_fn(6, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 * i as f64 + 3.0,
        });
        match projection(&x) {
            Err(Error::RankDeficient { column }) => assert_eq!(column, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn moran_operator_null_space_and_trace() {
        let l = build_lattice(6, 5).unwrap();
        let x = design(&l);
        let m = moran_operator(&l.graph, &x).unwrap();
        assert!((&m * &x).amax() < 1e-10);
        assert!((&m - m.transpose()).amax() < 1e-14);
        // trace(M) = tr(A) - tr(PA) - tr(AP) + tr(PAP), by direct products
        let a = l.graph.adjacency();
        let p = projection(&x).unwrap();
        let expected = a.trace() - (&p * a).trace() - (a * &p).trace() + (&p * a * &p).trace();
        assert!((m.trace() - expected).abs() < 1e-10);
    }

    #[test]
    fn moran_spectrum_on_small_lattice() {
        // Dense oracle: eigenvalues of M₁ on 3x3 equal those of (I-P)A(I-P) formed explicitly.
        let l = build_lattice(3, 3).unwrap();
        let ones = DMatrix::from_element(9, 1, 1.0);
        let m = moran_operator(&l.graph, &ones).unwrap();
        let r = DMatrix::identity(9, 9) - DMatrix::from_element(9, 9, 1.0 / 9.0);
        let direct = &r * l.graph.adjacency() * &r;
        let (v1, _) = sorted_symmetric_eigen(&m);
        let (v2, _) = sorted_symmetric_eigen(&direct);
        assert!((v1.clone() - v2).amax() < 1e-12);
        // sum of eigenvalues = trace = -tr(P A) - tr(A P) + tr(P A P) since tr(A) = 0
        let p = DMatrix::from_element(9, 9, 1.0 / 9.0);
        let a = l.graph.adjacency();
        let t = -(&p * a).trace() - (a * &p).trace() + (&p * a * &p).trace();
        assert!((v1.sum() - t).abs() < 1e-12);
    }

    #[test]
    fn principal_eigs_identity_and_trace() {
        let (vals, vecs) = principal_eigs(&DMatrix::identity(5, 5), 3).unwrap();
        assert!(vals.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!((vecs.transpose() * &vecs - DMatrix::identity(3, 3)).amax() < 1e-12);

        let l = build_lattice(4, 4).unwrap();
        let m = moran_operator(&l.graph, &DMatrix::from_element(16, 1, 1.0)).unwrap();
        let (vals, _) = principal_eigs(&m, 16).unwrap();
        assert!((vals.sum() - m.trace()).abs() < 1e-8);
        assert!(principal_eigs(&m, 17).is_err());
    }

    #[test]
    fn krylov_matches_dense_on_lattice_operator() {
        let l = build_lattice(12, 12).unwrap();
        let m = moran_operator(&l.graph, &design(&l)).unwrap();
        let (dense, _) = sorted_symmetric_eigen(&m);
        let (vals, vecs) = krylov_eigs(&m, 15, 1e-10, 10 * 144, 7).unwrap();
        for j in 0..15 {
            assert!((vals[j] - dense[j]).abs() < 1e-8, "eig {j}: {} vs {}", vals[j], dense[j]);
            let r = &m * vecs.column(j) - vecs.column(j) * vals[j];
            assert!(r.norm() < 1e-8);
        }
        assert!((vecs.transpose() * &vecs - DMatrix::identity(15, 15)).amax() < 1e-10);
    }

    #[test]
    fn moran_i_of_top_eigenvector_is_scaled_eigenvalue() {
        let l = build_lattice(6, 6).unwrap();
        let ones = DMatrix::from_element(36, 1, 1.0);
        let basis = MoranBasis::new(&l.graph, &ones, 3).unwrap();
        let v = basis.vectors.column(0).into_owned();
        let i = moran_i(&l.graph, &ones, &v).unwrap();
        let expected = 36.0 / l.graph.total_weight() * basis.values[0];
        assert!((i - expected).abs() < 1e-12);
    }

    #[test]
    fn moran_i_shift_invariant_and_undefined_on_constants() {
        let l = build_lattice(5, 5).unwrap();
        let ones = DMatrix::from_element(25, 1, 1.0);
        let v = DVector::from_iterator(25, (0..25).map(|i| ((i * 7) % 11) as f64));
        let a = moran_i(&l.graph, &ones, &v).unwrap();
        let b = moran_i(&l.graph, &ones, &v.add_scalar(3.5)).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(matches!(
            moran_i(&l.graph, &ones, &DVector::from_element(25, 2.0)),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn moran_i_residual_vector_formula() {
        let l = build_lattice(5, 4).unwrap();
        let x = design(&l);
        let v = DVector::from_iterator(20, (0..20).map(|i| (i as f64 * 1.3).sin()));
        let r = residualize(&x, &v).unwrap();
        let a = l.graph.adjacency();
        let direct = 20.0 / l.graph.total_weight() * (r.transpose() * a * &r)[0] / r.norm_squared();
        assert!((moran_i(&l.graph, &x, &r).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn basis_csv_layout() {
        let l = build_lattice(3, 3).unwrap();
        let b = MoranBasis::intercept_only(&l.graph, 2).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        let header: Vec<f64> = lines[0].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(header, b.values);
    }
}
