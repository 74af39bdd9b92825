//! Small dense symmetric-matrix helpers shared by the criteria, selector and
//! inference modules.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default positive-definiteness gate on the smallest eigenvalue.
pub const TOL_PD: f64 = 1e-10;

/// Eigenvalue floor used when forming fractional matrix powers.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Forces exact symmetry by mirroring the upper triangle.
pub fn mirror_upper(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Returns an error unless the smallest eigenvalue exceeds `tol`.
pub fn ensure_pd(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let min = min_eigenvalue(m);
    if min.is_finite() && min > tol {
        Ok(())
    } else {
        Err(Error::NotPositiveDefinite { min_eigenvalue: min })
    }
}

/// Symmetric eigendecomposition with eigenvalues floored at `floor`.
pub struct FlooredEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl FlooredEigen {
    pub fn new(m: &DMatrix<f64>, floor: f64) -> Self {
        let eig = SymmetricEigen::new(symmetrize(m));
        let values = eig.eigenvalues.map(|v| v.max(floor));
        FlooredEigen {
            values,
            vectors: eig.eigenvectors,
        }
    }

    /// `V diag(f(λ)) Vᵀ`, exactly symmetric.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled_t = {
            let mut vt = self.vectors.transpose();
            for (i, mut row) in vt.row_iter_mut().enumerate() {
                row *= f(self.values[i]);
            }
            vt
        };
        let mut out = &self.vectors * scaled_t;
        mirror_upper(&mut out);
        out
    }

    pub fn power(&self, exponent: f64) -> DMatrix<f64> {
        self.apply(|v| v.powf(exponent))
    }

    pub fn trace_power(&self, exponent: f64) -> f64 {
        self.values.iter().map(|v| v.powf(exponent)).sum()
    }
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match Cholesky::new(m.clone()) {
        Some(chol) => {
            let mut inv = chol.inverse();
            mirror_upper(&mut inv);
            Ok(inv)
        }
        None => Err(Error::NotPositiveDefinite {
            min_eigenvalue: min_eigenvalue(m),
        }),
    }
}

/// `xᵀ A x` for a vector given by its nonzero entries.
pub fn sparse_quad_form(a: &DMatrix<f64>, idx: &[usize], val: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (r, &i) in idx.iter().enumerate() {
        let mut row = 0.0;
        for (c, &j) in idx.iter().enumerate() {
            row += a[(i, j)] * val[c];
        }
        acc += val[r] * row;
    }
    acc
}

/// `A += w · x xᵀ` for a sparse vector `x`.
pub fn add_sparse_outer(a: &mut DMatrix<f64>, weight: f64, idx: &[usize], val: &[f64]) {
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            a[(i, j)] += weight * val[r] * val[c];
        }
    }
}
