//! Scalarizations `G_θ(Σ)` of a covariance matrix and their derivatives.
//!
//! Two families are provided: the Kiefer `Φ_q` criteria (log-det at `q = 0`,
//! trace powers otherwise) and the weighted trace `tr(H_θ Σ)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{ensure_pd, min_eigenvalue, mirror_upper, spd_inverse, FlooredEigen, EIGEN_FLOOR, TOL_PD};

/// Supplies the weight matrix `H_θ` of a weighted-trace criterion.
pub trait WeightProvider: Send + Sync {
    fn weight(&self, theta: &DVector<f64>) -> DMatrix<f64>;
}

/// θ-independent weight matrix.
#[derive(Debug, Clone)]
pub struct ConstantWeight(pub DMatrix<f64>);

impl WeightProvider for ConstantWeight {
    fn weight(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        self.0.clone()
    }
}

impl<F> WeightProvider for F
where
    F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync,
{
    fn weight(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        self(theta)
    }
}

#[derive(Clone)]
pub enum CriterionKind {
    PhiQ(f64),
    WeightedTrace {
        provider: Arc<dyn WeightProvider>,
        /// Declared eigenvalue band `[η, η′]` for `H_θ`.
        band: (f64, f64),
    },
}

#[derive(Clone)]
pub struct Criterion {
    kind: CriterionKind,
    tol_pd: f64,
}

impl fmt::Debug for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            CriterionKind::PhiQ(q) => write!(f, "Criterion::PhiQ({q})"),
            CriterionKind::WeightedTrace { band, .. } => write!(f, "Criterion::WeightedTrace(band={band:?})"),
        }
    }
}

impl Criterion {
    pub fn phi(q: f64) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::InvalidArgument(format!("Φ_q requires q >= 0, got {q}")));
        }
        Ok(Criterion {
            kind: CriterionKind::PhiQ(q),
            tol_pd: TOL_PD,
        })
    }

    /// `tr(Σ)`, the A-optimality criterion.
    pub fn trace() -> Self {
        Criterion::phi(1.0).expect("q = 1 is valid")
    }

    pub fn weighted_trace(provider: Arc<dyn WeightProvider>, band: (f64, f64)) -> Result<Self> {
        if !(band.0 > 0.0 && band.0 <= band.1) {
            return Err(Error::InvalidArgument(format!("invalid eigenvalue band {band:?}")));
        }
        Ok(Criterion {
            kind: CriterionKind::WeightedTrace { provider, band },
            tol_pd: TOL_PD,
        })
    }

    /// Weighted trace with a fixed symmetric positive-definite `H`; the band
    /// is taken from its spectrum.
    pub fn constant_weighted_trace(h: DMatrix<f64>) -> Result<Self> {
        if h.nrows() != h.ncols() {
            return Err(Error::DimensionMismatch {
                expected: h.nrows(),
                found: h.ncols(),
            });
        }
        if (&h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
            return Err(Error::InvalidArgument("weight matrix is not symmetric".into()));
        }
        ensure_pd(&h, TOL_PD)?;
        let eig = nalgebra::SymmetricEigen::new(h.clone()).eigenvalues;
        let band = (eig.min(), eig.max());
        Criterion::weighted_trace(Arc::new(ConstantWeight(h)), band)
    }

    pub fn with_tol_pd(mut self, tol_pd: f64) -> Self {
        self.tol_pd = tol_pd;
        self
    }

    pub fn tol_pd(&self) -> f64 {
        self.tol_pd
    }

    pub fn kind(&self) -> &CriterionKind {
        &self.kind
    }

    /// `q` when this is a `Φ_q` criterion.
    pub fn phi_q(&self) -> Option<f64> {
        match self.kind {
            CriterionKind::PhiQ(q) => Some(q),
            _ => None,
        }
    }

    fn weight(&self, theta: &DVector<f64>, p: usize) -> Result<DMatrix<f64>> {
        match &self.kind {
            CriterionKind::WeightedTrace { provider, .. } => {
                let h = provider.weight(theta);
                if h.nrows() != p || h.ncols() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        found: h.nrows(),
                    });
                }
                Ok(h)
            }
            CriterionKind::PhiQ(_) => unreachable!("weight requested for Φ_q"),
        }
    }

    /// `G_θ(Σ)`.
    pub fn evaluate(&self, theta: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
        ensure_pd(sigma, self.tol_pd)?;
        match self.kind {
            CriterionKind::PhiQ(q) => {
                if q == 1.0 {
                    return Ok(sigma.trace());
                }
                let eig = FlooredEigen::new(sigma, EIGEN_FLOOR);
                Ok(phi_from_eigenvalues(q, eig.values.iter().copied()))
            }
            CriterionKind::WeightedTrace { .. } => {
                let h = self.weight(theta, sigma.nrows())?;
                Ok((h * sigma).trace())
            }
        }
    }

    /// `G_θ(𝓘⁻¹)` evaluated from the information matrix.
    ///
    /// Uses a Cholesky factorization of `info`; meant for hot loops where
    /// positive-definiteness of `info` has been established by the caller.
    pub fn evaluate_at_inverse(&self, theta: &DVector<f64>, info: &DMatrix<f64>) -> Result<f64> {
        let not_pd = || Error::NotPositiveDefinite {
            min_eigenvalue: min_eigenvalue(info),
        };
        match self.kind {
            CriterionKind::PhiQ(0.0) => {
                let chol = Cholesky::new(info.clone()).ok_or_else(not_pd)?;
                let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
                Ok(-log_det)
            }
            CriterionKind::PhiQ(1.0) => {
                let chol = Cholesky::new(info.clone()).ok_or_else(not_pd)?;
                // tr(𝓘⁻¹) = ‖L⁻¹‖²_F
                let l = chol.l();
                let mut linv = DMatrix::identity(info.nrows(), info.nrows());
                if !l.solve_lower_triangular_mut(&mut linv) {
                    return Err(not_pd());
                }
                Ok(linv.norm_squared())
            }
            CriterionKind::PhiQ(q) => {
                let values = nalgebra::SymmetricEigen::new(symmetric_part(info)).eigenvalues;
                let min = values.min();
                if min <= 0.0 {
                    return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
                }
                Ok(phi_from_eigenvalues(q, values.iter().map(|v| 1.0 / v)))
            }
            CriterionKind::WeightedTrace { .. } => {
                let sigma = spd_inverse(info)?;
                let h = self.weight(theta, info.nrows())?;
                Ok((h * sigma).trace())
            }
        }
    }

    /// Matrix gradient `∇G_θ(Σ)`, exactly symmetric.
    pub fn gradient(&self, theta: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_pd(sigma, self.tol_pd)?;
        let p = sigma.nrows();
        let mut g = match self.kind {
            CriterionKind::PhiQ(0.0) => spd_inverse(sigma)?,
            CriterionKind::PhiQ(1.0) => DMatrix::identity(p, p),
            CriterionKind::PhiQ(q) if q < 1.0 => FlooredEigen::new(sigma, EIGEN_FLOOR).power(q - 1.0) * q,
            CriterionKind::PhiQ(q) => {
                let eig = FlooredEigen::new(sigma, EIGEN_FLOOR);
                eig.power(q - 1.0) * eig.trace_power(q).powf(1.0 / q - 1.0)
            }
            CriterionKind::WeightedTrace { .. } => symmetric_part(&self.weight(theta, p)?),
        };
        mirror_upper(&mut g);
        Ok(g)
    }

    /// `M = Σ ∇G_θ(Σ) Σ` with `Σ = 𝓘⁻¹`, so that the GI1 score of experiment
    /// `a` is `tr(M 𝓘_a)`.
    pub fn gi1_matrix(&self, theta: &DVector<f64>, weighted_info: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_pd(weighted_info, self.tol_pd)?;
        let mut m = match self.kind {
            CriterionKind::PhiQ(0.0) => spd_inverse(weighted_info)?,
            CriterionKind::PhiQ(1.0) => {
                let sigma = spd_inverse(weighted_info)?;
                &sigma * &sigma
            }
            CriterionKind::PhiQ(q) => {
                let eig = FlooredEigen::new(weighted_info, EIGEN_FLOOR);
                let scale = if q < 1.0 {
                    q
                } else {
                    eig.values.iter().map(|v| v.powf(-q)).sum::<f64>().powf(1.0 / q - 1.0)
                };
                eig.power(-q - 1.0) * scale
            }
            CriterionKind::WeightedTrace { .. } => {
                let sigma = spd_inverse(weighted_info)?;
                let h = symmetric_part(&self.weight(theta, sigma.nrows())?);
                &sigma * h * &sigma
            }
        };
        mirror_upper(&mut m);
        Ok(m)
    }

    /// GI1 candidate score `tr[∇G(Σ) Σ 𝓘_a Σ]` with `Σ = {𝓘^π}⁻¹`, the
    /// negative partial derivative of `F_θ(π)` in `π(a)`.
    pub fn directional_score(
        &self,
        theta: &DVector<f64>,
        weighted_info: &DMatrix<f64>,
        info_a: &DMatrix<f64>,
    ) -> Result<f64> {
        ensure_pd(weighted_info, self.tol_pd)?;
        match self.kind {
            CriterionKind::PhiQ(q) => {
                // closed forms in the powers of 𝓘^{−π}
                let eig = FlooredEigen::new(weighted_info, EIGEN_FLOOR);
                let inv_pow = eig.power(-(q + 1.0));
                let core = (inv_pow * info_a).trace();
                let prefactor = if q == 0.0 {
                    1.0
                } else if q < 1.0 {
                    q
                } else {
                    eig.values.iter().map(|v| v.powf(-q)).sum::<f64>().powf(1.0 / q - 1.0)
                };
                Ok(prefactor * core)
            }
            CriterionKind::WeightedTrace { .. } => {
                let sigma = spd_inverse(weighted_info)?;
                let h = self.weight(theta, sigma.nrows())?;
                Ok((h * &sigma * info_a * &sigma).trace())
            }
        }
    }
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn phi_from_eigenvalues(q: f64, values: impl Iterator<Item = f64>) -> f64 {
    if q == 0.0 {
        values.map(f64::ln).sum()
    } else if q < 1.0 {
        values.map(|v| v.powf(q)).sum()
    } else {
        values.map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}
