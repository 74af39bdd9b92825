//! Optimal selection proportions: `F_θ(π) = G_θ[{Σ_a π(a) 𝓘_a(θ)}⁻¹]`, its
//! gradient, Euclidean projection onto the simplex and projected gradient
//! descent for `π* = argmin F_θ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::models::{ExperimentId, ExperimentModel};

/// A point of the probability simplex over the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Proportion(Vec<f64>);

impl Proportion {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::InvalidArgument("proportion must be nonempty".into()));
        }
        if pi.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("proportion entries must be finite and nonnegative".into()));
        }
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOL * pi.len().max(1) as f64 {
            return Err(Error::InvalidArgument(format!("proportion sums to {sum}, not 1")));
        }
        Ok(Proportion(pi))
    }

    pub fn uniform(k: usize) -> Self {
        Proportion(vec![1.0 / k as f64; k])
    }

    pub fn vertex(k: usize, a: usize) -> Self {
        let mut v = vec![0.0; k];
        v[a] = 1.0;
        Proportion(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Proportion {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Proportion::new(v)
    }
}

impl From<Proportion> for Vec<f64> {
    fn from(p: Proportion) -> Self {
        p.0
    }
}

impl std::ops::Index<usize> for Proportion {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `𝓘^π(θ) = Σ_a π(a) 𝓘_a(θ)`.
pub fn weighted_information(model: &ExperimentModel, theta: &DVector<f64>, pi: &[f64]) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(model.dim(), model.dim());
    for (a, &weight) in pi.iter().enumerate() {
        if weight != 0.0 {
            model.accumulate_information(&mut w, theta, ExperimentId(a), weight);
        }
    }
    w
}

/// `F_θ(π)`; `+∞` when `𝓘^π` is singular beyond the criterion's tolerance.
pub fn f_value(model: &ExperimentModel, theta: &DVector<f64>, criterion: &Criterion, pi: &Proportion) -> Result<f64> {
    check_len(model, pi.as_slice())?;
    match f_value_strict(model, theta, criterion, pi) {
        Err(Error::NotPositiveDefinite { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

/// As [`f_value`] but raising `NotPositiveDefinite` instead of returning `+∞`.
pub fn f_value_strict(model: &ExperimentModel, theta: &DVector<f64>, criterion: &Criterion, pi: &Proportion) -> Result<f64> {
    check_len(model, pi.as_slice())?;
    let w = weighted_information(model, theta, pi.as_slice());
    let min = min_eigenvalue(&w);
    if min.is_nan() || min <= criterion.tol_pd() {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    criterion.evaluate_at_inverse(theta, &w)
}

fn raw_value(model: &ExperimentModel, theta: &DVector<f64>, criterion: &Criterion, pi: &[f64]) -> f64 {
    let w = weighted_information(model, theta, pi);
    let min = min_eigenvalue(&w);
    if min.is_nan() || min <= criterion.tol_pd() {
        return f64::INFINITY;
    }
    criterion.evaluate_at_inverse(theta, &w).unwrap_or(f64::INFINITY)
}

/// `∇_π F_θ(π)`; component `a` is minus the GI1 score of `a`.
pub fn f_gradient(model: &ExperimentModel, theta: &DVector<f64>, criterion: &Criterion, pi: &[f64]) -> Result<Vec<f64>> {
    let w = weighted_information(model, theta, pi);
    let m = criterion.gi1_matrix(theta, &w)?;
    Ok(model
        .ids()
        .map(|a| {
            let (idx, val) = model.design_vector(a);
            -model.info_weight(theta, a) * crate::linalg::sparse_quad_form(&m, idx, val)
        })
        .collect())
}

fn check_len(model: &ExperimentModel, pi: &[f64]) -> Result<()> {
    if pi.len() != model.len() {
        return Err(Error::DimensionMismatch {
            expected: model.len(),
            found: pi.len(),
        });
    }
    Ok(())
}

/// Euclidean projection onto `{π ≥ 0, Σπ = 1}` by sort-and-threshold.
pub fn project_simplex(v: &[f64]) -> Proportion {
    project_capped_simplex(v, 0.0)
}

/// Projection onto `{π ≥ floor, Σπ = 1}`; requires `floor · len < 1`.
fn project_capped_simplex(v: &[f64], floor: f64) -> Proportion {
    let k = v.len();
    let budget = 1.0 - floor * k as f64;
    let shifted: Vec<f64> = v.iter().map(|x| x - floor).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - budget) / (i + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    let mut out: Vec<f64> = shifted.iter().map(|x| (x - tau).max(0.0) + floor).collect();
    // absorb rounding so the entries sum to one
    let sum: f64 = out.iter().sum();
    if let Some(imax) = (0..k).max_by(|&a, &b| out[a].total_cmp(&out[b])) {
        out[imax] += 1.0 - sum;
        out[imax] = out[imax].max(0.0);
    }
    Proportion(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignOptions {
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Convergence certificate on the projected-gradient norm.
    pub tol: f64,
    /// Per-coordinate floor keeping iterates away from singular faces.
    pub floor: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            learning_rate: 0.001,
            max_iter: 10_000,
            tol: 1e-6,
            floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSolution {
    pub pi: Proportion,
    pub value: f64,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
}

/// Projected-gradient norm `‖π − P(π − η∇F)‖ / η`.
pub fn projected_gradient_norm(
    model: &ExperimentModel,
    theta: &DVector<f64>,
    criterion: &Criterion,
    pi: &Proportion,
    step: f64,
) -> Result<f64> {
    let grad = f_gradient(model, theta, criterion, pi.as_slice())?;
    let trial: Vec<f64> = pi.as_slice().iter().zip(&grad).map(|(p, g)| p - step * g).collect();
    let proj = project_simplex(&trial);
    Ok(pi
        .as_slice()
        .iter()
        .zip(proj.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
        / step)
}

/// Minimizes `F_θ` over the simplex by projected gradient descent from the
/// uniform proportion.
///
/// Each iteration tries the step `η`; if the objective does not decrease the
/// step is halved for that iteration only. Iterates live on the simplex
/// shrunk by `floor` per coordinate; the returned proportion is re-projected
/// onto the true simplex.
pub fn optimal_proportion(
    model: &ExperimentModel,
    theta: &DVector<f64>,
    criterion: &Criterion,
    opts: &DesignOptions,
) -> Result<DesignSolution> {
    model.check_theta(theta)?;
    let k = model.len();
    let floor = opts.floor.min(0.5 / k as f64);
    let mut pi = project_capped_simplex(&vec![1.0 / k as f64; k], floor).0;
    let mut value = raw_value(model, theta, criterion, &pi);
    if !value.is_finite() {
        return Err(Error::Identifiability(
            "weighted information is singular at the uniform proportion".into(),
        ));
    }
    let eta = opts.learning_rate;
    let mut norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let grad = f_gradient(model, theta, criterion, &pi)?;
        let full: Vec<f64> = pi.iter().zip(&grad).map(|(p, g)| p - eta * g).collect();
        let target = project_capped_simplex(&full, floor).0;
        norm = pi.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / eta;
        if norm <= opts.tol {
            break;
        }
        iterations += 1;
        let mut step = eta;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = pi.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            let cand = project_capped_simplex(&trial, floor).0;
            let v = raw_value(model, theta, criterion, &cand);
            // near the optimum decreases drop below rounding; allow that much slack
            if v <= value + 8.0 * f64::EPSILON * value.abs() {
                accepted = cand != pi;
                pi = cand;
                value = v;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let final_pi = project_simplex(&pi);
    let value = f_value(model, theta, criterion, &final_pi)?;
    let final_norm = projected_gradient_norm(model, theta, criterion, &final_pi, eta).unwrap_or(norm);
    let norm = norm.min(final_norm);
    if norm > opts.tol {
        return Err(Error::NonConvergence { iterations, norm });
    }
    Ok(DesignSolution {
        pi: final_pi,
        value,
        iterations,
        projected_gradient_norm: norm,
    })
}

/// Brute-force minimum of `F_θ` over the grid `{π : π(a) ∈ resolution·ℕ}`.
///
/// Exponential in the catalog size; meant as an oracle for small catalogs.
pub fn grid_minimum(
    model: &ExperimentModel,
    theta: &DVector<f64>,
    criterion: &Criterion,
    resolution: f64,
) -> Result<(Proportion, f64)> {
    let k = model.len();
    let steps = (1.0 / resolution).round() as usize;
    if k > 6 || steps == 0 {
        return Err(Error::InvalidArgument("grid oracle supports at most 6 experiments".into()));
    }
    let mut best = (Proportion::uniform(k), f64::INFINITY);
    let mut counts = vec![0usize; k];
    grid_walk(&mut counts, 0, steps, &mut |c| {
        let pi: Vec<f64> = c.iter().map(|&m| m as f64 / steps as f64).collect();
        let v = raw_value(model, theta, criterion, &pi);
        if v < best.1 {
            best = (Proportion(pi), v);
        }
    });
    Ok(best)
}

fn grid_walk(counts: &mut [usize], pos: usize, remaining: usize, visit: &mut impl FnMut(&[usize])) {
    if pos + 1 == counts.len() {
        counts[pos] = remaining;
        visit(counts);
        return;
    }
    for m in 0..=remaining {
        counts[pos] = m;
        grid_walk(counts, pos + 1, remaining - m, visit);
    }
}
