//! Box-constrained maximum-likelihood estimation.
//!
//! The rescaled log-likelihood depends on the data only through per-experiment
//! sufficient statistics, so [`History`] keeps those alongside the raw records
//! and every likelihood evaluation costs `O(#distinct experiments · nnz)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{add_sparse_outer, min_eigenvalue, mirror_upper};
use crate::models::{ExperimentId, ExperimentModel};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Sufficient {
    count: usize,
    sum_x: f64,
    sum_log_base: f64,
}

/// Ordered `(experiment, observation)` records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    records: Vec<(ExperimentId, f64)>,
    stats: BTreeMap<usize, Sufficient>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an observation after checking the id and the support.
    pub fn push(&mut self, model: &ExperimentModel, a: ExperimentId, x: f64) -> Result<()> {
        model.check_id(a)?;
        let log_base = model.base(a).log_base_measure(x).ok_or(Error::Support {
            experiment: a.0,
            value: x,
        })?;
        let s = self.stats.entry(a.0).or_default();
        s.count += 1;
        s.sum_x += x;
        s.sum_log_base += log_base;
        self.records.push((a, x));
        Ok(())
    }

    pub fn from_records(model: &ExperimentModel, records: &[(ExperimentId, f64)]) -> Result<Self> {
        let mut h = History::new();
        for &(a, x) in records {
            h.push(model, a, x)?;
        }
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[(ExperimentId, f64)] {
        &self.records
    }

    /// Selection counts per experiment, length `k`.
    pub fn counts(&self, k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        for (&a, s) in &self.stats {
            c[a] = s.count;
        }
        c
    }
}

/// Rescaled log-likelihood `lₙ(θ)` and its exact derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

fn loglik_value(model: &ExperimentModel, history: &History, theta: &DVector<f64>) -> f64 {
    let mut value = 0.0;
    for (&a, s) in &history.stats {
        let id = ExperimentId(a);
        let xi = model.predictor(theta, id);
        value += s.sum_x * xi - s.count as f64 * model.base(id).cumulant(xi) + s.sum_log_base;
    }
    value / history.len() as f64
}

/// `lₙ(θ) = (1/n) Σᵢ log f_{θ,aᵢ}(Xᵢ)` with gradient and Hessian.
///
/// The Hessian is `−(1/n) Σᵢ 𝓘_{aᵢ}(θ)`, which holds for every canonical
/// exponential family and does not depend on the responses.
pub fn loglik_parts(model: &ExperimentModel, history: &History, theta: &DVector<f64>) -> Result<LogLik> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("log-likelihood of an empty history".into()));
    }
    model.check_theta(theta)?;
    let n = history.len() as f64;
    let p = model.dim();
    let mut value = 0.0;
    let mut gradient = DVector::zeros(p);
    let mut hessian = DMatrix::zeros(p, p);
    for (&a, s) in &history.stats {
        let id = ExperimentId(a);
        let base = model.base(id);
        let xi = model.predictor(theta, id);
        let m = s.count as f64;
        value += s.sum_x * xi - m * base.cumulant(xi) + s.sum_log_base;
        let coef = model.predictor_sign(id) * (s.sum_x - m * base.mean(xi)) / n;
        let (idx, val) = model.design_vector(id);
        for (&i, &v) in idx.iter().zip(val) {
            gradient[i] += coef * v;
        }
        add_sparse_outer(&mut hessian, -m * base.variance(xi) / n, idx, val);
    }
    mirror_upper(&mut hessian);
    Ok(LogLik {
        value: value / n,
        gradient,
        hessian,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    /// Stop once the projected-gradient norm is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from the previous estimate when one is supplied.
    pub warm_start: bool,
}

impl Default for MleOptions {
    fn default() -> Self {
        MleOptions {
            tol: 1e-8,
            max_iter: 200,
            warm_start: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleReport {
    pub theta: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    pub projected_gradient_norm: f64,
    /// Objective after each accepted iterate, starting point first.
    pub trace: Vec<f64>,
    /// `Σᵢ 𝓘_{aᵢ}` was numerically singular at the starting point.
    pub singular_start: bool,
}

const ARMIJO: f64 = 1e-4;
// objective rounding allowed per accepted step
const MONOTONE_SLACK: f64 = 1e-13;

/// `‖P(θ + ∇l) − θ‖`, zero exactly at KKT points of the box problem.
fn projected_gradient_norm(model: &ExperimentModel, theta: &DVector<f64>, g: &DVector<f64>) -> f64 {
    let bbox = model.bbox();
    (0..theta.len())
        .map(|i| {
            let moved = (theta[i] + g[i]).clamp(bbox.lower()[i], bbox.upper()[i]);
            (moved - theta[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

/// Newton direction on the free coordinates; `None` when the reduced
/// Hessian is not safely negative definite.
fn newton_direction(parts: &LogLik, free: &[usize]) -> Option<DVector<f64>> {
    let p = parts.gradient.len();
    let f = free.len();
    if f == 0 {
        return None;
    }
    let neg_h = DMatrix::from_fn(f, f, |r, c| -parts.hessian[(free[r], free[c])]);
    let scale = neg_h.diagonal().amax().max(f64::MIN_POSITIVE);
    if min_eigenvalue(&neg_h) <= 1e-12 * scale {
        return None;
    }
    let g = DVector::from_fn(f, |r, _| parts.gradient[free[r]]);
    let step = neg_h.cholesky()?.solve(&g);
    let mut d = DVector::zeros(p);
    for (r, &i) in free.iter().enumerate() {
        d[i] = step[r];
    }
    Some(d)
}

/// Maximizes `lₙ` over the model's box by projected Newton with an active
/// set and Armijo backtracking, falling back to projected gradient steps.
pub fn mle(model: &ExperimentModel, history: &History, start: Option<&DVector<f64>>, opts: &MleOptions) -> Result<MleReport> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("MLE requested on an empty history".into()));
    }
    let bbox = model.bbox();
    let mut theta = match start {
        Some(s) if opts.warm_start => {
            model.check_theta(s)?;
            bbox.project(s)
        }
        _ => bbox.center(),
    };
    let mut parts = loglik_parts(model, history, &theta)?;
    let singular_start = {
        let info = -&parts.hessian;
        min_eigenvalue(&info) <= 1e-12 * info.diagonal().amax().max(f64::MIN_POSITIVE)
    };
    let mut trace = vec![parts.value];
    let mut norm = projected_gradient_norm(model, &theta, &parts.gradient);
    let mut iterations = 0;
    while norm > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let width = bbox.upper() - bbox.lower();
        let eps = |i: usize| 1e-12 * width[i].max(1.0);
        let free: Vec<usize> = (0..theta.len())
            .filter(|&i| {
                let g = parts.gradient[i];
                !((theta[i] <= bbox.lower()[i] + eps(i) && g < 0.0) || (theta[i] >= bbox.upper()[i] - eps(i) && g > 0.0))
            })
            .collect();
        let gradient_dir = {
            let mut d = DVector::zeros(theta.len());
            for &i in &free {
                d[i] = parts.gradient[i];
            }
            d
        };
        let mut directions = Vec::with_capacity(2);
        if let Some(d) = newton_direction(&parts, &free) {
            directions.push(d);
        }
        directions.push(gradient_dir);

        let mut moved = false;
        for dir in directions {
            let mut t = 1.0;
            for _ in 0..60 {
                let cand = bbox.project(&(&theta + &dir * t));
                let value = loglik_value(model, history, &cand);
                let gain = parts.gradient.dot(&(&cand - &theta));
                if value >= parts.value + ARMIJO * gain - MONOTONE_SLACK && cand != theta {
                    theta = cand;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if moved {
                break;
            }
        }
        if !moved {
            break;
        }
        parts = loglik_parts(model, history, &theta)?;
        trace.push(parts.value);
        norm = projected_gradient_norm(model, &theta, &parts.gradient);
    }
    if norm > opts.tol {
        return Err(Error::NonConvergence { iterations, norm });
    }
    Ok(MleReport {
        theta,
        value: parts.value,
        iterations,
        projected_gradient_norm: norm,
        trace,
        singular_start,
    })
}

/// Exhaustive search of `lₙ` on a grid over a 2-D box, refined around the
/// coarse winner. Valid because `lₙ` is concave.
pub fn grid_search_2d(model: &ExperimentModel, history: &History, resolution: f64) -> Result<DVector<f64>> {
    if model.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: model.dim() });
    }
    let lo = model.bbox().lower().clone();
    let hi = model.bbox().upper().clone();
    let scan = |lo: &DVector<f64>, hi: &DVector<f64>, h: f64| {
        let steps = |i: usize| ((hi[i] - lo[i]) / h).round() as usize;
        let mut best = (f64::NEG_INFINITY, lo.clone());
        for r in 0..=steps(0) {
            for c in 0..=steps(1) {
                let theta = DVector::from_vec(vec![(lo[0] + r as f64 * h).min(hi[0]), (lo[1] + c as f64 * h).min(hi[1])]);
                let v = loglik_value(model, history, &theta);
                if v > best.0 {
                    best = (v, theta);
                }
            }
        }
        best.1
    };
    let coarse_h = (resolution * 20.0).max(resolution);
    let coarse = scan(&lo, &hi, coarse_h);
    // snap the refinement window to the global grid so results are on it
    let snap = |v: f64, i: usize| lo[i] + ((v - lo[i]) / resolution).round() * resolution;
    let wlo = DVector::from_fn(2, |i, _| snap((coarse[i] - 2.0 * coarse_h).max(lo[i]), i));
    let whi = DVector::from_fn(2, |i, _| (coarse[i] + 2.0 * coarse_h).min(hi[i]));
    Ok(scan(&wlo, &whi, resolution))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{two_trait_demo, ExperimentSpec, ModelKind, ParameterBox};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_logistic() -> ExperimentModel {
        ExperimentModel::instantiate(
            ModelKind::M2pl,
            vec![ExperimentSpec::M2pl { z: vec![1.0], b: 0.0 }],
            ParameterBox::cube(1, 3.0).unwrap(),
        )
        .unwrap()
    }

    fn random_history(model: &ExperimentModel, theta: &DVector<f64>, n: usize, seed: u64) -> History {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h = History::new();
        for i in 0..n {
            let a = ExperimentId(if i < model.len() { i } else { rng.random_range(0..model.len()) });
            let x = model.sample(theta, a, &mut rng);
            h.push(model, a, x).unwrap();
        }
        h
    }

    #[test]
    fn value_examples() {
        let m = single_logistic();
        let h = History::from_records(&m, &[(ExperimentId(0), 1.0), (ExperimentId(0), 0.0)]).unwrap();
        let parts = loglik_parts(&m, &h, &DVector::zeros(1)).unwrap();
        assert!((parts.value - 0.5_f64.ln()).abs() < 1e-15);
        let est = mle(&m, &h, None, &MleOptions::default()).unwrap();
        assert!(est.theta[0].abs() < 1e-8);
    }

    #[test]
    fn monotone_likelihood_hits_the_box() {
        let m = single_logistic();
        let h = History::from_records(&m, &[(ExperimentId(0), 1.0); 5]).unwrap();
        let est = mle(&m, &h, None, &MleOptions::default()).unwrap();
        assert_eq!(est.theta[0], 3.0);
    }

    #[test]
    fn support_errors() {
        let m = single_logistic();
        let mut h = History::new();
        assert!(matches!(h.push(&m, ExperimentId(0), 0.5), Err(Error::Support { .. })));
        assert!(h.push(&m, ExperimentId(3), 1.0).is_err());
        assert!(h.is_empty());
    }

    #[test]
    fn value_matches_per_record_densities() {
        let demo = two_trait_demo();
        let h = random_history(&demo, &DVector::from_vec(vec![1.0, 0.0]), 40, 3);
        let theta = DVector::from_vec(vec![0.3, -0.7]);
        let direct: f64 = h.records().iter().map(|&(a, x)| demo.log_density(&theta, a, x).unwrap()).sum::<f64>() / 40.0;
        assert!((loglik_parts(&demo, &h, &theta).unwrap().value - direct).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let demo = two_trait_demo();
        let h = random_history(&demo, &DVector::from_vec(vec![1.0, 0.0]), 50, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let theta = DVector::from_fn(2, |_, _| rng.random_range(-2.5..2.5));
            let parts = loglik_parts(&demo, &h, &theta).unwrap();
            let step = 1e-5;
            for i in 0..2 {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[i] += step;
                dn[i] -= step;
                let lu = loglik_parts(&demo, &h, &up).unwrap();
                let ld = loglik_parts(&demo, &h, &dn).unwrap();
                let fd = (lu.value - ld.value) / (2.0 * step);
                assert!((fd - parts.gradient[i]).abs() <= 1e-6 * parts.gradient[i].abs().max(1e-3));
                let fd_h = (&lu.gradient - &ld.gradient) / (2.0 * step);
                for j in 0..2 {
                    assert!((fd_h[j] - parts.hessian[(j, i)]).abs() <= 1e-6 * parts.hessian[(j, i)].abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn btl_gradient_sign() {
        let specs = vec![ExperimentSpec::Btl { i: 0, j: 1 }];
        let m = ExperimentModel::instantiate(ModelKind::Btl, specs, ParameterBox::cube(1, 3.0).unwrap()).unwrap();
        // object 0 beating object 1 three times out of four pushes θ₁ down
        let recs = [(ExperimentId(0), 1.0), (ExperimentId(0), 1.0), (ExperimentId(0), 1.0), (ExperimentId(0), 0.0)];
        let h = History::from_records(&m, &recs).unwrap();
        let est = mle(&m, &h, None, &MleOptions::default()).unwrap();
        assert!((est.theta[0] + 3.0_f64.ln()).abs() < 1e-8, "{}", est.theta[0]);
    }

    #[test]
    fn stationary_and_monotone_on_demo() {
        let demo = two_trait_demo();
        let h = random_history(&demo, &DVector::from_vec(vec![1.0, 0.0]), 200, 9);
        let est = mle(&demo, &h, None, &MleOptions::default()).unwrap();
        assert!(demo.bbox().contains(&est.theta));
        if est.theta.iter().all(|v| v.abs() < 3.0) {
            assert!(loglik_parts(&demo, &h, &est.theta).unwrap().gradient.amax() <= 1e-8);
        }
        for w in est.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        // warm start lands on the same point
        let warm = mle(&demo, &h, Some(&DVector::from_vec(vec![-2.0, 2.0])), &MleOptions::default()).unwrap();
        assert!((&warm.theta - &est.theta).amax() < 1e-5);
    }

    #[test]
    fn nonconvergence_reports_norm() {
        let demo = two_trait_demo();
        let h = random_history(&demo, &DVector::from_vec(vec![1.0, 0.0]), 30, 1);
        let opts = MleOptions { max_iter: 0, ..Default::default() };
        match mle(&demo, &h, None, &opts) {
            Err(Error::NonConvergence { iterations: 0, norm }) => assert!(norm > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn matches_grid_oracle() {
        let demo = two_trait_demo();
        for seed in 0..3 {
            let h = random_history(&demo, &DVector::from_vec(vec![1.0, 0.0]), 30, 100 + seed);
            let est = mle(&demo, &h, None, &MleOptions::default()).unwrap();
            let grid = grid_search_2d(&demo, &h, 1e-3).unwrap();
            assert!((&est.theta - &grid).amax() <= 2e-3, "{est:?} vs {grid}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn estimate_is_feasible(seed in 0u64..10_000, n in 3usize..60) {
            let demo = two_trait_demo();
            let h = random_history(&demo, &DVector::from_vec(vec![2.5, -2.5]), n, seed);
            let est = mle(&demo, &h, None, &MleOptions::default()).unwrap();
            for i in 0..2 {
                prop_assert!(est.theta[i] >= -3.0 && est.theta[i] <= 3.0);
            }
        }
    }
}
