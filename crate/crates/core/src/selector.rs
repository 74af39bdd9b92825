//! Experiment selection: the greedy information rules GI0 and GI1 and the
//! comparison baselines, over a [`SelectionState`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, CriterionKind};
use crate::design::Proportion;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, sparse_quad_form, FlooredEigen, EIGEN_FLOOR, TOL_PD};
use crate::models::{ExperimentId, ExperimentModel, ModelKind};

/// Running counts, current estimate and the cached weighted information
/// `𝓘(θ̂; a_n) = (1/n) Σ_a m_a 𝓘_a(θ̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionState {
    counts: Vec<usize>,
    n: usize,
    n0: usize,
    theta_hat: DVector<f64>,
    info: DMatrix<f64>,
}

impl SelectionState {
    /// Seeds the state with the initialization experiments and checks that
    /// `Σᵢ 𝓘_{a⁰ᵢ}(θ̂₀)` is nonsingular.
    pub fn new(model: &ExperimentModel, initial: &[ExperimentId], theta0: DVector<f64>) -> Result<Self> {
        Self::with_tolerance(model, initial, theta0, TOL_PD)
    }

    pub fn with_tolerance(model: &ExperimentModel, initial: &[ExperimentId], theta0: DVector<f64>, tol_pd: f64) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::InvalidArgument("at least one initial experiment is required".into()));
        }
        model.check_theta(&theta0)?;
        let mut counts = vec![0usize; model.len()];
        for &a in initial {
            model.check_id(a)?;
            counts[a.0] += 1;
        }
        let mut state = SelectionState {
            counts,
            n: initial.len(),
            n0: initial.len(),
            theta_hat: theta0,
            info: DMatrix::zeros(model.dim(), model.dim()),
        };
        state.recompute(model);
        let min = min_eigenvalue(&(&state.info * state.n as f64));
        if min.is_nan() || min <= tol_pd {
            return Err(Error::SingularInitialization { min_eigenvalue: min });
        }
        Ok(state)
    }

    fn recompute(&mut self, model: &ExperimentModel) {
        let mut info = DMatrix::zeros(model.dim(), model.dim());
        let n = self.n as f64;
        for (a, &m) in self.counts.iter().enumerate() {
            if m > 0 {
                model.accumulate_information(&mut info, &self.theta_hat, ExperimentId(a), m as f64 / n);
            }
        }
        crate::linalg::mirror_upper(&mut info);
        self.info = info;
    }

    /// Records a selection of `a` and refreshes the cache at `theta_hat`.
    pub fn update(&mut self, model: &ExperimentModel, a: ExperimentId, theta_hat: DVector<f64>) {
        self.counts[a.0] += 1;
        self.n += 1;
        self.theta_hat = theta_hat;
        self.recompute(model);
    }

    /// Moves the estimate without recording a selection.
    pub fn refresh(&mut self, model: &ExperimentModel, theta_hat: DVector<f64>) {
        self.theta_hat = theta_hat;
        self.recompute(model);
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn n0(&self) -> usize {
        self.n0
    }
    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }
    pub fn weighted_info(&self) -> &DMatrix<f64> {
        &self.info
    }

    /// Empirical frequencies `π̄ₙ = m / n`.
    pub fn proportions(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.counts.iter().map(|&m| m as f64 / n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorOptions {
    /// Adds `ridge · I` to the cached information before selection.
    pub ridge: f64,
    pub tol_pd: f64,
    /// Fan candidate scoring out across the rayon pool.
    pub parallel: bool,
    /// Scores within this relative distance of the best are ties.
    pub tie_tol: f64,
}

impl Default for SelectorOptions {
    fn default() -> Self {
        SelectorOptions {
            ridge: 0.0,
            tol_pd: TOL_PD,
            parallel: false,
            tie_tol: 1e-12,
        }
    }
}

/// Which GI1 implementation to use. All paths select the same experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gi1Path {
    /// Accelerated when factors are available (always for built-in families).
    Auto,
    /// `M = Σ̂ ∇G Σ̂` once, then `tr(L_aᵀ M L_a)` per candidate.
    Accelerated,
    /// `P(1−P) z_aᵀ 𝓘^{−q−1} z_a` for `Φ_q` on M2PL/BTL.
    PhiSimplified,
    /// Dense `directional_score` per candidate.
    Generic,
}

fn effective_info(state: &SelectionState, opts: &SelectorOptions) -> Result<DMatrix<f64>> {
    let mut w = state.info.clone();
    if opts.ridge > 0.0 {
        for i in 0..w.nrows() {
            w[(i, i)] += opts.ridge;
        }
    }
    let min = min_eigenvalue(&w);
    if min.is_nan() || min <= opts.tol_pd {
        return Err(Error::NotPositiveDefinite { min_eigenvalue: min });
    }
    Ok(w)
}

/// Index of the best score; scores within `tol` (relative) of the best count
/// as ties and the earliest wins.
fn pick(scores: &[f64], maximize: bool, tol: f64) -> usize {
    let best = scores
        .iter()
        .copied()
        .fold(if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, |acc, s| {
            if maximize {
                acc.max(s)
            } else {
                acc.min(s)
            }
        });
    let slack = tol * best.abs().max(f64::MIN_POSITIVE);
    scores
        .iter()
        .position(|&s| if maximize { s >= best - slack } else { s <= best + slack })
        .unwrap_or(0)
}

fn score_candidates<F>(candidates: &[ExperimentId], parallel: bool, f: F) -> Result<Vec<f64>>
where
    F: Fn(ExperimentId) -> Result<f64> + Sync,
{
    if parallel {
        candidates.par_iter().map(|&a| f(a)).collect()
    } else {
        candidates.iter().map(|&a| f(a)).collect()
    }
}

fn all_ids(model: &ExperimentModel) -> Vec<ExperimentId> {
    model.ids().collect()
}

fn nonempty(candidates: &[ExperimentId]) -> Result<()> {
    if candidates.is_empty() {
        Err(Error::Exhausted)
    } else {
        Ok(())
    }
}

pub fn select_gi0(state: &SelectionState, model: &ExperimentModel, criterion: &Criterion, opts: &SelectorOptions) -> Result<ExperimentId> {
    select_gi0_among(state, model, criterion, opts, &all_ids(model))
}

/// `argmin_a G_θ̂[{(n 𝓘(θ̂; a_n) + 𝓘_a(θ̂)) / (n+1)}⁻¹]` over `candidates`.
pub fn select_gi0_among(
    state: &SelectionState,
    model: &ExperimentModel,
    criterion: &Criterion,
    opts: &SelectorOptions,
    candidates: &[ExperimentId],
) -> Result<ExperimentId> {
    nonempty(candidates)?;
    let n = state.n as f64;
    let base = effective_info(state, opts)? * (n / (n + 1.0));
    let theta = &state.theta_hat;
    let scores = score_candidates(candidates, opts.parallel, |a| {
        let mut next = base.clone();
        model.accumulate_information(&mut next, theta, a, 1.0 / (n + 1.0));
        criterion.evaluate_at_inverse(theta, &next)
    })?;
    Ok(candidates[pick(&scores, false, opts.tie_tol)])
}

pub fn select_gi1(state: &SelectionState, model: &ExperimentModel, criterion: &Criterion, opts: &SelectorOptions) -> Result<ExperimentId> {
    select_gi1_among(state, model, criterion, opts, &all_ids(model), Gi1Path::Auto)
}

/// `argmax_a tr[∇G_θ̂(Σ̂ₙ) Σ̂ₙ 𝓘_a(θ̂) Σ̂ₙ]` over `candidates`.
pub fn select_gi1_among(
    state: &SelectionState,
    model: &ExperimentModel,
    criterion: &Criterion,
    opts: &SelectorOptions,
    candidates: &[ExperimentId],
    path: Gi1Path,
) -> Result<ExperimentId> {
    nonempty(candidates)?;
    let scores = gi1_scores(state, model, criterion, opts, candidates, path)?;
    Ok(candidates[pick(&scores, true, opts.tie_tol)])
}

/// GI1 scores of `candidates` along the chosen path. Paths agree up to a
/// positive factor (the simplified path drops the `Φ_q` prefactor).
pub fn gi1_scores(
    state: &SelectionState,
    model: &ExperimentModel,
    criterion: &Criterion,
    opts: &SelectorOptions,
    candidates: &[ExperimentId],
    path: Gi1Path,
) -> Result<Vec<f64>> {
    let w = effective_info(state, opts)?;
    let theta = &state.theta_hat;
    match path {
        Gi1Path::Auto | Gi1Path::Accelerated => {
            let m = criterion.gi1_matrix(theta, &w)?;
            score_candidates(candidates, opts.parallel, |a| {
                let factor = model.fisher_factor(theta, a);
                let vals: Vec<f64> = factor.support.iter().map(|&i| factor.matrix[(i, 0)]).collect();
                Ok(sparse_quad_form(&m, &factor.support, &vals))
            })
        }
        Gi1Path::PhiSimplified => {
            let q = match criterion.kind() {
                CriterionKind::PhiQ(q) => *q,
                _ => {
                    return Err(Error::InvalidArgument(
                        "the simplified GI1 path needs a Φ_q criterion".into(),
                    ))
                }
            };
            if model.kind() == ModelKind::Glm {
                return Err(Error::PolicyModelMismatch {
                    policy: "gi1 (simplified)".into(),
                    model: model.kind().to_string(),
                });
            }
            let power = FlooredEigen::new(&w, EIGEN_FLOOR).power(-q - 1.0);
            score_candidates(candidates, opts.parallel, |a| {
                let p = model.mean_response(theta, a);
                let (idx, val) = model.design_vector(a);
                Ok(p * (1.0 - p) * sparse_quad_form(&power, idx, val))
            })
        }
        Gi1Path::Generic => score_candidates(candidates, opts.parallel, |a| {
            criterion.directional_score(theta, &w, &model.fisher_information(theta, a))
        }),
    }
}

/// Selection policies.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Gi0,
    Gi1,
    Uniform,
    /// Draw `a` with probability `π*(a)`.
    OptRandom(Proportion),
    /// `argmin_a π̄ₙ(a) − π*(a)`.
    OptDeterministic(Proportion),
    /// BTL only: the pair with the closest estimated scores.
    Uncertainty,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Gi0 => "gi0",
            Policy::Gi1 => "gi1",
            Policy::Uniform => "uniform",
            Policy::OptRandom(_) => "opt-random",
            Policy::OptDeterministic(_) => "opt-det",
            Policy::Uncertainty => "uncertainty",
        }
    }

    pub fn validate(&self, model: &ExperimentModel) -> Result<()> {
        match self {
            Policy::OptRandom(pi) | Policy::OptDeterministic(pi) if pi.len() != model.len() => Err(Error::DimensionMismatch {
                expected: model.len(),
                found: pi.len(),
            }),
            Policy::Uncertainty if model.kind() != ModelKind::Btl => Err(Error::PolicyModelMismatch {
                policy: self.name().into(),
                model: model.kind().to_string(),
            }),
            _ => Ok(()),
        }
    }

    /// Whether the policy needs an optimal proportion before it can run.
    pub fn needs_optimal_proportion(&self) -> bool {
        matches!(self, Policy::OptRandom(_) | Policy::OptDeterministic(_))
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Name of a policy as written in configs; proportion-based policies get
/// their `π*` later.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyName {
    Gi0,
    Gi1,
    Uniform,
    OptRandom,
    OptDeterministic,
    Uncertainty,
}

impl PolicyName {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyName::Gi0 => "gi0",
            PolicyName::Gi1 => "gi1",
            PolicyName::Uniform => "uniform",
            PolicyName::OptRandom => "opt-random",
            PolicyName::OptDeterministic => "opt-det",
            PolicyName::Uncertainty => "uncertainty",
        }
    }

    pub fn with_proportion(self, pi: Option<Proportion>) -> Result<Policy> {
        let need = || Error::InvalidArgument(format!("policy `{}` needs an optimal proportion", self.as_str()));
        Ok(match self {
            PolicyName::Gi0 => Policy::Gi0,
            PolicyName::Gi1 => Policy::Gi1,
            PolicyName::Uniform => Policy::Uniform,
            PolicyName::Uncertainty => Policy::Uncertainty,
            PolicyName::OptRandom => Policy::OptRandom(pi.ok_or_else(need)?),
            PolicyName::OptDeterministic => Policy::OptDeterministic(pi.ok_or_else(need)?),
        })
    }
}

impl FromStr for PolicyName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gi0" => PolicyName::Gi0,
            "gi1" => PolicyName::Gi1,
            "uniform" => PolicyName::Uniform,
            "opt-random" => PolicyName::OptRandom,
            "opt-det" => PolicyName::OptDeterministic,
            "uncertainty" => PolicyName::Uncertainty,
            other => return Err(Error::InvalidArgument(format!("unknown policy `{other}`"))),
        })
    }
}

impl TryFrom<String> for PolicyName {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PolicyName> for String {
    fn from(p: PolicyName) -> Self {
        p.as_str().to_string()
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Selects with a non-greedy baseline policy over `candidates`.
pub fn select_baseline<R: Rng + ?Sized>(
    policy: &Policy,
    state: &SelectionState,
    model: &ExperimentModel,
    rng: &mut R,
    candidates: &[ExperimentId],
) -> Result<ExperimentId> {
    nonempty(candidates)?;
    policy.validate(model)?;
    match policy {
        Policy::Uniform => Ok(candidates[rng.random_range(0..candidates.len())]),
        Policy::OptRandom(pi) => {
            let total: f64 = candidates.iter().map(|a| pi[a.0]).sum();
            if total.is_nan() || total <= 0.0 {
                return Ok(candidates[rng.random_range(0..candidates.len())]);
            }
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            for &a in candidates {
                acc += pi[a.0];
                if u < acc {
                    return Ok(a);
                }
            }
            Ok(*candidates.iter().rev().find(|a| pi[a.0] > 0.0).expect("positive mass"))
        }
        Policy::OptDeterministic(pi) => {
            let freq = state.proportions();
            let gaps: Vec<f64> = candidates.iter().map(|a| freq[a.0] - pi[a.0]).collect();
            Ok(candidates[pick(&gaps, false, 0.0)])
        }
        Policy::Uncertainty => {
            let scores = model.object_scores(state.theta_hat());
            let gaps: Vec<f64> = candidates
                .iter()
                .map(|&a| match model.spec(a) {
                    crate::models::ExperimentSpec::Btl { i, j } => (scores[*i] - scores[*j]).abs(),
                    _ => unreachable!("validated as BTL"),
                })
                .collect();
            Ok(candidates[pick(&gaps, false, 0.0)])
        }
        Policy::Gi0 | Policy::Gi1 => Err(Error::InvalidArgument(format!(
            "`{policy}` is not a baseline policy"
        ))),
    }
}

/// Dispatches to the greedy rules or a baseline.
pub fn select<R: Rng + ?Sized>(
    policy: &Policy,
    state: &SelectionState,
    model: &ExperimentModel,
    criterion: &Criterion,
    opts: &SelectorOptions,
    rng: &mut R,
    candidates: &[ExperimentId],
) -> Result<ExperimentId> {
    match policy {
        Policy::Gi0 => select_gi0_among(state, model, criterion, opts, candidates),
        Policy::Gi1 => select_gi1_among(state, model, criterion, opts, candidates, Gi1Path::Auto),
        _ => select_baseline(policy, state, model, rng, candidates),
    }
}
