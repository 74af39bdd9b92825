//! Experiment catalogs: the three built-in families (exponential-family GLM,
//! M2PL item response, Bradley–Terry–Luce pairwise comparison) share one
//! structure. Every experiment has a sparse design vector `z_a`, an offset
//! `b_a` and a base function `B_a`; the natural parameter is
//! `ξ = s·z_aᵀθ + b_a` where the sign `s` is `-1` for BTL pairs (so that
//! `x = 1` means the first object of the pair wins) and `+1` otherwise.

mod base;
mod catalog;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use base::{sigmoid, BaseFn, BaseFunction, BaseRegistry, Gaussian, Logit, PROB_CLAMP};
pub use catalog::{CatalogBox, CatalogFile, ExperimentRecord};

use crate::error::{Error, Result};

pub type ParameterVector = DVector<f64>;

/// Index into an experiment catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExperimentId(pub usize);

impl ExperimentId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Axis-aligned parameter box `∏ [lᵢ, uᵢ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if let Some(i) = (0..lower.len()).find(|&i| lower[i].is_nan() || upper[i].is_nan() || lower[i] >= upper[i]) {
            return Err(Error::InvalidArgument(format!(
                "box coordinate {i}: lower {} must be below upper {}",
                lower[i], upper[i]
            )));
        }
        Ok(ParameterBox {
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
        })
    }

    /// The cube `[-r, r]^p`.
    pub fn cube(p: usize, r: f64) -> Result<Self> {
        ParameterBox::new(vec![-r; p], vec![r; p])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }
    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    pub fn project(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            theta.len(),
            theta
                .iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(self.lower[i], self.upper[i])),
        )
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .enumerate()
                .all(|(i, &v)| v >= self.lower[i] && v <= self.upper[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Glm,
    M2pl,
    Btl,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Glm => "glm",
            ModelKind::M2pl => "m2pl",
            ModelKind::Btl => "btl",
        })
    }
}

#[derive(Debug, Clone)]
pub enum ExperimentSpec {
    Glm { z: Vec<f64>, b: f64, base: BaseFn },
    M2pl { z: Vec<f64>, b: f64 },
    /// Pair of objects `i < j`; object 0 is the reference with score 0.
    Btl { i: usize, j: usize },
}

impl ExperimentSpec {
    fn kind(&self) -> ModelKind {
        match self {
            ExperimentSpec::Glm { .. } => ModelKind::Glm,
            ExperimentSpec::M2pl { .. } => ModelKind::M2pl,
            ExperimentSpec::Btl { .. } => ModelKind::Btl,
        }
    }
}

/// Low-rank factor `L_a(θ)` with `L Lᵀ = 𝓘_a(θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherFactor {
    pub matrix: DMatrix<f64>,
    pub support: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Experiment {
    spec: ExperimentSpec,
    idx: Vec<usize>,
    val: Vec<f64>,
    offset: f64,
    sign: f64,
    base: BaseFn,
}

impl Experiment {
    fn predictor(&self, theta: &DVector<f64>) -> f64 {
        let dot: f64 = self.idx.iter().zip(&self.val).map(|(&i, &v)| v * theta[i]).sum();
        self.sign * dot + self.offset
    }
}

/// A validated experiment catalog over a parameter box. Immutable once built.
#[derive(Debug, Clone)]
pub struct ExperimentModel {
    kind: ModelKind,
    p: usize,
    experiments: Vec<Experiment>,
    bbox: ParameterBox,
}

impl ExperimentModel {
    /// Validates and builds a catalog.
    ///
    /// GLM and M2PL catalogs must have design vectors spanning `ℝ^p`; BTL
    /// catalogs must form a connected comparison graph on `{0, …, p}`.
    pub fn instantiate(kind: ModelKind, specs: Vec<ExperimentSpec>, bbox: ParameterBox) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("experiment catalog is empty".into()));
        }
        let p = bbox.dim();
        if p == 0 {
            return Err(Error::InvalidArgument("parameter dimension must be positive".into()));
        }
        let mut experiments = Vec::with_capacity(specs.len());
        for (a, spec) in specs.into_iter().enumerate() {
            if spec.kind() != kind {
                return Err(Error::InvalidArgument(format!(
                    "experiment {a} is {} but the catalog kind is {kind}",
                    spec.kind()
                )));
            }
            experiments.push(Self::build_experiment(a, spec, p)?);
        }
        let model = ExperimentModel {
            kind,
            p,
            experiments,
            bbox,
        };
        model.check_identifiable()?;
        Ok(model)
    }

    fn build_experiment(a: usize, spec: ExperimentSpec, p: usize) -> Result<Experiment> {
        let linear = |z: &[f64]| -> Result<(Vec<usize>, Vec<f64>)> {
            if z.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: z.len(),
                });
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("experiment {a}: non-finite design vector")));
            }
            Ok(z.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).unzip())
        };
        let exp = match &spec {
            ExperimentSpec::Glm { z, b, base } => {
                let (idx, val) = linear(z)?;
                Experiment {
                    idx,
                    val,
                    offset: *b,
                    sign: 1.0,
                    base: base.clone(),
                    spec,
                }
            }
            ExperimentSpec::M2pl { z, b } => {
                let (idx, val) = linear(z)?;
                Experiment {
                    idx,
                    val,
                    offset: *b,
                    sign: 1.0,
                    base: BaseFn::logit(),
                    spec,
                }
            }
            &ExperimentSpec::Btl { i, j } => {
                if !(i < j && j <= p) {
                    return Err(Error::InvalidArgument(format!(
                        "experiment {a}: pair ({i}, {j}) must satisfy 0 <= i < j <= {p}"
                    )));
                }
                // z = e_j − e_i with e_0 = 0; coordinates are shifted by one
                let mut idx = Vec::with_capacity(2);
                let mut val = Vec::with_capacity(2);
                if i > 0 {
                    idx.push(i - 1);
                    val.push(-1.0);
                }
                idx.push(j - 1);
                val.push(1.0);
                Experiment {
                    idx,
                    val,
                    offset: 0.0,
                    sign: -1.0,
                    base: BaseFn::logit(),
                    spec,
                }
            }
        };
        Ok(exp)
    }

    fn check_identifiable(&self) -> Result<()> {
        match self.kind {
            ModelKind::Btl => {
                let mut dsu = DisjointSets::new(self.p + 1);
                for e in &self.experiments {
                    if let ExperimentSpec::Btl { i, j } = e.spec {
                        dsu.union(i, j);
                    }
                }
                let components = dsu.components();
                if components > 1 {
                    return Err(Error::Identifiability(format!(
                        "comparison graph on {} objects has {components} components",
                        self.p + 1
                    )));
                }
            }
            ModelKind::Glm | ModelKind::M2pl => {
                let mut gram = DMatrix::zeros(self.p, self.p);
                for e in &self.experiments {
                    crate::linalg::add_sparse_outer(&mut gram, 1.0, &e.idx, &e.val);
                }
                let eig = nalgebra::SymmetricEigen::new(gram).eigenvalues;
                let max = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let rank = eig.iter().filter(|v| **v > 1e-10 * max.max(1e-300)).count();
                if max == 0.0 || rank < self.p {
                    return Err(Error::Identifiability(format!(
                        "design vectors span dimension {} < {}",
                        if max == 0.0 { 0 } else { rank },
                        self.p
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Parameter dimension `p`.
    pub fn dim(&self) -> usize {
        self.p
    }

    /// Catalog size `|𝒜|`.
    pub fn len(&self) -> usize {
        self.experiments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiments.is_empty()
    }

    pub fn bbox(&self) -> &ParameterBox {
        &self.bbox
    }

    pub fn spec(&self, a: ExperimentId) -> &ExperimentSpec {
        &self.experiments[a.0].spec
    }

    pub fn ids(&self) -> impl Iterator<Item = ExperimentId> {
        (0..self.experiments.len()).map(ExperimentId)
    }

    pub fn check_id(&self, a: ExperimentId) -> Result<()> {
        if a.0 < self.experiments.len() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "experiment {a} out of range for a catalog of {}",
                self.experiments.len()
            )))
        }
    }

    pub fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        if theta.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("parameter has non-finite entries".into()));
        }
        Ok(())
    }

    /// Natural parameter `ξ_a(θ)`.
    pub fn predictor(&self, theta: &DVector<f64>, a: ExperimentId) -> f64 {
        self.experiments[a.0].predictor(theta)
    }

    pub fn base(&self, a: ExperimentId) -> &BaseFn {
        &self.experiments[a.0].base
    }

    /// Nonzero entries of the design vector `z_a`.
    pub fn design_vector(&self, a: ExperimentId) -> (&[usize], &[f64]) {
        let e = &self.experiments[a.0];
        (&e.idx, &e.val)
    }

    /// `s` in `ξ_a(θ) = s·z_aᵀθ + b_a`; −1 for BTL, +1 otherwise.
    pub fn predictor_sign(&self, a: ExperimentId) -> f64 {
        self.experiments[a.0].sign
    }

    /// Scalar `B″_a(ξ)` so that `𝓘_a(θ) = B″ z_a z_aᵀ`.
    pub fn info_weight(&self, theta: &DVector<f64>, a: ExperimentId) -> f64 {
        let e = &self.experiments[a.0];
        e.base.variance(e.predictor(theta))
    }

    fn check_support(&self, a: ExperimentId, x: f64) -> Result<f64> {
        self.experiments[a.0]
            .base
            .log_base_measure(x)
            .ok_or(Error::Support {
                experiment: a.0,
                value: x,
            })
    }

    pub fn log_density(&self, theta: &DVector<f64>, a: ExperimentId, x: f64) -> Result<f64> {
        let log_base = self.check_support(a, x)?;
        let e = &self.experiments[a.0];
        let xi = e.predictor(theta);
        if e.base.is_binary() {
            let prob = e.base.mean(xi).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            Ok(if x == 1.0 { prob.ln() } else { (1.0 - prob).ln() })
        } else {
            Ok(log_base + x * xi - e.base.cumulant(xi))
        }
    }

    /// `∇_θ log f_{θ,a}(x) = s (x − B′(ξ)) z_a`.
    pub fn score(&self, theta: &DVector<f64>, a: ExperimentId, x: f64) -> Result<DVector<f64>> {
        self.check_support(a, x)?;
        let e = &self.experiments[a.0];
        let resid = x - e.base.mean(e.predictor(theta));
        let mut g = DVector::zeros(self.p);
        for (&i, &v) in e.idx.iter().zip(&e.val) {
            g[i] = e.sign * resid * v;
        }
        Ok(g)
    }

    pub fn fisher_information(&self, theta: &DVector<f64>, a: ExperimentId) -> DMatrix<f64> {
        let e = &self.experiments[a.0];
        let mut m = DMatrix::zeros(self.p, self.p);
        crate::linalg::add_sparse_outer(&mut m, self.info_weight(theta, a), &e.idx, &e.val);
        m
    }

    /// `target += weight · 𝓘_a(θ)` without forming a dense intermediate.
    pub fn accumulate_information(&self, target: &mut DMatrix<f64>, theta: &DVector<f64>, a: ExperimentId, weight: f64) {
        let e = &self.experiments[a.0];
        let w = weight * self.info_weight(theta, a);
        crate::linalg::add_sparse_outer(target, w, &e.idx, &e.val);
    }

    /// Rank-one factor `√B″ · z_a`.
    pub fn fisher_factor(&self, theta: &DVector<f64>, a: ExperimentId) -> FisherFactor {
        let e = &self.experiments[a.0];
        let scale = self.info_weight(theta, a).sqrt();
        let mut matrix = DMatrix::zeros(self.p, 1);
        for (&i, &v) in e.idx.iter().zip(&e.val) {
            matrix[(i, 0)] = scale * v;
        }
        FisherFactor {
            matrix,
            support: e.idx.clone(),
        }
    }

    pub fn sample<R: RngCore>(&self, theta: &DVector<f64>, a: ExperimentId, rng: &mut R) -> f64 {
        let e = &self.experiments[a.0];
        e.base.sample(e.predictor(theta), rng)
    }

    /// Mean response `B′(ξ)`; the success probability for binary families.
    pub fn mean_response(&self, theta: &DVector<f64>, a: ExperimentId) -> f64 {
        let e = &self.experiments[a.0];
        e.base.mean(e.predictor(theta))
    }

    /// Score of each object for a BTL model: `(0, θ₁, …, θ_p)`.
    pub fn object_scores(&self, theta: &DVector<f64>) -> Vec<f64> {
        std::iter::once(0.0).chain(theta.iter().copied()).collect()
    }
}

/// Catalog with two latent traits and three Bernoulli items whose predictors
/// are `θ₁ − 0.1`, `θ₂` and `θ₁/2 + θ₂`, over the box `[−3, 3]²`.
pub fn two_trait_demo() -> ExperimentModel {
    let specs = vec![
        ExperimentSpec::M2pl { z: vec![1.0, 0.0], b: -0.1 },
        ExperimentSpec::M2pl { z: vec![0.0, 1.0], b: 0.0 },
        ExperimentSpec::M2pl { z: vec![0.5, 1.0], b: 0.0 },
    ];
    ExperimentModel::instantiate(ModelKind::M2pl, specs, ParameterBox::cube(2, 3.0).expect("valid box"))
        .expect("demo catalog is identifiable")
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        DisjointSets { parent: (0..n).collect() }
    }
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
    fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&x| self.find(x) == x).count()
    }
}
