//! Simulation studies: single trajectories, Monte Carlo aggregates, random
//! comparison graphs and dataset replay.

pub mod graph;
pub mod metrics;
pub mod replay;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::criteria::Criterion;
use crate::design::{f_value, optimal_proportion, DesignOptions, Proportion};
use crate::error::{Error, Result};
use crate::estimator::MleOptions;
use crate::inference::{confidence_interval, normal_quantile, stopping_check, Functional, StoppingRule};
use crate::io::{parse_criterion, MetricRow, MetricsTable};
use crate::models::{two_trait_demo, CatalogFile, ExperimentId, ExperimentModel, ExperimentSpec, ModelKind};
use crate::selector::{Policy, PolicyName, SelectorOptions};
use crate::sequential::{EngineConfig, Sequential};

pub use graph::{gen_graph, random_regular, uniform_spanning_tree, ComparisonGraph, GraphKind};
pub use metrics::{kendall_tau, mean_stderr};
pub use replay::{catalog_graph, replay_sampler, run_replay, ReplayCurve, ReplayOptions, ReplaySampler};

/// Independent stream for replication `rep` of a study seeded with `seed`.
///
/// Streams depend only on `(seed, rep)`, so results do not depend on how
/// replications are scheduled across threads.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Experiments along a uniform spanning tree of a BTL catalog's graph.
pub(crate) fn tree_experiments<R: Rng + ?Sized>(model: &ExperimentModel, rng: &mut R) -> Vec<ExperimentId> {
    let mut first: BTreeMap<(usize, usize), ExperimentId> = BTreeMap::new();
    for a in model.ids() {
        if let ExperimentSpec::Btl { i, j } = model.spec(a) {
            first.entry(((*i).min(*j), (*i).max(*j))).or_insert(a);
        }
    }
    let tree = uniform_spanning_tree(&catalog_graph(model), rng);
    tree.edges.iter().map(|e| first[e]).collect()
}

/// `n₀ = 4p` initialization for BTL: a uniform spanning tree of the
/// comparison graph followed by `3p` further pairs drawn without
/// replacement (with replacement when the catalog has fewer than `3p`).
pub fn btl_initialization<R: Rng + ?Sized>(model: &ExperimentModel, rng: &mut R) -> Result<Vec<ExperimentId>> {
    if model.kind() != ModelKind::Btl {
        return Err(Error::PolicyModelMismatch {
            policy: "btl initialization".into(),
            model: model.kind().to_string(),
        });
    }
    let p = model.dim();
    let k = model.len();
    let mut init = tree_experiments(model, rng);
    if k >= 3 * p {
        init.extend(sample_indices(rng, k, 3 * p).into_iter().map(ExperimentId));
    } else {
        init.extend((0..3 * p).map(|_| ExperimentId(rng.random_range(0..k))));
    }
    Ok(init)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBtl {
    pub p: usize,
    pub graph: GraphKind,
    /// `θ*` is drawn iid uniform on `(−theta_range, theta_range)`.
    #[serde(default = "default_theta_range")]
    pub theta_range: f64,
    /// Parameter box `[−radius, radius]^p`.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_theta_range() -> f64 {
    2.0
}
fn default_radius() -> f64 {
    3.0
}

/// Where a study's catalog comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// `"two_trait_demo"`.
    Builtin(String),
    Catalog(CatalogFile),
    /// Path to a catalog JSON file, relative to the study file.
    CatalogPath(PathBuf),
    /// A fresh graph and truth per replication.
    SyntheticBtl(SyntheticBtl),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Each catalog experiment once, in order.
    Cycle,
    /// Spanning tree plus `3p` random pairs.
    Btl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitSpec {
    Explicit(Vec<usize>),
    Named(InitKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSpec {
    /// Functional in text form, e.g. `d(-0.5454216;-0.8381619)`.
    pub functional: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mse,
    Coverage,
    MeanF,
    KendallTau,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Coverage => "coverage",
            Metric::MeanF => "mean_f",
            Metric::KendallTau => "kendall_tau",
        }
    }
}

/// A simulation study as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub model: ModelSource,
    /// `θ*`; required unless the model is synthetic.
    #[serde(default)]
    pub truth: Option<Vec<f64>>,
    pub policies: Vec<PolicyName>,
    #[serde(default = "default_criterion")]
    pub criterion: String,
    /// Sample sizes at which metrics are recorded.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    #[serde(default)]
    pub stopping: Option<StoppingRule>,
    /// Cap on the sample size while waiting for the stopping rule.
    #[serde(default = "default_max_n")]
    pub max_n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub metrics: Option<Vec<Metric>>,
    #[serde(default)]
    pub coverage: Option<CoverageSpec>,
    #[serde(default)]
    pub selector: SelectorOptions,
    #[serde(default)]
    pub mle: MleOptions,
    #[serde(default)]
    pub design: DesignOptions,
}

fn default_criterion() -> String {
    "trace".into()
}
fn default_max_n() -> usize {
    100_000
}
fn default_replications() -> usize {
    1
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One metric observation: `(n, metric, value)`; `n = 0` for stop metrics.
type Sample = (usize, &'static str, f64);

/// Everything one replication needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: Arc<ExperimentModel>,
    pub truth: DVector<f64>,
    pub init: Vec<ExperimentId>,
    pub theta0: DVector<f64>,
    pub pi_star: Option<Proportion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub n: usize,
    pub experiment: ExperimentId,
    pub observation: f64,
    pub theta_hat: Vec<f64>,
    pub pi_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopInfo {
    pub rule: String,
    /// Sample size at which the rule fired (or the cap, if it never did).
    pub index: usize,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub policy: String,
    pub n0: usize,
    pub truth: Vec<f64>,
    pub steps: Vec<TrajectoryStep>,
    pub stop: Option<StopInfo>,
}

/// A validated study, ready to run.
#[derive(Debug, Clone)]
pub struct Study {
    config: StudyConfig,
    criterion: Criterion,
    fixed_model: Option<Arc<ExperimentModel>>,
    fixed_pi_star: Option<Proportion>,
    coverage: Option<(Functional, f64)>,
    stopping: Option<StoppingRule>,
    metrics: Vec<Metric>,
    checkpoints: Vec<usize>,
}

impl Study {
    /// Resolves files relative to `base_dir` and checks the configuration.
    pub fn new(config: StudyConfig, base_dir: Option<&Path>) -> Result<Self> {
        if config.replications == 0 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if config.policies.is_empty() {
            return Err(Error::InvalidArgument("at least one policy is required".into()));
        }
        let criterion = parse_criterion(&config.criterion, base_dir)?;
        let fixed_model = match &config.model {
            ModelSource::Builtin(name) if name == "two_trait_demo" => Some(Arc::new(two_trait_demo())),
            ModelSource::Builtin(name) => return Err(Error::InvalidArgument(format!("unknown builtin model `{name}`"))),
            ModelSource::Catalog(c) => Some(Arc::new(c.build()?)),
            ModelSource::CatalogPath(path) => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Some(Arc::new(CatalogFile::read(path)?.build()?))
            }
            ModelSource::SyntheticBtl(s) => {
                if s.p == 0 || !(s.theta_range > 0.0 && s.theta_range <= s.radius) {
                    return Err(Error::InvalidArgument("synthetic BTL needs p >= 1 and 0 < theta_range <= radius".into()));
                }
                None
            }
        };
        let p = match (&fixed_model, &config.model) {
            (Some(m), _) => m.dim(),
            (None, ModelSource::SyntheticBtl(s)) => s.p,
            _ => unreachable!(),
        };
        let is_btl = fixed_model.as_ref().is_none_or(|m| m.kind() == ModelKind::Btl);
        if let Some(m) = &fixed_model {
            let truth = config
                .truth
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("`truth` is required for a fixed model".into()))?;
            let truth = DVector::from_vec(truth.clone());
            m.check_theta(&truth)?;
            if !m.bbox().contains(&truth) {
                return Err(Error::InvalidArgument("`truth` lies outside the parameter box".into()));
            }
        }
        let coverage = config
            .coverage
            .as_ref()
            .map(|c| -> Result<_> {
                if !(c.alpha > 0.0 && c.alpha < 1.0) {
                    return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {}", c.alpha)));
                }
                Ok((c.functional.parse::<Functional>()?.with_dim(p)?, c.alpha))
            })
            .transpose()?;
        let stopping = config.stopping.clone().map(|r| r.with_dim(p)).transpose()?;
        let metrics = match &config.metrics {
            Some(m) => m.clone(),
            None => {
                let mut m = vec![Metric::Mse, Metric::MeanF];
                if coverage.is_some() {
                    m.push(Metric::Coverage);
                }
                if is_btl {
                    m.push(Metric::KendallTau);
                }
                m
            }
        };
        if metrics.contains(&Metric::Coverage) && coverage.is_none() {
            return Err(Error::InvalidArgument("the coverage metric needs a `coverage` section".into()));
        }
        if metrics.contains(&Metric::KendallTau) && !is_btl {
            return Err(Error::InvalidArgument("kendall_tau applies to BTL studies only".into()));
        }
        let mut checkpoints = config.checkpoints.clone();
        checkpoints.sort_unstable();
        checkpoints.dedup();
        if checkpoints.is_empty() && stopping.is_none() {
            return Err(Error::InvalidArgument("a study needs checkpoints or a stopping rule".into()));
        }
        let needs_pi = config.policies.iter().any(|p| matches!(p, PolicyName::OptRandom | PolicyName::OptDeterministic));
        let fixed_pi_star = match (&fixed_model, needs_pi) {
            (Some(m), true) => {
                let truth = DVector::from_vec(config.truth.clone().expect("checked above"));
                Some(optimal_proportion(m, &truth, &criterion, &config.design)?.pi)
            }
            _ => None,
        };
        Ok(Study {
            config,
            criterion,
            fixed_model,
            fixed_pi_star,
            coverage,
            stopping,
            metrics,
            checkpoints,
        })
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn criterion(&self) -> &Criterion {
        &self.criterion
    }

    /// Builds the model, truth and initialization of replication `rep`,
    /// drawing any randomness from `rng`.
    pub fn scenario<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Scenario> {
        let (model, truth, pi_star) = match (&self.fixed_model, &self.config.model) {
            (Some(m), _) => (
                m.clone(),
                DVector::from_vec(self.config.truth.clone().expect("validated")),
                self.fixed_pi_star.clone(),
            ),
            (None, ModelSource::SyntheticBtl(s)) => {
                let g = gen_graph(s.graph, s.p, rng)?;
                let model = Arc::new(g.btl_model(s.radius)?);
                let truth = DVector::from_fn(s.p, |_, _| rng.random_range(-s.theta_range..s.theta_range));
                let needs_pi = self
                    .config
                    .policies
                    .iter()
                    .any(|p| matches!(p, PolicyName::OptRandom | PolicyName::OptDeterministic));
                let pi = if needs_pi {
                    Some(optimal_proportion(&model, &truth, &self.criterion, &self.config.design)?.pi)
                } else {
                    None
                };
                (model, truth, pi)
            }
            _ => unreachable!("validated in Study::new"),
        };
        let init = match &self.config.init {
            Some(InitSpec::Explicit(ids)) => ids.iter().map(|&a| ExperimentId(a)).collect(),
            Some(InitSpec::Named(InitKind::Btl)) => btl_initialization(&model, rng)?,
            Some(InitSpec::Named(InitKind::Cycle)) => model.ids().collect(),
            None if model.kind() == ModelKind::Btl => btl_initialization(&model, rng)?,
            None => model.ids().collect(),
        };
        let theta0 = match &self.config.theta0 {
            Some(t) => DVector::from_vec(t.clone()),
            None => model.bbox().center(),
        };
        Ok(Scenario {
            model,
            truth,
            init,
            theta0,
            pi_star,
        })
    }

    fn policy(&self, name: PolicyName, scenario: &Scenario) -> Result<Policy> {
        name.with_proportion(scenario.pi_star.clone())
    }

    fn engine(&self, scenario: &Scenario, policy: Policy) -> Result<Sequential> {
        let cfg = EngineConfig {
            criterion: self.criterion.clone(),
            policy,
            selector: self.config.selector,
            mle: self.config.mle,
            stopping: None,
        };
        Sequential::new(&scenario.model, cfg, scenario.init.clone(), scenario.theta0.clone())
    }

    fn horizon(&self) -> usize {
        self.checkpoints.last().copied().unwrap_or(0)
    }

    /// Runs one policy on one scenario, calling `on_step` after every
    /// observation with the stop index once the rule has fired.
    fn drive<R, F>(&self, scenario: &Scenario, policy: Policy, rng: &mut R, mut on_step: F) -> Result<(Sequential, Option<StopInfo>)>
    where
        R: Rng,
        F: FnMut(&Sequential, ExperimentId, f64, Option<&StopInfo>) -> Result<()>,
    {
        let model = &scenario.model;
        let mut seq = self.engine(scenario, policy)?;
        if let Some(&first) = self.checkpoints.first() {
            if first < seq.n0() {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint {first} precedes the end of initialization (n0 = {})",
                    seq.n0()
                )));
            }
        }
        let horizon = self.horizon();
        let mut stop: Option<StopInfo> = None;
        loop {
            let n = seq.n();
            let waiting = self.stopping.is_some() && stop.is_none() && n < self.config.max_n;
            if n >= horizon && !waiting {
                break;
            }
            let a = seq.next_experiment(model, rng)?.expect("engine runs without a stopping rule");
            let x = model.sample(&scenario.truth, a, rng);
            seq.observe(model, a, x)?;
            if let (Some(rule), None) = (&self.stopping, &stop) {
                if !seq.initializing() {
                    let fired = stopping_check(rule, seq.state())?;
                    if fired || seq.n() >= self.config.max_n {
                        stop = Some(StopInfo {
                            rule: rule.to_string(),
                            index: seq.n(),
                            fired,
                        });
                    }
                }
            }
            on_step(&seq, a, x, stop.as_ref().filter(|s| s.index == seq.n()))?;
        }
        Ok((seq, stop))
    }

    /// Full trajectory of `policy` in replication `rep`.
    pub fn run_trajectory(&self, policy: PolicyName, rep: u64) -> Result<Trajectory> {
        let mut rng = replication_rng(self.config.seed, rep);
        let scenario = self.scenario(&mut rng)?;
        let mut steps = Vec::new();
        let (seq, stop) = self.drive(&scenario, self.policy(policy, &scenario)?, &mut rng, |seq, a, x, _| {
            let n = seq.n();
            let counts = seq.history().counts(scenario.model.len());
            steps.push(TrajectoryStep {
                n,
                experiment: a,
                observation: x,
                theta_hat: seq.estimate().iter().copied().collect(),
                pi_bar: counts.iter().map(|&c| c as f64 / n as f64).collect(),
            });
            Ok(())
        })?;
        Ok(Trajectory {
            policy: policy.to_string(),
            n0: seq.n0(),
            truth: scenario.truth.iter().copied().collect(),
            steps,
            stop,
        })
    }

    fn checkpoint_metrics(&self, scenario: &Scenario, seq: &Sequential, out: &mut Vec<(usize, &'static str, f64)>) -> Result<()> {
        let n = seq.n();
        let theta = seq.estimate();
        for m in &self.metrics {
            let v = match m {
                Metric::Mse => (theta - &scenario.truth).norm_squared(),
                Metric::Coverage => {
                    let (g, alpha) = self.coverage.as_ref().expect("validated");
                    let ci = confidence_interval(seq.state(), g, *alpha)?;
                    f64::from(u8::from(ci.contains(g.value(&scenario.truth))))
                }
                Metric::MeanF => {
                    let pi = Proportion::new(seq.state().proportions())?;
                    f_value(&scenario.model, &scenario.truth, &self.criterion, &pi)?
                }
                Metric::KendallTau => kendall_tau(&scenario.model.object_scores(theta), &scenario.model.object_scores(&scenario.truth)),
            };
            out.push((n, m.name(), v));
        }
        Ok(())
    }

    fn stop_metrics(&self, scenario: &Scenario, seq: &Sequential, stop: &StopInfo, out: &mut Vec<(usize, &'static str, f64)>) -> Result<()> {
        let theta = seq.estimate();
        out.push((0, "stop_time", stop.index as f64));
        out.push((0, "mse_at_stop", (theta - &scenario.truth).norm_squared()));
        if let Some((g, alpha)) = &self.coverage {
            let err = (g.value(theta) - g.value(&scenario.truth)).abs();
            // under an SE rule the half-width is z·c by construction
            let covered = match &self.stopping {
                Some(StoppingRule::Se { c, .. }) => err <= normal_quantile(1.0 - alpha / 2.0) * c,
                _ => confidence_interval(seq.state(), g, *alpha)?.contains(g.value(&scenario.truth)),
            };
            out.push((0, "coverage_at_stop", f64::from(u8::from(covered))));
        }
        Ok(())
    }

    /// Metric samples of one replication, policy by policy.
    fn replication(&self, rep: u64) -> Result<Vec<Vec<Sample>>> {
        let mut rng = replication_rng(self.config.seed, rep);
        let scenario = self.scenario(&mut rng)?;
        self.config
            .policies
            .iter()
            .map(|&name| {
                // every policy sees the same stream from here on
                let mut rng = rng.clone();
                let mut out = Vec::new();
                let mut cps = self.checkpoints.iter().peekable();
                self.drive(&scenario, self.policy(name, &scenario)?, &mut rng, |seq, _, _, stopped| {
                    if cps.peek() == Some(&&seq.n()) {
                        cps.next();
                        self.checkpoint_metrics(&scenario, seq, &mut out)?;
                    }
                    if let Some(stop) = stopped {
                        self.stop_metrics(&scenario, seq, stop, &mut out)?;
                    }
                    Ok(())
                })?;
                Ok(out)
            })
            .collect()
    }

    /// Aggregates every metric over all replications (in parallel on the
    /// current rayon pool). Output is independent of the thread count.
    pub fn monte_carlo(&self) -> Result<MetricsTable> {
        let reps: Vec<Vec<Vec<Sample>>> = (0..self.config.replications as u64)
            .into_par_iter()
            .map(|rep| self.replication(rep))
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for (pi, name) in self.config.policies.iter().enumerate() {
            let mut samples: BTreeMap<(usize, &'static str), Vec<f64>> = BTreeMap::new();
            let mut order: Vec<(usize, &'static str)> = Vec::new();
            for rep in &reps {
                for &(n, metric, v) in &rep[pi] {
                    let key = (n, metric);
                    if !samples.contains_key(&key) {
                        order.push(key);
                    }
                    samples.entry(key).or_default().push(v);
                }
            }
            order.sort_by_key(|&(n, metric)| (n == 0, n, metric));
            for key in order {
                let (value, stderr) = mean_stderr(&samples[&key]);
                rows.push(MetricRow {
                    policy: name.to_string(),
                    n: key.0,
                    metric: key.1.to_string(),
                    value,
                    stderr,
                });
            }
        }
        Ok(MetricsTable { rows })
    }
}
