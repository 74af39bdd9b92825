//! Replay of a recorded pairwise dataset, each record consumed at most once.

use nalgebra::DVector;
use rand::Rng;

use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::estimator::{mle, History, MleOptions};
use crate::io::PairwiseDataset;
use crate::models::{ExperimentId, ExperimentModel};
use crate::selector::Policy;
use crate::sequential::{EngineConfig, Sequential};

use super::graph::ComparisonGraph;
use super::metrics::kendall_tau;

/// Unused record indices per experiment.
#[derive(Debug, Clone)]
pub struct ReplaySampler {
    unused: Vec<Vec<usize>>,
    remaining: usize,
}

impl ReplaySampler {
    pub fn new(record_experiments: &[ExperimentId], k: usize) -> Self {
        let mut unused = vec![Vec::new(); k];
        for (r, a) in record_experiments.iter().enumerate() {
            unused[a.0].push(r);
        }
        ReplaySampler {
            unused,
            remaining: record_experiments.len(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining
    }

    pub fn remaining_for(&self, a: ExperimentId) -> usize {
        self.unused[a.0].len()
    }

    /// Experiments that still have unused records, in catalog order.
    pub fn candidates(&self) -> Vec<ExperimentId> {
        (0..self.unused.len()).filter(|&a| !self.unused[a].is_empty()).map(ExperimentId).collect()
    }

    /// Consumes a uniformly chosen unused record of experiment `a`.
    pub fn draw<R: Rng + ?Sized>(&mut self, a: ExperimentId, rng: &mut R) -> Result<usize> {
        let pool = &mut self.unused[a.0];
        if pool.is_empty() {
            return Err(Error::Exhausted);
        }
        let r = pool.swap_remove(rng.random_range(0..pool.len()));
        self.remaining -= 1;
        Ok(r)
    }

    /// Consumes a record chosen uniformly among all unused records.
    pub fn draw_any<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<usize> {
        if self.remaining == 0 {
            return Err(Error::Exhausted);
        }
        let mut u = rng.random_range(0..self.remaining);
        let a = self
            .unused
            .iter()
            .position(|pool| {
                if u < pool.len() {
                    true
                } else {
                    u -= pool.len();
                    false
                }
            })
            .expect("remaining count matches pools");
        let r = self.unused[a].swap_remove(u);
        self.remaining -= 1;
        Ok(r)
    }
}

/// Chooses the next record under `policy`: uniform over unused records for
/// `Uniform`, otherwise the policy's experiment over the experiments with
/// unused records and then a uniform record of it.
pub fn replay_sampler<R: Rng + ?Sized>(
    dataset: &PairwiseDataset,
    record_experiments: &[ExperimentId],
    model: &ExperimentModel,
    seq: &Sequential,
    sampler: &mut ReplaySampler,
    rng: &mut R,
) -> Result<(ExperimentId, f64)> {
    let r = if seq.initializing() || !matches!(seq.config().policy, Policy::Uniform) {
        let candidates = sampler.candidates();
        if candidates.is_empty() {
            return Err(Error::Exhausted);
        }
        let a = seq.next_among(model, rng, &candidates)?.ok_or(Error::Exhausted)?;
        sampler.draw(a, rng)?
    } else {
        sampler.draw_any(rng)?
    };
    Ok((record_experiments[r], dataset.records[r].outcome))
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub policy: Policy,
    pub criterion: Criterion,
    /// Horizons at which Kendall's τ is recorded.
    pub checkpoints: Vec<usize>,
    pub seed: u64,
    pub radius: f64,
}

/// Kendall τ of the running estimate against `reference` at each reachable
/// checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayCurve {
    pub n0: usize,
    pub points: Vec<(usize, f64)>,
}

/// Spanning tree of the observed comparison graph, one experiment per edge.
pub fn replay_initialization<R: Rng + ?Sized>(model: &ExperimentModel, rng: &mut R) -> Vec<ExperimentId> {
    super::tree_experiments(model, rng)
}

/// The full-data MLE, used as the reference ranking.
pub fn full_data_estimate(model: &ExperimentModel, dataset: &PairwiseDataset, record_experiments: &[ExperimentId]) -> Result<DVector<f64>> {
    let mut h = History::new();
    for (r, &a) in record_experiments.iter().enumerate() {
        h.push(model, a, dataset.records[r].outcome)?;
    }
    Ok(mle(model, &h, None, &MleOptions::default())?.theta)
}

pub fn run_replay(dataset: &PairwiseDataset, opts: &ReplayOptions, reference: Option<&DVector<f64>>) -> Result<ReplayCurve> {
    let (model, ids) = dataset.catalog(opts.radius)?;
    let reference = match reference {
        Some(r) => r.clone(),
        None => full_data_estimate(&model, dataset, &ids)?,
    };
    let truth_scores = model.object_scores(&reference);
    let mut rng = super::replication_rng(opts.seed, 0);
    let init = replay_initialization(&model, &mut rng);
    let cfg = EngineConfig::new(opts.criterion.clone(), opts.policy.clone());
    let mut seq = Sequential::new(&model, cfg, init, DVector::zeros(model.dim()))?;
    let mut sampler = ReplaySampler::new(&ids, model.len());
    let mut checkpoints = opts.checkpoints.clone();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let horizon = checkpoints.last().copied().unwrap_or(0).min(dataset.records.len());
    let mut points = Vec::new();
    let mut next_cp = checkpoints.iter().peekable();
    while seq.n() < horizon {
        let (a, x) = match replay_sampler(dataset, &ids, &model, &seq, &mut sampler, &mut rng) {
            Ok(v) => v,
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        };
        seq.observe(&model, a, x)?;
        while let Some(&&cp) = next_cp.peek() {
            if cp > seq.n() {
                break;
            }
            if cp == seq.n() && cp >= seq.n0() {
                points.push((cp, kendall_tau(&model.object_scores(seq.estimate()), &truth_scores)));
            }
            next_cp.next();
        }
    }
    Ok(ReplayCurve { n0: seq.n0(), points })
}

/// Connected comparison graph of a BTL catalog.
pub fn catalog_graph(model: &ExperimentModel) -> ComparisonGraph {
    let mut edges: Vec<(usize, usize)> = model
        .ids()
        .filter_map(|a| match model.spec(a) {
            crate::models::ExperimentSpec::Btl { i, j } => Some(((*i).min(*j), (*i).max(*j))),
            _ => None,
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    ComparisonGraph {
        vertices: model.dim() + 1,
        edges,
    }
}
