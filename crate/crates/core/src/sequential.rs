//! The observe → estimate → stop? → select loop.
//!
//! Initialization experiments are served in order; the MLE is deferred until
//! all of them have been answered, after which every response triggers a
//! warm-started refit, a stopping check and (if still running) a selection.

use nalgebra::DVector;
use rand::Rng;

use crate::criteria::Criterion;
use crate::error::{Error, Result};
use crate::estimator::{mle, History, MleOptions};
use crate::inference::{stopping_check, StoppingRule};
use crate::models::{ExperimentId, ExperimentModel};
use crate::selector::{select, Policy, SelectionState, SelectorOptions};

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub criterion: Criterion,
    pub policy: Policy,
    pub selector: SelectorOptions,
    pub mle: MleOptions,
    pub stopping: Option<StoppingRule>,
}

impl EngineConfig {
    pub fn new(criterion: Criterion, policy: Policy) -> Self {
        EngineConfig {
            criterion,
            policy,
            selector: SelectorOptions::default(),
            mle: MleOptions::default(),
            stopping: None,
        }
    }

    pub fn with_stopping(mut self, rule: Option<StoppingRule>) -> Self {
        self.stopping = rule;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Sequential {
    config: EngineConfig,
    init: Vec<ExperimentId>,
    theta0: DVector<f64>,
    state: SelectionState,
    history: History,
    estimates: Vec<DVector<f64>>,
    stopped_at: Option<usize>,
}

impl Sequential {
    /// Validates the policy and that the initialization is nonsingular at `θ̂₀`.
    pub fn new(model: &ExperimentModel, config: EngineConfig, init: Vec<ExperimentId>, theta0: DVector<f64>) -> Result<Self> {
        config.policy.validate(model)?;
        let state = SelectionState::with_tolerance(model, &init, theta0.clone(), config.selector.tol_pd)?;
        let config = EngineConfig {
            stopping: config.stopping.map(|r| r.with_dim(model.dim())).transpose()?,
            ..config
        };
        Ok(Sequential {
            config,
            init,
            theta0,
            state,
            history: History::new(),
            estimates: Vec::new(),
            stopped_at: None,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }
    pub fn n0(&self) -> usize {
        self.init.len()
    }
    pub fn init(&self) -> &[ExperimentId] {
        &self.init
    }
    pub fn theta0(&self) -> &DVector<f64> {
        &self.theta0
    }
    pub fn history(&self) -> &History {
        &self.history
    }
    pub fn state(&self) -> &SelectionState {
        &self.state
    }
    /// `θ̂` after each response (`θ̂₀` while initializing).
    pub fn estimates(&self) -> &[DVector<f64>] {
        &self.estimates
    }
    pub fn estimate(&self) -> &DVector<f64> {
        self.estimates.last().unwrap_or(&self.theta0)
    }
    pub fn n(&self) -> usize {
        self.history.len()
    }
    pub fn initializing(&self) -> bool {
        self.history.len() < self.init.len()
    }
    /// Number of responses at which the stopping rule fired.
    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }
    pub fn is_stopped(&self) -> bool {
        self.stopped_at.is_some()
    }

    /// Next experiment to run, or `None` once stopped.
    pub fn next_experiment<R: Rng + ?Sized>(&self, model: &ExperimentModel, rng: &mut R) -> Result<Option<ExperimentId>> {
        let all: Vec<ExperimentId> = model.ids().collect();
        self.next_among(model, rng, &all)
    }

    /// As [`Self::next_experiment`] with the adaptive choice restricted to
    /// `candidates`. Initialization items are returned regardless.
    pub fn next_among<R: Rng + ?Sized>(&self, model: &ExperimentModel, rng: &mut R, candidates: &[ExperimentId]) -> Result<Option<ExperimentId>> {
        if self.is_stopped() {
            return Ok(None);
        }
        if self.initializing() {
            return Ok(Some(self.init[self.history.len()]));
        }
        let c = &self.config;
        select(&c.policy, &self.state, model, &c.criterion, &c.selector, rng, candidates).map(Some)
    }

    /// Records the response `x` to experiment `a` and refits when past
    /// initialization. Returns whether the stopping rule has now fired.
    pub fn observe(&mut self, model: &ExperimentModel, a: ExperimentId, x: f64) -> Result<bool> {
        if self.is_stopped() {
            return Err(Error::InvalidArgument("the sequence has already stopped".into()));
        }
        if self.initializing() && a != self.init[self.history.len()] {
            return Err(Error::InvalidArgument(format!(
                "expected initialization experiment {}, got {a}",
                self.init[self.history.len()]
            )));
        }
        let was_initializing = self.initializing();
        self.history.push(model, a, x)?;
        if self.initializing() {
            self.estimates.push(self.theta0.clone());
            return Ok(false);
        }
        let start = if was_initializing && self.history.len() == self.init.len() {
            self.theta0.clone()
        } else {
            self.estimate().clone()
        };
        let theta = mle(model, &self.history, Some(&start), &self.config.mle)?.theta;
        if was_initializing {
            self.state.refresh(model, theta.clone());
        } else {
            self.state.update(model, a, theta.clone());
        }
        self.estimates.push(theta);
        if let Some(rule) = &self.config.stopping {
            if stopping_check(rule, &self.state)? {
                self.stopped_at = Some(self.history.len());
            }
        }
        Ok(self.is_stopped())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::two_trait_demo;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn demo_init() -> Vec<ExperimentId> {
        (0..9).map(|i| ExperimentId(i % 3)).collect()
    }

    #[test]
    fn initialization_is_served_in_order() {
        let demo = two_trait_demo();
        let cfg = EngineConfig::new(Criterion::trace(), Policy::Gi1);
        let mut seq = Sequential::new(&demo, cfg, demo_init(), DVector::zeros(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = DVector::from_vec(vec![1.0, 0.0]);
        for i in 0..9 {
            let a = seq.next_experiment(&demo, &mut rng).unwrap().unwrap();
            assert_eq!(a, ExperimentId(i % 3));
            assert_eq!(seq.estimate(), &DVector::<f64>::zeros(2));
            seq.observe(&demo, a, demo.sample(&truth, a, &mut rng)).unwrap();
        }
        assert!(!seq.initializing());
        assert_eq!(seq.estimates().len(), 9);
        assert_eq!(seq.state().n(), 9);
        assert!(seq.observe(&demo, ExperimentId(0), 0.5).is_err());
    }

    #[test]
    fn out_of_order_initialization_rejected() {
        let demo = two_trait_demo();
        let cfg = EngineConfig::new(Criterion::trace(), Policy::Gi0);
        let mut seq = Sequential::new(&demo, cfg, demo_init(), DVector::zeros(2)).unwrap();
        assert!(seq.observe(&demo, ExperimentId(2), 1.0).is_err());
        assert_eq!(seq.n(), 0);
    }

    #[test]
    fn generous_mse_rule_fires_at_n0() {
        let demo = two_trait_demo();
        let cfg = EngineConfig::new(Criterion::trace(), Policy::Gi1).with_stopping(Some(StoppingRule::mse(1e9).unwrap()));
        let mut seq = Sequential::new(&demo, cfg, demo_init(), DVector::zeros(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        while let Some(a) = seq.next_experiment(&demo, &mut rng).unwrap() {
            seq.observe(&demo, a, demo.sample(&DVector::from_vec(vec![1.0, 0.0]), a, &mut rng)).unwrap();
        }
        assert_eq!(seq.stopped_at(), Some(9));
    }

    #[test]
    fn state_tracks_history() {
        let demo = two_trait_demo();
        let cfg = EngineConfig::new(Criterion::phi(0.0).unwrap(), Policy::Gi0);
        let mut seq = Sequential::new(&demo, cfg, demo_init(), DVector::zeros(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let a = seq.next_experiment(&demo, &mut rng).unwrap().unwrap();
            seq.observe(&demo, a, demo.sample(&DVector::from_vec(vec![1.0, 0.0]), a, &mut rng)).unwrap();
        }
        assert_eq!(seq.state().counts(), seq.history().counts(3).as_slice());
        assert_eq!(seq.state().theta_hat(), seq.estimate());
    }
}
