use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]` when taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Cumulant function `B` of a one-parameter exponential family with natural
/// parameter `ξ`, together with its base measure and a sampler.
///
/// The density is `ζ(x) exp{x ξ − B(ξ)}`, so `B′` is the mean and `B″` the
/// variance of the response.
pub trait BaseFunction: Send + Sync {
    fn name(&self) -> &str;
    fn cumulant(&self, xi: f64) -> f64;
    fn mean(&self, xi: f64) -> f64;
    fn variance(&self, xi: f64) -> f64;
    /// `log ζ(x)`, or `None` when `x` is outside the support.
    fn log_base_measure(&self, x: f64) -> Option<f64>;
    fn sample(&self, xi: f64, rng: &mut dyn RngCore) -> f64;
    fn is_binary(&self) -> bool {
        false
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Bernoulli response with logit link: `B(ξ) = log(1 + e^ξ)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logit;

impl BaseFunction for Logit {
    fn name(&self) -> &str {
        "logit"
    }
    fn cumulant(&self, xi: f64) -> f64 {
        softplus(xi)
    }
    fn mean(&self, xi: f64) -> f64 {
        sigmoid(xi)
    }
    fn variance(&self, xi: f64) -> f64 {
        let p = sigmoid(xi);
        p * (1.0 - p)
    }
    fn log_base_measure(&self, x: f64) -> Option<f64> {
        (x == 0.0 || x == 1.0).then_some(0.0)
    }
    fn sample(&self, xi: f64, rng: &mut dyn RngCore) -> f64 {
        if rng.random::<f64>() < sigmoid(xi) {
            1.0
        } else {
            0.0
        }
    }
    fn is_binary(&self) -> bool {
        true
    }
}

/// Unit-variance Gaussian response: `B(ξ) = ξ²/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Gaussian;

impl BaseFunction for Gaussian {
    fn name(&self) -> &str {
        "gaussian"
    }
    fn cumulant(&self, xi: f64) -> f64 {
        0.5 * xi * xi
    }
    fn mean(&self, xi: f64) -> f64 {
        xi
    }
    fn variance(&self, _xi: f64) -> f64 {
        1.0
    }
    fn log_base_measure(&self, x: f64) -> Option<f64> {
        x.is_finite()
            .then(|| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln())
    }
    fn sample(&self, xi: f64, rng: &mut dyn RngCore) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        xi + eps
    }
}

/// Shared handle to a base function.
#[derive(Clone)]
pub struct BaseFn(Arc<dyn BaseFunction>);

impl BaseFn {
    pub fn new(f: impl BaseFunction + 'static) -> Self {
        BaseFn(Arc::new(f))
    }
    pub fn logit() -> Self {
        BaseFn::new(Logit)
    }
    pub fn gaussian() -> Self {
        BaseFn::new(Gaussian)
    }
}

impl std::ops::Deref for BaseFn {
    type Target = dyn BaseFunction;
    fn deref(&self) -> &Self::Target {
        self.0.as_ref()
    }
}

impl fmt::Debug for BaseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BaseFn({})", self.0.name())
    }
}

/// Name → base function lookup used when loading catalogs.
#[derive(Clone, Debug)]
pub struct BaseRegistry {
    entries: BTreeMap<String, BaseFn>,
}

impl Default for BaseRegistry {
    fn default() -> Self {
        let mut reg = BaseRegistry {
            entries: BTreeMap::new(),
        };
        reg.register(BaseFn::logit());
        reg.register(BaseFn::gaussian());
        reg
    }
}

impl BaseRegistry {
    pub fn register(&mut self, base: BaseFn) {
        self.entries.insert(base.name().to_string(), base);
    }

    pub fn get(&self, name: &str) -> Result<BaseFn> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown base function `{name}`")))
    }
}
