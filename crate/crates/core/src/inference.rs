//! Plug-in covariance, confidence intervals and early stopping.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_inverse;
use crate::selector::SelectionState;

/// Standard normal quantile `Φ⁻¹(p)` (Wichura's AS241, ~1e-16 relative).
#[allow(clippy::excessive_precision)] // published coefficients, kept verbatim
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966) * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386) * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5) * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// User-supplied differentiable functional `g: ℝ^p → ℝ`.
pub trait SmoothFunctional: Send + Sync {
    fn value(&self, theta: &DVector<f64>) -> f64;
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64>;
}

/// A scalar functional of `θ` whose plug-in interval or standard error is
/// wanted.
///
/// Textual form: `d(v₁;…;v_p)` for `dᵀθ`, `e(i)` for `θᵢ`, `sq(i)` for `θᵢ²`
/// (`i` 0-based).
#[derive(Clone)]
pub enum Functional {
    Linear(DVector<f64>),
    Square(usize),
    Smooth(Arc<dyn SmoothFunctional>),
}

impl Functional {
    pub fn coordinate(p: usize, i: usize) -> Self {
        Functional::Linear(DVector::from_fn(p, |r, _| if r == i { 1.0 } else { 0.0 }))
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        match self {
            Functional::Linear(d) if d.len() != p => Err(Error::DimensionMismatch { expected: p, found: d.len() }),
            Functional::Square(i) if *i >= p => Err(Error::DimensionMismatch { expected: p, found: i + 1 }),
            _ => Ok(()),
        }
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        match self {
            Functional::Linear(d) => d.dot(theta),
            Functional::Square(i) => theta[*i] * theta[*i],
            Functional::Smooth(g) => g.value(theta),
        }
    }

    pub fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self {
            Functional::Linear(d) => d.clone(),
            Functional::Square(i) => DVector::from_fn(theta.len(), |r, _| if r == *i { 2.0 * theta[r] } else { 0.0 }),
            Functional::Smooth(g) => g.gradient(theta),
        }
    }
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl PartialEq for Functional {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Functional::Linear(a), Functional::Linear(b)) => a == b,
            (Functional::Square(a), Functional::Square(b)) => a == b,
            (Functional::Smooth(a), Functional::Smooth(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Linear(d) => {
                let parts: Vec<String> = d.iter().map(|v| v.to_string()).collect();
                write!(f, "d({})", parts.join(";"))
            }
            Functional::Square(i) => write!(f, "sq({i})"),
            Functional::Smooth(_) => f.write_str("custom"),
        }
    }
}

fn parse_call<'a>(s: &'a str, name: &str) -> Option<&'a str> {
    s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')
}

impl FromStr for Functional {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |m: String| Error::InvalidArgument(format!("functional `{s}`: {m}"));
        if let Some(body) = parse_call(s, "d") {
            let d = body
                .split(';')
                .map(|v| v.trim().parse::<f64>().map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Functional::Linear(DVector::from_vec(d)));
        }
        if let Some(body) = parse_call(s, "sq") {
            return Ok(Functional::Square(body.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?));
        }
        if let Some(body) = parse_call(s, "e") {
            let i: usize = body.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
            // dimension is unknown here; Linear is padded on use
            return Ok(Functional::Linear(DVector::from_fn(i + 1, |r, _| if r == i { 1.0 } else { 0.0 })));
        }
        Err(bad("expected d(...), e(i) or sq(i)".into()))
    }
}

impl Functional {
    /// Pads a coordinate functional parsed without knowing `p`.
    pub fn with_dim(self, p: usize) -> Result<Self> {
        match self {
            Functional::Linear(d) if d.len() < p && d.iter().filter(|v| **v != 0.0).count() == 1 && d[d.len() - 1] == 1.0 => {
                Ok(Functional::coordinate(p, d.len() - 1))
            }
            other => {
                other.check_dim(p)?;
                Ok(other)
            }
        }
    }
}

/// `(1/n) {𝓘^{π̄ₙ}(θ̂ₙ)}⁻¹`.
pub fn covariance_estimate(state: &SelectionState) -> Result<DMatrix<f64>> {
    Ok(spd_inverse(state.weighted_info())? / state.n() as f64)
}

/// Plug-in standard error `n^{−1/2} ‖𝓘^{−1/2} ∇g(θ̂)‖`.
pub fn standard_error(state: &SelectionState, g: &Functional) -> Result<f64> {
    let p = state.theta_hat().len();
    g.check_dim(p)?;
    let grad = g.gradient(state.theta_hat());
    if grad.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateGradient);
    }
    let cov = covariance_estimate(state)?;
    Ok(grad.dot(&(&cov * &grad)).max(0.0).sqrt())
}

/// Per-coordinate plug-in standard errors.
pub fn coordinate_standard_errors(state: &SelectionState) -> Result<Vec<f64>> {
    let cov = covariance_estimate(state)?;
    Ok(cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// `g(θ̂) ± z_{α/2} · SE`.
pub fn confidence_interval(state: &SelectionState, g: &Functional, alpha: f64) -> Result<Interval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let se = standard_error(state, g)?;
    let center = g.value(state.theta_hat());
    let half = normal_quantile(1.0 - alpha / 2.0) * se;
    Ok(Interval {
        lo: center - half,
        hi: center + half,
    })
}

/// Early-stopping rules, checked after each refit.
///
/// Textual form: `se:h=<functional>,c=<real>` or `mse:c=<real>`.
#[derive(Debug, Clone, PartialEq)]
pub enum StoppingRule {
    /// Stop once `ŜE(h(θ̂ₘ)) ≤ c`.
    Se { h: Functional, c: f64 },
    /// Stop once `(1/m) tr({𝓘(θ̂ₘ; aₘ)}⁻¹) ≤ c`.
    Mse { c: f64 },
}

impl StoppingRule {
    pub fn se(h: Functional, c: f64) -> Result<Self> {
        check_threshold(c)?;
        Ok(StoppingRule::Se { h, c })
    }

    pub fn mse(c: f64) -> Result<Self> {
        check_threshold(c)?;
        Ok(StoppingRule::Mse { c })
    }

    pub fn threshold(&self) -> f64 {
        match self {
            StoppingRule::Se { c, .. } | StoppingRule::Mse { c } => *c,
        }
    }

    /// Fixes the dimension of coordinate functionals.
    pub fn with_dim(self, p: usize) -> Result<Self> {
        match self {
            StoppingRule::Se { h, c } => Ok(StoppingRule::Se { h: h.with_dim(p)?, c }),
            mse => Ok(mse),
        }
    }

    /// The monitored statistic: `ŜE` or the trace-based MSE proxy.
    pub fn statistic(&self, state: &SelectionState) -> Result<f64> {
        match self {
            StoppingRule::Se { h, .. } => standard_error(state, h),
            StoppingRule::Mse { .. } => Ok(covariance_estimate(state)?.trace()),
        }
    }
}

fn check_threshold(c: f64) -> Result<()> {
    if c > 0.0 && !c.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("stopping threshold must be positive, got {c}")))
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingRule::Se { h, c } => write!(f, "se:h={h},c={c}"),
            StoppingRule::Mse { c } => write!(f, "mse:c={c}"),
        }
    }
}

impl FromStr for StoppingRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("stopping rule `{s}`: {m}"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(|| bad("expected `se:` or `mse:`"))?;
        let mut h = None;
        let mut c = None;
        // split on commas outside parentheses
        let mut depth = 0;
        let mut start = 0;
        let mut fields = vec![];
        for (i, ch) in rest.char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => depth -= 1,
                ',' if depth == 0 => {
                    fields.push(&rest[start..i]);
                    start = i + 1;
                }
                _ => {}
            }
        }
        fields.push(&rest[start..]);
        for field in fields {
            let (key, value) = field.split_once('=').ok_or_else(|| bad("expected key=value"))?;
            match key.trim() {
                "h" => h = Some(value.parse::<Functional>()?),
                "c" => c = Some(value.trim().parse::<f64>().map_err(|_| bad("c is not a number"))?),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        let c = c.ok_or_else(|| bad("missing c"))?;
        match kind.trim() {
            "se" => StoppingRule::se(h.ok_or_else(|| bad("missing h"))?, c),
            "mse" if h.is_none() => StoppingRule::mse(c),
            _ => Err(bad("unknown rule")),
        }
    }
}

impl Serialize for StoppingRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StoppingRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Whether `rule` fires at the current state.
pub fn stopping_check(rule: &StoppingRule, state: &SelectionState) -> Result<bool> {
    let stat = rule.statistic(state)?;
    Ok(stat <= rule.threshold())
}
