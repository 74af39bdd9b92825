//! One interactive select → observe → estimate loop.

use std::sync::Arc;

use activest::inference::{coordinate_standard_errors, confidence_interval, normal_quantile, Interval, StoppingRule};
use activest::io::parse_criterion;
use activest::models::CatalogFile;
use activest::selector::PolicyName;
use activest::sequential::{EngineConfig, Sequential};
use activest::{Error, ExperimentId, ExperimentModel};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ApiError;

fn default_criterion() -> String {
    "trace".into()
}

fn default_alpha() -> f64 {
    0.05
}

/// Body of `POST /sessions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub catalog: CatalogFile,
    #[serde(default = "default_criterion")]
    pub criterion: String,
    /// `gi0` or `gi1`.
    pub policy: PolicyName,
    /// Initialization items, served in order before adaptive selection.
    pub initial_experiments: Vec<usize>,
    /// Defaults to the centre of the parameter box.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub stopping: Option<StoppingRule>,
    /// Level of the reported intervals.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub first_item: usize,
    pub n0: usize,
}

/// Body of `POST /sessions/{id}/responses`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub item_id: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopBody {
    pub rule: String,
    /// Number of responses when the rule fired.
    pub index: usize,
}

/// Plug-in inference at the current estimate; absent while initializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceBody {
    pub stderr: Vec<f64>,
    /// Per-coordinate intervals.
    pub ci: Vec<Interval>,
    /// Interval for the SE rule's functional, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub functional_ci: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAccepted {
    pub n: usize,
    pub estimate: Vec<f64>,
    pub inference: Option<InferenceBody>,
    pub status: Status,
    pub next_item: Option<usize>,
    pub stop: Option<StopBody>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub item: usize,
    pub value: f64,
}

/// Everything needed to draw the convergence view, or to replay the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub session_id: String,
    pub status: Status,
    pub policy: PolicyName,
    pub criterion: String,
    pub n0: usize,
    pub pending_item: Option<usize>,
    pub history: Vec<HistoryEntry>,
    pub pi_bar: Vec<f64>,
    /// Estimate after each response.
    pub estimates: Vec<Vec<f64>>,
    pub inference: Option<InferenceBody>,
    pub stop: Option<StopBody>,
}

/// Builds the engine a session request describes. Shared with offline replay.
pub fn build_engine(request: &CreateSession) -> Result<(Arc<ExperimentModel>, Sequential), ApiError> {
    if !matches!(request.policy, PolicyName::Gi0 | PolicyName::Gi1) {
        return Err(ApiError::bad_request(
            "invalid_policy",
            format!("sessions support gi0 and gi1, not `{}`", request.policy),
        ));
    }
    if request.criterion.trim_start().starts_with("wtrace:") {
        return Err(ApiError::bad_request(
            "invalid_criterion",
            "file-based criteria are not accepted over HTTP".into(),
        ));
    }
    if !(request.alpha > 0.0 && request.alpha < 1.0) {
        return Err(ApiError::bad_request("invalid_alpha", format!("alpha must lie in (0, 1), got {}", request.alpha)));
    }
    let model = request.catalog.build().map_err(|e| ApiError::from_core("invalid_catalog", e))?;
    let criterion = parse_criterion(&request.criterion, None).map_err(|e| ApiError::from_core("invalid_criterion", e))?;
    let policy = request.policy.with_proportion(None).map_err(|e| ApiError::from_core("invalid_policy", e))?;
    let theta0 = match &request.theta0 {
        Some(t) => {
            let t = DVector::from_vec(t.clone());
            model.check_theta(&t).map_err(|e| ApiError::from_core("invalid_theta0", e))?;
            if !model.bbox().contains(&t) {
                return Err(ApiError::bad_request("invalid_theta0", "theta0 lies outside the parameter box".into()));
            }
            t
        }
        None => model.bbox().center(),
    };
    if request.initial_experiments.is_empty() {
        return Err(ApiError::bad_request("invalid_initialization", "initial_experiments is empty".into()));
    }
    let init = request
        .initial_experiments
        .iter()
        .map(|&a| {
            let a = ExperimentId(a);
            model.check_id(a).map(|_| a)
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(|e| ApiError::from_core("invalid_initialization", e))?;
    let config = EngineConfig::new(criterion, policy).with_stopping(request.stopping.clone());
    let seq = Sequential::new(&model, config, init, theta0).map_err(|e| ApiError::from_core("invalid_request", e))?;
    Ok((Arc::new(model), seq))
}

#[derive(Debug)]
pub struct Session {
    id: String,
    request: CreateSession,
    model: Arc<ExperimentModel>,
    seq: Sequential,
    // GI0/GI1 never draw from it; the engine API asks for one
    rng: ChaCha8Rng,
    pending: Option<ExperimentId>,
}

impl Session {
    pub fn create(id: String, request: CreateSession) -> Result<Self, ApiError> {
        let (model, seq) = build_engine(&request)?;
        let mut session = Session {
            id,
            request,
            model,
            seq,
            rng: ChaCha8Rng::seed_from_u64(0),
            pending: None,
        };
        session.advance()?;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn request(&self) -> &CreateSession {
        &self.request
    }

    pub fn pending(&self) -> Option<usize> {
        self.pending.map(|a| a.0)
    }

    pub fn status(&self) -> Status {
        if self.seq.is_stopped() {
            Status::Stopped
        } else {
            Status::Active
        }
    }

    fn advance(&mut self) -> Result<(), ApiError> {
        self.pending = self
            .seq
            .next_experiment(&self.model, &mut self.rng)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(())
    }

    pub fn submit(&mut self, response: SubmitResponse) -> Result<ResponseAccepted, ApiError> {
        let Some(pending) = self.pending else {
            return Err(ApiError::gone());
        };
        if response.item_id != pending.0 {
            return Err(ApiError::item_mismatch(pending.0, response.item_id));
        }
        if !response.value.is_finite() {
            return Err(ApiError::bad_request("invalid_value", format!("value {} is not finite", response.value)));
        }
        self.seq.observe(&self.model, pending, response.value).map_err(|e| match e {
            Error::Support { .. } => ApiError::from_core("invalid_value", e),
            other => ApiError::internal(other.to_string()),
        })?;
        self.advance()?;
        Ok(ResponseAccepted {
            n: self.seq.n(),
            estimate: self.seq.estimate().iter().copied().collect(),
            inference: self.inference()?,
            status: self.status(),
            next_item: self.pending(),
            stop: self.stop(),
        })
    }

    fn stop(&self) -> Option<StopBody> {
        let index = self.seq.stopped_at()?;
        Some(StopBody {
            rule: self.seq.config().stopping.as_ref().map(ToString::to_string).unwrap_or_default(),
            index,
        })
    }

    fn inference(&self) -> Result<Option<InferenceBody>, ApiError> {
        if self.seq.initializing() {
            return Ok(None);
        }
        let state = self.seq.state();
        let internal = |e: Error| ApiError::internal(e.to_string());
        let stderr = coordinate_standard_errors(state).map_err(internal)?;
        let z = normal_quantile(1.0 - self.request.alpha / 2.0);
        let ci = state
            .theta_hat()
            .iter()
            .zip(&stderr)
            .map(|(t, s)| Interval { lo: t - z * s, hi: t + z * s })
            .collect();
        let functional_ci = match &self.seq.config().stopping {
            Some(StoppingRule::Se { h, .. }) => Some(confidence_interval(state, h, self.request.alpha).map_err(internal)?),
            _ => None,
        };
        Ok(Some(InferenceBody { stderr, ci, functional_ci }))
    }

    pub fn report(&self) -> Result<SessionReport, ApiError> {
        let n = self.seq.n();
        let counts = self.seq.history().counts(self.model.len());
        Ok(SessionReport {
            session_id: self.id.clone(),
            status: self.status(),
            policy: self.request.policy,
            criterion: self.request.criterion.clone(),
            n0: self.seq.n0(),
            pending_item: self.pending(),
            history: self.history(),
            pi_bar: counts.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect(),
            estimates: self.seq.estimates().iter().map(|t| t.iter().copied().collect()).collect(),
            inference: self.inference()?,
            stop: self.stop(),
        })
    }

    pub fn history(&self) -> Vec<HistoryEntry> {
        self.seq
            .history()
            .records()
            .iter()
            .map(|&(a, value)| HistoryEntry { item: a.0, value })
            .collect()
    }
}
