//! Active sequential estimation.
//!
//! The engine picks the next experiment with a greedy information criterion
//! (GI0 or GI1), refits a box-constrained maximum-likelihood estimate after
//! every observation, and offers plug-in confidence intervals, early stopping
//! and the asymptotically optimal selection proportion.

pub mod criteria;
pub mod design;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod models;
pub mod selector;
pub mod sequential;
pub mod simulate;

pub use criteria::Criterion;
pub use error::{Error, Result};
pub use models::{ExperimentId, ExperimentModel, ExperimentSpec, ModelKind, ParameterBox, ParameterVector};
