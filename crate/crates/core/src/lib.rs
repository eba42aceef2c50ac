//! Fairness-constrained logistic regression and mixed models.
//!
//! The crate fits binary-outcome models on clustered data under a bound on
//! the covariance between predictions and a binary sensitive attribute. Six
//! estimators share one parameter type: plain and fair logistic regression,
//! plain and fair cluster-regularized logistic regression (one ridge-penalized
//! intercept per stratum), and plain and fair mixed models whose random
//! intercepts and their variance are estimated by componentwise boosting.
//!
//! Supporting modules generate the synthetic study populations, score
//! accuracy and disparate impact, recover constraint shadow prices from
//! fitted models, and ingest CSV data.

pub mod boost;
pub mod data;
pub mod error;
pub mod estimators;
pub mod fairness;
pub mod ingest;
pub mod logit;
pub mod metrics;
pub mod sensitivity;
pub mod sim;
pub mod solvers;

pub use data::{design_view, Dataset, DesignView, FitConfig, ModelParams};
pub use error::{Error, Result};
pub use estimators::{Estimator, FitOutcome};
pub use fairness::FairnessContext;
pub use metrics::MetricPair;
pub use sim::{Scenario, ScenarioSpec};
pub use solvers::SolveReport;
