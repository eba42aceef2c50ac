//! Uniform dispatch over the six estimators.

use crate::boost::{fit_fair_glmm, fit_glmm, FitTrace};
use crate::data::{Dataset, FitConfig, ModelParams};
use crate::error::{invalid, Result};
use crate::fairness::constraint_vector;
use crate::solvers::{fit_crlr, fit_fair_crlr, fit_fair_lr, fit_lr};

/// The six model families compared in the study, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Glmm,
    FairGlmm,
    Crlr,
    FairCrlr,
    Lr,
    FairLr,
}

/// Result of fitting any estimator.
pub struct FitOutcome {
    pub params: ModelParams,
    pub converged: bool,
    /// Covariance between the linear predictor and the sensitive attribute
    /// at the solution.
    pub constraint_value: f64,
    /// Boosting record; absent for the direct solvers.
    pub trace: Option<FitTrace>,
}

impl Estimator {
    pub fn all() -> [Estimator; 6] {
        [
            Estimator::Glmm,
            Estimator::FairGlmm,
            Estimator::Crlr,
            Estimator::FairCrlr,
            Estimator::Lr,
            Estimator::FairLr,
        ]
    }

    /// Machine-friendly identifier, as used in CSV output and CLI flags.
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Glmm => "glmm",
            Estimator::FairGlmm => "fair-glmm",
            Estimator::Crlr => "crlr",
            Estimator::FairCrlr => "fair-crlr",
            Estimator::Lr => "lr",
            Estimator::FairLr => "fair-lr",
        }
    }

    /// Display label matching the study tables.
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Glmm => "GLMM",
            Estimator::FairGlmm => "Fair GLMM",
            Estimator::Crlr => "CRLR",
            Estimator::FairCrlr => "Fair CRLR",
            Estimator::Lr => "LR",
            Estimator::FairLr => "Fair LR",
        }
    }

    pub fn parse(name: &str) -> Result<Estimator> {
        Estimator::all()
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown estimator '{name}'; expected one of glmm, fair-glmm, crlr, fair-crlr, lr, fair-lr"
                ))
            })
    }

    /// Whether predictions should include the stratum intercepts.
    pub fn uses_strata(self) -> bool {
        !matches!(self, Estimator::Lr | Estimator::FairLr)
    }

    pub fn is_fair(self) -> bool {
        matches!(
            self,
            Estimator::FairGlmm | Estimator::FairCrlr | Estimator::FairLr
        )
    }

    pub fn fit(self, ds: &Dataset, config: &FitConfig) -> Result<FitOutcome> {
        match self {
            Estimator::Lr => Ok(from_report(fit_lr(ds, config)?)),
            Estimator::FairLr => Ok(from_report(fit_fair_lr(ds, config)?)),
            Estimator::Crlr => Ok(from_report(fit_crlr(ds, config)?)),
            Estimator::FairCrlr => Ok(from_report(fit_fair_crlr(ds, config)?)),
            Estimator::Glmm => {
                let (params, trace) = fit_glmm(ds, config)?;
                Ok(from_boost(ds, params, trace))
            }
            Estimator::FairGlmm => {
                let (params, trace) = fit_fair_glmm(ds, config)?;
                Ok(from_boost(ds, params, trace))
            }
        }
    }
}

fn from_report(report: crate::solvers::SolveReport) -> FitOutcome {
    FitOutcome {
        params: report.params,
        converged: report.converged,
        constraint_value: report.constraint_value,
        trace: None,
    }
}

fn from_boost(ds: &Dataset, params: ModelParams, trace: FitTrace) -> FitOutcome {
    let constraint_value = constraint_vector(ds).covariance_value(&params.delta());
    FitOutcome {
        params,
        converged: trace.converged,
        constraint_value,
        trace: Some(trace),
    }
}
