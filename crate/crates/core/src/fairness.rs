//! The sensitive-attribute covariance constraint and its quadratic penalty.
//!
//! Fairness is measured as the empirical covariance between the linear
//! predictor and a centered binary sensitive attribute. Over the stacked
//! parameters `delta = (beta0, beta, b)` the covariance is linear,
//! `a' delta / N`, with a coefficient vector `a` whose intercept entry is
//! identically zero. The quadratic penalty `(rho / N) (a' delta)^2` and its
//! derivatives all flow from that one vector.

use nalgebra::DVector;

use crate::data::Dataset;
use crate::error::{invalid, Result};

/// Precomputed covariance coefficients for one sensitive attribute.
#[derive(Debug, Clone)]
pub struct FairnessContext {
    /// Mean of the sensitive attribute.
    pub s_bar: f64,
    /// Unnormalized coefficients over `(beta0, beta, b)`; the covariance is
    /// `a_full' delta / n_total`.
    pub a_full: DVector<f64>,
    pub n_total: usize,
    n_features: usize,
    n_strata: usize,
}

/// Mean of the dataset's sensitive attribute.
pub fn sensitive_mean(ds: &Dataset) -> f64 {
    let total: u64 = ds.sensitive().iter().map(|&s| s as u64).sum();
    total as f64 / ds.n_rows() as f64
}

/// Builds the covariance coefficients for the dataset's own sensitive
/// attribute.
pub fn constraint_vector(ds: &Dataset) -> FairnessContext {
    constraint_vector_for(ds, ds.sensitive()).expect("dataset sensitive attribute is validated")
}

/// Builds the covariance coefficients for an externally supplied attribute,
/// row-aligned with the dataset.
pub fn constraint_vector_for(ds: &Dataset, sensitive: &[u8]) -> Result<FairnessContext> {
    if sensitive.len() != ds.n_rows() {
        return Err(invalid(format!(
            "sensitive attribute has {} entries but the dataset has {} rows",
            sensitive.len(),
            ds.n_rows()
        )));
    }
    if let Some(k) = sensitive.iter().position(|&s| s > 1) {
        return Err(invalid(format!("sensitive value at row {k} is not 0/1")));
    }
    let n_rows = ds.n_rows();
    let p = ds.n_features();
    let n = ds.n_strata();
    let total: u64 = sensitive.iter().map(|&s| s as u64).sum();
    let s_bar = total as f64 / n_rows as f64;

    let mut a = DVector::zeros(1 + p + n);
    // Centering makes the intercept coefficient vanish identically; set it
    // rather than accumulate rounding error.
    a[0] = 0.0;
    let x = ds.features();
    for k in 0..n_rows {
        let weight = sensitive[k] as f64 - s_bar;
        for j in 0..p {
            a[1 + j] += weight * x[(k, j)];
        }
        a[1 + p + ds.strata()[k] - 1] += weight;
    }
    Ok(FairnessContext {
        s_bar,
        a_full: a,
        n_total: n_rows,
        n_features: p,
        n_strata: n,
    })
}

/// Value, gradient, and the rank-one Hessian coefficient of the quadratic
/// fairness penalty at fixed `rho`.
#[derive(Debug, Clone)]
pub struct PenaltyTerms {
    /// `(rho / N) (a' delta)^2`.
    pub value: f64,
    /// `(2 rho / N) (a' delta) a`.
    pub grad: DVector<f64>,
    /// The Hessian is `hess_coeff * a a'` with `hess_coeff = 2 rho / N`.
    pub hess_coeff: f64,
}

impl FairnessContext {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_strata(&self) -> usize {
        self.n_strata
    }

    /// Coefficients over one component's parameters `(beta0, beta_r, b)`.
    pub fn restrict_to_component(&self, r: usize) -> Result<DVector<f64>> {
        if r < 1 || r > self.n_features {
            return Err(invalid(format!(
                "component index {r} outside 1..={}",
                self.n_features
            )));
        }
        let mut a_r = DVector::zeros(self.n_strata + 2);
        a_r[0] = self.a_full[0];
        a_r[1] = self.a_full[r];
        for i in 0..self.n_strata {
            a_r[2 + i] = self.a_full[1 + self.n_features + i];
        }
        Ok(a_r)
    }

    /// Covariance between the linear predictor and the centered attribute,
    /// `a' delta / N`.
    pub fn covariance_value(&self, delta: &DVector<f64>) -> f64 {
        assert_eq!(delta.len(), self.a_full.len(), "stacked vector length");
        self.a_full.dot(delta) / self.n_total as f64
    }

    /// Quadratic penalty terms at `delta`.
    pub fn penalty_terms(&self, delta: &DVector<f64>, rho: f64) -> PenaltyTerms {
        let n = self.n_total as f64;
        let inner = self.a_full.dot(delta);
        let coeff = 2.0 * rho / n;
        PenaltyTerms {
            value: rho / n * inner * inner,
            grad: &self.a_full * (coeff * inner),
            hess_coeff: coeff,
        }
    }
}
