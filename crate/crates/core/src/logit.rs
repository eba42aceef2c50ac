//! Logit link, Bernoulli log-likelihood, and their derivatives.
//!
//! Everything here is expressed over the stacked parameter vector
//! `(beta0, beta, b)` and the full design `[1 | X | Z]`. Means are clamped a
//! hair inside `(0, 1)` so logs and weight inversions stay finite even on
//! separable data.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, ModelParams};

/// Half-width of the clamp that keeps means inside the open unit interval.
pub const MU_EPS: f64 = 1e-12;

/// Inverse logit, clamped to `[MU_EPS, 1 - MU_EPS]`.
pub fn sigmoid(eta: f64) -> f64 {
    let raw = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    raw.clamp(MU_EPS, 1.0 - MU_EPS)
}

/// Linear predictor, means, and the diagonal weights they induce.
///
/// For the logit link the derivative `d = mu (1 - mu)`, the conditional
/// variance `sigma`, and the working weight `w` coincide; the fields are kept
/// separate because they play different roles in the formulas.
#[derive(Debug, Clone)]
pub struct LinkEval {
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    /// Derivative of the mean in the linear predictor, `mu (1 - mu)`.
    pub d: DVector<f64>,
    /// Working weights `d Sigma^{-1} d`; equal to `d` under the logit link.
    pub w: DVector<f64>,
}

/// Evaluates the link quantities at the given parameters.
pub fn link_eval(ds: &Dataset, params: &ModelParams) -> LinkEval {
    link_eval_eta(params.linear_predictor(ds))
}

/// Evaluates the link quantities at a precomputed linear predictor.
pub fn link_eval_eta(eta: DVector<f64>) -> LinkEval {
    let mu = eta.map(sigmoid);
    let d = mu.map(|m| m * (1.0 - m));
    LinkEval {
        eta,
        mu,
        w: d.clone(),
        d,
    }
}

/// Compensated accumulator; keeps million-term likelihood sums accurate.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, value: f64) {
        let y = value - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Bernoulli log-likelihood of the dataset at the given means.
pub fn log_likelihood(labels: &[u8], mu: &DVector<f64>) -> f64 {
    let mut acc = KahanSum::default();
    for (k, &y) in labels.iter().enumerate() {
        let m = mu[k];
        acc.add(if y == 1 { m.ln() } else { (1.0 - m).ln() });
    }
    acc.value()
}

/// Negative log-likelihood plus the ridge `lambda * ||b||^2` on the random
/// intercepts. `lambda` is ignored when the model carries no intercepts.
pub fn neg_loglik(ds: &Dataset, params: &ModelParams, lambda: f64) -> f64 {
    let eval = link_eval(ds, params);
    -log_likelihood(ds.labels(), &eval.mu) + lambda * params.b.norm_squared()
}

/// Gradient of [`neg_loglik`] over the stacked vector `(beta0, beta, b)`.
pub fn full_gradient(ds: &Dataset, params: &ModelParams, lambda: f64) -> DVector<f64> {
    let eval = link_eval(ds, params);
    let p = ds.n_features();
    let n = ds.n_strata();
    let x = ds.features();
    let mut grad = DVector::zeros(1 + p + n);
    for k in 0..ds.n_rows() {
        let res = eval.mu[k] - ds.labels_f64()[k];
        grad[0] += res;
        for j in 0..p {
            grad[1 + j] += res * x[(k, j)];
        }
        grad[1 + p + ds.strata()[k] - 1] += res;
    }
    for i in 0..n {
        grad[1 + p + i] += 2.0 * lambda * params.b[i];
    }
    grad
}

/// Hessian of [`neg_loglik`]: `A' W A` plus `2 lambda` on the intercept
/// block. Built as a Gram product so it is symmetric to the last bit.
pub fn full_hessian(ds: &Dataset, params: &ModelParams, lambda: f64) -> DMatrix<f64> {
    let eval = link_eval(ds, params);
    let p = ds.n_features();
    let n = ds.n_strata();
    let dim = 1 + p + n;
    let x = ds.features();
    let mut root = DMatrix::zeros(ds.n_rows(), dim);
    for k in 0..ds.n_rows() {
        let sw = eval.w[k].sqrt();
        root[(k, 0)] = sw;
        for j in 0..p {
            root[(k, 1 + j)] = sw * x[(k, j)];
        }
        root[(k, 1 + p + ds.strata()[k] - 1)] = sw;
    }
    let mut hess = root.transpose() * &root;
    for i in 0..n {
        hess[(1 + p + i, 1 + p + i)] += 2.0 * lambda;
    }
    hess
}
