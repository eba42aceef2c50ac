//! Damped-Newton solvers for the four direct estimators.
//!
//! All four minimize a convex penalized Bernoulli deviance from a zero start:
//! plain logistic regression over `(beta0, beta)`, its cluster-regularized
//! variant over `(beta0, beta, b)` with ridge weight `lambda` on the
//! intercepts, and the fair versions of both. Fairness is enforced with an
//! escalating quadratic penalty on the covariance excess
//! `max(0, |a' delta / N| - c)^2`, reweighted by `rho * 4^k` per round until
//! the bound holds, so the final iterate approximates the constrained
//! optimum.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::data::{Dataset, FitConfig, ModelParams};
use crate::error::{numerical, Result};
use crate::fairness::{constraint_vector, FairnessContext};
use crate::logit::{link_eval_eta, log_likelihood, sigmoid};

/// Largest linear predictor a data-supported optimum can produce: past this
/// point the summed tail mass `N exp(-eta)` drops below the gradient
/// tolerance, so a "converged" iterate out there is a separation artifact.
/// The 0.9 keeps a margin below that crossover.
fn eta_guard(n_rows: usize, newton_tol: f64) -> f64 {
    0.9 * (2.0 * n_rows as f64 / newton_tol).ln()
}

/// Armijo sufficient-decrease slope fraction.
const ARMIJO_SLOPE: f64 = 1e-4;

/// Outcome of one direct fit.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub params: ModelParams,
    /// Newton iterations summed over all penalty rounds.
    pub iterations: usize,
    /// Sup-norm of the final penalized gradient.
    pub final_grad_norm: f64,
    /// Covariance between the linear predictor and the dataset's sensitive
    /// attribute at the solution.
    pub constraint_value: f64,
    /// True when Newton drove the penalized gradient below `newton_tol`
    /// without running into the saturated-mean zone.
    pub converged: bool,
}

/// One quadratic fairness penalty restricted to the active parameter block.
struct PenaltyTerm {
    a: DVector<f64>,
    n_total: f64,
    rho: f64,
    c: f64,
}

impl PenaltyTerm {
    fn covariance(&self, delta: &DVector<f64>) -> f64 {
        self.a.dot(delta) / self.n_total
    }

    /// Excess over the bound; zero when the constraint holds.
    fn excess(&self, delta: &DVector<f64>) -> (f64, f64) {
        let v = self.covariance(delta);
        ((v.abs() - self.c).max(0.0), v)
    }

    fn value(&self, delta: &DVector<f64>) -> f64 {
        let (m, _) = self.excess(delta);
        self.rho * m * m
    }

    fn add_gradient(&self, delta: &DVector<f64>, grad: &mut DVector<f64>) {
        let (m, v) = self.excess(delta);
        if m > 0.0 {
            let coeff = 2.0 * self.rho * m * v.signum() / self.n_total;
            grad.axpy(coeff, &self.a, 1.0);
        }
    }

    fn add_hessian(&self, delta: &DVector<f64>, hess: &mut DMatrix<f64>) {
        let (m, _) = self.excess(delta);
        if m > 0.0 {
            let coeff = 2.0 * self.rho / (self.n_total * self.n_total);
            add_symmetric_rank1(hess, coeff, &self.a);
        }
    }
}

/// The penalized objective over one design matrix.
struct Problem<'a> {
    ds: &'a Dataset,
    design: DMatrix<f64>,
    /// Offset of the random-intercept block, if the model has one.
    b_offset: Option<usize>,
    lambda: f64,
    penalties: Vec<PenaltyTerm>,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn ridge_value(&self, delta: &DVector<f64>) -> f64 {
        match self.b_offset {
            Some(off) => self.lambda * delta.rows(off, delta.len() - off).norm_squared(),
            None => 0.0,
        }
    }

    fn objective_at_eta(&self, eta: &DVector<f64>, delta: &DVector<f64>) -> f64 {
        let mu = eta.map(sigmoid);
        let mut f = -log_likelihood(self.ds.labels(), &mu) + self.ridge_value(delta);
        for pen in &self.penalties {
            f += pen.value(delta);
        }
        f
    }

    fn gradient(&self, delta: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let residual = mu - self.ds.labels_f64();
        let mut grad = self.design.transpose() * residual;
        if let Some(off) = self.b_offset {
            for i in off..self.dim() {
                grad[i] += 2.0 * self.lambda * delta[i];
            }
        }
        for pen in &self.penalties {
            pen.add_gradient(delta, &mut grad);
        }
        grad
    }

    fn hessian(&self, delta: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        let mut root = self.design.clone();
        for k in 0..root.nrows() {
            let sw = w[k].sqrt();
            root.row_mut(k).scale_mut(sw);
        }
        let mut hess = root.transpose() * &root;
        if let Some(off) = self.b_offset {
            for i in off..self.dim() {
                hess[(i, i)] += 2.0 * self.lambda;
            }
        }
        for pen in &self.penalties {
            pen.add_hessian(delta, &mut hess);
        }
        hess
    }

    fn worst_violation(&self, delta: &DVector<f64>) -> f64 {
        self.penalties
            .iter()
            .map(|p| p.excess(delta).0)
            .fold(0.0, f64::max)
    }
}

/// Rank-1 update `mat += coeff * v v'` that lands bitwise-identical values on
/// both sides of the diagonal, unlike a BLAS-style ger.
pub(crate) fn add_symmetric_rank1(mat: &mut DMatrix<f64>, coeff: f64, v: &DVector<f64>) {
    for i in 0..v.len() {
        for j in i..v.len() {
            let t = coeff * (v[i] * v[j]);
            mat[(i, j)] += t;
            if i != j {
                mat[(j, i)] += t;
            }
        }
    }
}

/// Cholesky factorization with escalating ridge retries.
pub(crate) fn cholesky_ridge(
    mat: &DMatrix<f64>,
    ridge_eps: f64,
) -> Result<Cholesky<f64, Dyn>> {
    for attempt in 0..4 {
        let factor = if attempt == 0 {
            Cholesky::new(mat.clone())
        } else {
            let bump = ridge_eps * 1000f64.powi(attempt - 1);
            let mut bumped = mat.clone();
            for i in 0..bumped.nrows() {
                bumped[(i, i)] += bump;
            }
            Cholesky::new(bumped)
        };
        if let Some(chol) = factor {
            return Ok(chol);
        }
    }
    Err(numerical(
        "system is not positive definite even after ridge retries",
    ))
}

/// Cholesky solve with escalating ridge retries.
fn solve_spd(
    hess: &DMatrix<f64>,
    rhs: &DVector<f64>,
    ridge_eps: f64,
) -> Result<DVector<f64>> {
    Ok(cholesky_ridge(hess, ridge_eps)?.solve(rhs))
}

struct NewtonOutcome {
    delta: DVector<f64>,
    iterations: usize,
    grad_norm: f64,
    converged: bool,
}

/// Damped Newton with Armijo backtracking from the given start.
fn newton(problem: &Problem, start: DVector<f64>, config: &FitConfig) -> Result<NewtonOutcome> {
    let mut delta = start;
    let mut eta = &problem.design * &delta;
    let mut f = problem.objective_at_eta(&eta, &delta);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;

    for _ in 0..config.newton_max_iter {
        let eval = link_eval_eta(eta.clone());
        let grad = problem.gradient(&delta, &eval.mu);
        grad_norm = grad.amax();
        if grad_norm < config.newton_tol {
            converged = true;
            break;
        }
        let hess = problem.hessian(&delta, &eval.w);
        let step = solve_spd(&hess, &(-&grad), config.ridge_eps)?;
        let slope = grad.dot(&step);
        let eta_step = &problem.design * &step;

        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-18 {
            let trial_delta = &delta + &step * t;
            let trial_eta = &eta + &eta_step * t;
            let trial_f = problem.objective_at_eta(&trial_eta, &trial_delta);
            if trial_f <= f + ARMIJO_SLOPE * t * slope {
                delta = trial_delta;
                eta = trial_eta;
                f = trial_f;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }

    if converged && eta.amax() > eta_guard(eta.len(), config.newton_tol) {
        // The gradient only vanished because the means saturated: separation,
        // not convergence.
        converged = false;
    }
    Ok(NewtonOutcome {
        delta,
        iterations,
        grad_norm,
        converged,
    })
}

struct ModelShape {
    with_intercepts: bool,
}

/// Shared driver: builds the design, runs the penalty continuation, and
/// assembles the report.
fn solve(
    ds: &Dataset,
    shape: ModelShape,
    contexts: &[FairnessContext],
    config: &FitConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let p = ds.n_features();
    let n = ds.n_strata();
    let n_rows = ds.n_rows();
    let dim = if shape.with_intercepts { 1 + p + n } else { 1 + p };

    let mut design = DMatrix::zeros(n_rows, dim);
    for k in 0..n_rows {
        design[(k, 0)] = 1.0;
        for j in 0..p {
            design[(k, 1 + j)] = ds.features()[(k, j)];
        }
        if shape.with_intercepts {
            design[(k, 1 + p + ds.strata()[k] - 1)] = 1.0;
        }
    }

    let restricted: Vec<DVector<f64>> = contexts
        .iter()
        .map(|ctx| {
            assert_eq!(
                ctx.a_full.len(),
                1 + p + n,
                "fairness context built on a different dataset shape"
            );
            if shape.with_intercepts {
                ctx.a_full.clone()
            } else {
                ctx.a_full.rows(0, 1 + p).clone_owned()
            }
        })
        .collect();

    let mut problem = Problem {
        ds,
        design,
        b_offset: shape.with_intercepts.then_some(1 + p),
        lambda: config.lambda,
        penalties: Vec::new(),
    };

    let active = config.rho > 0.0 && !restricted.is_empty();
    let rounds = if active { config.continuation_rounds + 1 } else { 1 };

    let mut delta = DVector::zeros(dim);
    let mut iterations = 0;
    let mut grad_norm = f64::INFINITY;
    let mut newton_ok = false;
    for round in 0..rounds {
        if active {
            let rho_k = config.rho * 4f64.powi(round as i32);
            problem.penalties = restricted
                .iter()
                .map(|a| PenaltyTerm {
                    a: a.clone(),
                    n_total: n_rows as f64,
                    rho: rho_k,
                    c: config.c,
                })
                .collect();
        }
        let out = newton(&problem, delta, config)?;
        delta = out.delta;
        iterations += out.iterations;
        grad_norm = out.grad_norm;
        newton_ok = out.converged;
        if !active || problem.worst_violation(&delta) <= config.constraint_tol {
            break;
        }
    }

    let params = if shape.with_intercepts {
        ModelParams::from_delta(&delta, p, n, 0.0)
    } else {
        let mut full = ModelParams::zeros(p, n);
        full.beta0 = delta[0];
        full.beta.copy_from(&delta.rows(1, p));
        full
    };
    let primary = contexts
        .first()
        .cloned()
        .unwrap_or_else(|| constraint_vector(ds));
    let constraint_value = primary.covariance_value(&params.delta());
    Ok(SolveReport {
        params,
        iterations,
        final_grad_norm: grad_norm,
        constraint_value,
        converged: newton_ok,
    })
}

/// Plain logistic regression over `(beta0, beta)`.
pub fn fit_lr(ds: &Dataset, config: &FitConfig) -> Result<SolveReport> {
    solve(ds, ModelShape { with_intercepts: false }, &[], config)
}

/// Logistic regression under the covariance bound for the dataset's own
/// sensitive attribute.
pub fn fit_fair_lr(ds: &Dataset, config: &FitConfig) -> Result<SolveReport> {
    fit_fair_lr_with(ds, &[constraint_vector(ds)], config)
}

/// Fair logistic regression with explicit constraint contexts, one per
/// sensitive attribute.
pub fn fit_fair_lr_with(
    ds: &Dataset,
    contexts: &[FairnessContext],
    config: &FitConfig,
) -> Result<SolveReport> {
    solve(ds, ModelShape { with_intercepts: false }, contexts, config)
}

/// Cluster-regularized logistic regression: one ridge-penalized intercept per
/// stratum.
pub fn fit_crlr(ds: &Dataset, config: &FitConfig) -> Result<SolveReport> {
    solve(ds, ModelShape { with_intercepts: true }, &[], config)
}

/// Cluster-regularized logistic regression under the covariance bound.
pub fn fit_fair_crlr(ds: &Dataset, config: &FitConfig) -> Result<SolveReport> {
    fit_fair_crlr_with(ds, &[constraint_vector(ds)], config)
}

/// Fair cluster-regularized fit with explicit constraint contexts.
pub fn fit_fair_crlr_with(
    ds: &Dataset,
    contexts: &[FairnessContext],
    config: &FitConfig,
) -> Result<SolveReport> {
    solve(ds, ModelShape { with_intercepts: true }, contexts, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Rows drawn from a known logistic model, one stratum.
    fn synthetic(seed: u64, n_rows: usize, beta0: f64, beta: &[f64]) -> Dataset {
        let mut rng = StdRng::seed_from_u64(seed);
        let p = beta.len();
        let x = DMatrix::from_fn(n_rows, p, |_, _| rng.random_range(-1.0..1.0));
        let mut labels = Vec::with_capacity(n_rows);
        for k in 0..n_rows {
            let eta: f64 = beta0 + (0..p).map(|j| beta[j] * x[(k, j)]).sum::<f64>();
            labels.push(if rng.random::<f64>() < sigmoid(eta) { 1 } else { 0 });
        }
        let sensitive: Vec<u8> = (0..n_rows).map(|k| (x[(k, 0)] > 0.0) as u8).collect();
        Dataset::new(x, labels, vec![1; n_rows], sensitive).unwrap()
    }

    /// A dataset whose predictor correlates strongly with the sensitive bit.
    fn biased(seed: u64, n_rows: usize) -> Dataset {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(n_rows, 2);
        let mut labels = Vec::new();
        let mut sens = Vec::new();
        let mut strata = Vec::new();
        for k in 0..n_rows {
            let s = rng.random_range(0..=1u8);
            x[(k, 0)] = rng.random_range(-1.0..1.0);
            x[(k, 1)] = s as f64;
            let eta = -0.5 + 0.8 * x[(k, 0)] + 2.5 * x[(k, 1)];
            labels.push(if rng.random::<f64>() < sigmoid(eta) { 1 } else { 0 });
            sens.push(s);
            strata.push((k % 4) as i64 + 1);
        }
        Dataset::new(x, labels, strata, sens).unwrap()
    }

    #[test]
    fn lr_recovers_generating_coefficients() {
        let ds = synthetic(42, 4000, -0.4, &[0.9, -1.3]);
        let report = fit_lr(&ds, &FitConfig::default()).unwrap();
        assert!(report.converged);
        assert!(report.final_grad_norm < 1e-8);
        assert!((report.params.beta0 - (-0.4)).abs() < 0.12);
        assert!((report.params.beta[0] - 0.9).abs() < 0.12);
        assert!((report.params.beta[1] - (-1.3)).abs() < 0.12);
        assert!(report.params.b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mirrored_data_kills_the_intercept() {
        let base = synthetic(7, 300, 0.6, &[1.1]);
        let n = base.n_rows();
        let mut x = DMatrix::zeros(2 * n, 1);
        let mut labels = Vec::new();
        for k in 0..n {
            x[(k, 0)] = base.features()[(k, 0)];
            labels.push(base.labels()[k]);
            x[(n + k, 0)] = -base.features()[(k, 0)];
            labels.push(1 - base.labels()[k]);
        }
        let sensitive: Vec<u8> = (0..2 * n).map(|k| (k % 2) as u8).collect();
        let ds = Dataset::new(x, labels, vec![1; 2 * n], sensitive).unwrap();
        let report = fit_lr(&ds, &FitConfig::default()).unwrap();
        assert!(report.params.beta0.abs() < 1e-8);
    }

    #[test]
    fn separation_is_flagged() {
        let ds = Dataset::new(
            DMatrix::from_row_slice(2, 1, &[0.5, 1.5]),
            vec![1, 1],
            vec![1, 1],
            vec![0, 1],
        )
        .unwrap();
        let report = fit_lr(&ds, &FitConfig::default()).unwrap();
        assert!(!report.converged);
    }

    #[test]
    fn slack_bound_matches_plain_fit_exactly() {
        let ds = biased(3, 400);
        let plain = fit_lr(&ds, &FitConfig::default()).unwrap();
        let slack = FitConfig {
            c: f64::INFINITY,
            ..FitConfig::default()
        };
        let fair = fit_fair_lr(&ds, &slack).unwrap();
        assert_eq!(fair.params.beta0, plain.params.beta0);
        assert_eq!(fair.params.beta, plain.params.beta);
        assert_eq!(fair.iterations, plain.iterations);
    }

    #[test]
    fn zero_rho_matches_plain_fit_exactly() {
        let ds = biased(5, 300);
        let config = FitConfig {
            rho: 0.0,
            ..FitConfig::default()
        };
        let plain = fit_lr(&ds, &config).unwrap();
        let fair = fit_fair_lr(&ds, &config).unwrap();
        assert_eq!(fair.params.beta0, plain.params.beta0);
        assert_eq!(fair.params.beta, plain.params.beta);

        let plain_cr = fit_crlr(&ds, &config).unwrap();
        let fair_cr = fit_fair_crlr(&ds, &config).unwrap();
        assert_eq!(fair_cr.params.beta, plain_cr.params.beta);
        assert_eq!(fair_cr.params.b, plain_cr.params.b);
    }

    #[test]
    fn constant_attribute_matches_plain_fit_exactly() {
        let base = biased(11, 250);
        let ds = Dataset::new(
            base.features().clone(),
            base.labels().to_vec(),
            base.strata().iter().map(|&s| s as i64).collect(),
            vec![1; base.n_rows()],
        )
        .unwrap();
        let config = FitConfig::default();
        let plain = fit_crlr(&ds, &config).unwrap();
        let fair = fit_fair_crlr(&ds, &config).unwrap();
        assert_eq!(fair.params.beta0, plain.params.beta0);
        assert_eq!(fair.params.beta, plain.params.beta);
        assert_eq!(fair.params.b, plain.params.b);
        assert!(fair.converged);
    }

    #[test]
    fn fair_fit_meets_the_bound() {
        let ds = biased(13, 600);
        let config = FitConfig {
            c: 0.05,
            ..FitConfig::default()
        };
        let plain = fit_lr(&ds, &config).unwrap();
        assert!(plain.constraint_value.abs() > 0.1);
        let fair = fit_fair_lr(&ds, &config).unwrap();
        assert!(fair.converged);
        // A quadratic penalty leaves a small excess over the bound that
        // shrinks with the final penalty weight.
        assert!(fair.constraint_value.abs() <= config.c + 5e-3);
        assert!(fair.constraint_value.abs() < 0.5 * plain.constraint_value.abs());
        // The bound can only cost likelihood, never improve it.
        let f_plain = crate::logit::neg_loglik(&ds, &plain.params, 0.0);
        let f_fair = crate::logit::neg_loglik(&ds, &fair.params, 0.0);
        assert!(f_fair >= f_plain - 1e-9);
    }

    #[test]
    fn fair_crlr_with_large_rho_pins_the_covariance() {
        let ds = biased(17, 500);
        let config = FitConfig {
            c: 0.0,
            rho: 100.0,
            ..FitConfig::default()
        };
        let fair = fit_fair_crlr(&ds, &config).unwrap();
        assert!(fair.constraint_value.abs() <= 1e-4);
    }

    #[test]
    fn huge_lambda_pins_intercepts_to_lr() {
        let ds = biased(19, 400);
        let config = FitConfig {
            lambda: 1e8,
            ..FitConfig::default()
        };
        let crlr = fit_crlr(&ds, &config).unwrap();
        let lr = fit_lr(&ds, &config).unwrap();
        assert!(crlr.params.b.amax() < 1e-3);
        assert!((crlr.params.beta0 - lr.params.beta0).abs() < 1e-3);
        assert!((crlr.params.beta - lr.params.beta).amax() < 1e-3);
    }

    #[test]
    fn single_stratum_crlr_matches_descent_oracle() {
        let ds = synthetic(23, 120, 0.3, &[0.7]);
        let config = FitConfig::default();
        let report = fit_crlr(&ds, &config).unwrap();
        let fitted = crate::logit::neg_loglik(&ds, &report.params, config.lambda);

        // Independent slow path: gradient descent with a fixed shrinking step
        // on the same three-parameter objective.
        let mut theta = DVector::zeros(3);
        let obj = |t: &DVector<f64>| {
            let params = ModelParams {
                beta0: t[0],
                beta: DVector::from_vec(vec![t[1]]),
                b: DVector::from_vec(vec![t[2]]),
                q: 0.0,
            };
            crate::logit::neg_loglik(&ds, &params, config.lambda)
        };
        let mut f = obj(&theta);
        for _ in 0..20_000 {
            let mut grad = DVector::zeros(3);
            for i in 0..3 {
                let mut up = theta.clone();
                up[i] += 1e-6;
                let mut dn = theta.clone();
                dn[i] -= 1e-6;
                grad[i] = (obj(&up) - obj(&dn)) / 2e-6;
            }
            let mut t = 1.0;
            loop {
                let trial = &theta - &grad * t;
                let ft = obj(&trial);
                if ft < f {
                    theta = trial;
                    f = ft;
                    break;
                }
                t *= 0.5;
                if t < 1e-12 {
                    break;
                }
            }
            if grad.amax() < 1e-9 {
                break;
            }
        }
        assert!(
            (fitted - f).abs() < 1e-6,
            "newton {fitted} vs descent {f}"
        );
    }

    #[test]
    fn iterations_are_counted_and_positive() {
        let ds = biased(29, 200);
        let report = fit_fair_lr(&ds, &FitConfig::default()).unwrap();
        assert!(report.iterations > 0);
    }
}
