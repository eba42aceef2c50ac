//! Componentwise boosting for the mixed model, with or without the fairness
//! penalty.
//!
//! Each iteration proposes one penalized Newton increment per covariate over
//! the restricted parameter block `(beta0, beta_r, b)`, scores every proposal
//! by BIC with an incrementally maintained hat matrix, applies the winner,
//! then re-estimates the random-intercept variance Q from the current
//! pseudo-Fisher blocks. The loop stops when Q stabilizes.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, FitConfig, ModelParams};
use crate::error::{invalid, numerical, Error, Result};
use crate::fairness::{constraint_vector, FairnessContext};
use crate::logit::{log_likelihood, sigmoid};
use crate::solvers::{add_symmetric_rank1, cholesky_ridge, fit_fair_crlr};

/// Seed for the Hutchinson probe vectors, fixed so repeated fits of the same
/// data give the same trace estimates.
const PROBE_SEED: u64 = 0x9c6f_12ab_33d7_4e01;

/// One proposed update: covariate index, restricted increment
/// `(beta0*, beta_r*, b*)`, and the BIC it would score.
#[derive(Debug, Clone)]
pub struct ComponentStep {
    pub r: usize,
    pub increment: DVector<f64>,
    pub bic: f64,
}

/// Running record of one boosted fit.
#[derive(Debug, Clone)]
pub struct FitTrace {
    /// Covariate selected at each iteration (1-based).
    pub selected: Vec<usize>,
    /// Candidate BICs per iteration; skipped candidates hold infinity.
    pub bic_history: Vec<Vec<f64>>,
    /// Variance component trajectory starting at q0.
    pub q_history: Vec<f64>,
    /// Fitted degrees of freedom after each iteration.
    pub hat_trace: Vec<f64>,
    /// Newton iterations spent inside the warm start.
    pub warm_iterations: usize,
    pub iterations: usize,
    pub converged: bool,
    /// True when hat traces came from randomized probes instead of the dense
    /// product.
    pub randomized_trace: bool,
}

/// Either the exact hat product or a randomized sketch of it.
enum HatTracker {
    /// The running product `P = (I - M_j) ... (I - M_0)`, kept densely.
    Dense(DMatrix<f64>),
    /// Rademacher probes `z` and their images `P z`; traces become averages
    /// of quadratic forms.
    Probes {
        probes: DMatrix<f64>,
        images: DMatrix<f64>,
    },
}

/// Boosting state between iterations.
pub struct BoostState {
    pub params: ModelParams,
    pub eta: DVector<f64>,
    pub mu: DVector<f64>,
    hat_product: HatTracker,
    pub q_history: Vec<f64>,
    pub selected: Vec<usize>,
    pub bic_trace: Vec<Vec<f64>>,
    hat_trace: Vec<f64>,
    warm_iterations: usize,
}

impl BoostState {
    fn uses_probes(&self) -> bool {
        matches!(self.hat_product, HatTracker::Probes { .. })
    }
}

/// Applies the restricted design `[1, x_r, Z]` and its transpose without
/// materializing it, and applies the hat factor `M_r = W A_r FH^-1 A_r'`.
struct ComponentOp<'a> {
    ds: &'a Dataset,
    r: usize,
    w: &'a DVector<f64>,
    chol: &'a Cholesky<f64, Dyn>,
}

impl ComponentOp<'_> {
    /// `A_r v` for a restricted vector `v = (v0, v_r, v_b)`.
    fn apply_design(&self, v: &DVector<f64>) -> DVector<f64> {
        let x = self.ds.features();
        DVector::from_fn(self.ds.n_rows(), |k, _| {
            v[0] + x[(k, self.r - 1)] * v[1] + v[2 + self.ds.strata()[k] - 1]
        })
    }

    /// `A_r' u`.
    fn apply_design_t(&self, u: &DVector<f64>) -> DVector<f64> {
        let x = self.ds.features();
        let n = self.ds.n_strata();
        let mut out = DVector::zeros(2 + n);
        for k in 0..self.ds.n_rows() {
            out[0] += u[k];
            out[1] += x[(k, self.r - 1)] * u[k];
            out[2 + self.ds.strata()[k] - 1] += u[k];
        }
        out
    }

    /// `M_r u = W A_r FH^-1 A_r' u`.
    fn apply_m(&self, u: &DVector<f64>) -> DVector<f64> {
        let solved = self.chol.solve(&self.apply_design_t(u));
        let mut out = self.apply_design(&solved);
        out.component_mul_assign(self.w);
        out
    }
}

impl HatTracker {
    /// `tr(P)`.
    fn trace_p(&self) -> f64 {
        match self {
            HatTracker::Dense(p) => p.trace(),
            HatTracker::Probes { probes, images } => {
                let k = probes.ncols();
                (0..k).map(|j| probes.column(j).dot(&images.column(j))).sum::<f64>() / k as f64
            }
        }
    }

    /// `tr(M_r P)`.
    fn trace_m_product(&self, op: &ComponentOp) -> f64 {
        match self {
            HatTracker::Dense(p) => {
                let n_rows = p.nrows();
                let m = 2 + op.ds.n_strata();
                // Y = P (W A_r), built column by column from the design
                // structure: two dense columns, then one short column per
                // stratum.
                let mut y = DMatrix::zeros(n_rows, m);
                let wx = {
                    let x = op.ds.features();
                    DVector::from_fn(n_rows, |k, _| op.w[k] * x[(k, op.r - 1)])
                };
                y.set_column(0, &(p * op.w));
                y.set_column(1, &(p * wx));
                for i in 0..op.ds.n_strata() {
                    let mut col = DVector::zeros(n_rows);
                    for k in op.ds.stratum_rows(i + 1) {
                        col.axpy(op.w[k], &p.column(k), 1.0);
                    }
                    y.set_column(2 + i, &col);
                }
                let mut c = DMatrix::zeros(m, m);
                for j in 0..m {
                    c.set_column(j, &op.apply_design_t(&y.column(j).clone_owned()));
                }
                op.chol.solve(&c).trace()
            }
            HatTracker::Probes { probes, images } => {
                let k = probes.ncols();
                (0..k)
                    .map(|j| {
                        probes
                            .column(j)
                            .dot(&op.apply_m(&images.column(j).clone_owned()))
                    })
                    .sum::<f64>()
                    / k as f64
            }
        }
    }

    /// `P <- (I - M_j) P` after a component is selected.
    fn absorb(&mut self, op: &ComponentOp) {
        match self {
            HatTracker::Dense(p) => {
                let n_rows = p.nrows();
                let m = 2 + op.ds.n_strata();
                let mut r = DMatrix::zeros(m, n_rows);
                for c in 0..n_rows {
                    r.set_column(c, &op.apply_design_t(&p.column(c).clone_owned()));
                }
                let s = op.chol.solve(&r);
                let x = op.ds.features();
                let wx = DVector::from_fn(n_rows, |k, _| op.w[k] * x[(k, op.r - 1)]);
                p.ger(-1.0, op.w, &s.row(0).transpose(), 1.0);
                p.ger(-1.0, &wx, &s.row(1).transpose(), 1.0);
                for i in 0..op.ds.n_strata() {
                    let rows: Vec<usize> = op.ds.stratum_rows(i + 1).collect();
                    for c in 0..n_rows {
                        let val = s[(2 + i, c)];
                        for &k in &rows {
                            p[(k, c)] -= op.w[k] * val;
                        }
                    }
                }
            }
            HatTracker::Probes { images, .. } => {
                for j in 0..images.ncols() {
                    let m_img = op.apply_m(&images.column(j).clone_owned());
                    let mut col = images.column_mut(j);
                    col -= m_img;
                }
            }
        }
    }
}

/// `FH_r` and `FS_r` for one covariate at the current state.
fn component_system(
    state: &BoostState,
    ds: &Dataset,
    ctx: &FairnessContext,
    config: &FitConfig,
    r: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let p = ds.n_features();
    let n = ds.n_strata();
    if r < 1 || r > p {
        return Err(invalid(format!("component index {r} outside 1..={p}")));
    }
    if !(state.params.q > 0.0) {
        return Err(invalid("variance component must be positive"));
    }
    let x = ds.features();
    let m = 2 + n;
    let q_inv = 1.0 / state.params.q;

    let mut fh = DMatrix::zeros(m, m);
    let mut fs = DVector::zeros(m);
    for k in 0..ds.n_rows() {
        let w = state.mu[k] * (1.0 - state.mu[k]);
        let xv = x[(k, r - 1)];
        let res = ds.labels_f64()[k] - state.mu[k];
        let slot = 2 + ds.strata()[k] - 1;
        fh[(0, 0)] += w;
        fh[(0, 1)] += w * xv;
        fh[(1, 1)] += w * xv * xv;
        fh[(0, slot)] += w;
        fh[(1, slot)] += w * xv;
        fh[(slot, slot)] += w;
        fs[0] += res;
        fs[1] += xv * res;
        fs[slot] += res;
    }
    fh[(1, 0)] = fh[(0, 1)];
    for i in 0..n {
        fh[(2 + i, 0)] = fh[(0, 2 + i)];
        fh[(2 + i, 1)] = fh[(1, 2 + i)];
        fh[(2 + i, 2 + i)] += q_inv;
        fs[2 + i] -= q_inv * state.params.b[i];
    }

    let delta_r = restricted_delta(&state.params, r);
    if config.rho > 0.0 {
        let a_r = ctx.restrict_to_component(r)?;
        let coeff = 2.0 * config.rho / ds.n_rows() as f64;
        add_symmetric_rank1(&mut fh, coeff, &a_r);
        fs.axpy(-coeff * a_r.dot(&delta_r), &a_r, 1.0);
    }
    Ok((fh, fs, delta_r))
}

/// Current `(beta0, beta_r, b)` block.
fn restricted_delta(params: &ModelParams, r: usize) -> DVector<f64> {
    let n = params.b.len();
    let mut delta = DVector::zeros(2 + n);
    delta[0] = params.beta0;
    delta[1] = params.beta[r - 1];
    delta.rows_mut(2, n).copy_from(&params.b);
    delta
}

/// Penalized Newton increment for covariate `r` at the current state. The
/// returned step carries no BIC yet.
pub fn component_step(
    state: &BoostState,
    ds: &Dataset,
    ctx: &FairnessContext,
    config: &FitConfig,
    r: usize,
) -> Result<ComponentStep> {
    let (fh, fs, _) = component_system(state, ds, ctx, config, r)?;
    let chol = cholesky_ridge(&fh, config.ridge_eps)?;
    Ok(ComponentStep {
        r,
        increment: chol.solve(&fs),
        bic: f64::NAN,
    })
}

/// Penalized log-likelihood at the trial produced by applying `increment` to
/// the restricted block of `r`.
fn trial_objective(
    state: &BoostState,
    ds: &Dataset,
    ctx: &FairnessContext,
    config: &FitConfig,
    r: usize,
    increment: &DVector<f64>,
    delta_r: &DVector<f64>,
    op: &ComponentOp,
) -> Result<f64> {
    let trial_eta = &state.eta + op.apply_design(increment);
    let trial_mu = trial_eta.map(sigmoid);
    let mut omega = log_likelihood(ds.labels(), &trial_mu);
    if config.rho > 0.0 {
        let a_r = ctx.restrict_to_component(r)?;
        let v = a_r.dot(&(delta_r + increment));
        omega -= config.rho / ds.n_rows() as f64 * v * v;
    }
    Ok(omega)
}

/// BIC of one candidate step: twice the negative penalized likelihood at the
/// trial plus twice the fitted degrees of freedom times log of the stratum
/// count.
pub fn bic_score(
    state: &BoostState,
    ds: &Dataset,
    ctx: &FairnessContext,
    config: &FitConfig,
    candidate: &ComponentStep,
) -> Result<f64> {
    let (fh, _, delta_r) = component_system(state, ds, ctx, config, candidate.r)?;
    let chol = cholesky_ridge(&fh, config.ridge_eps)?;
    let w = state.mu.map(|m| m * (1.0 - m));
    let op = ComponentOp {
        ds,
        r: candidate.r,
        w: &w,
        chol: &chol,
    };
    let omega = trial_objective(
        state,
        ds,
        ctx,
        config,
        candidate.r,
        &candidate.increment,
        &delta_r,
        &op,
    )?;
    let tr_p = state.hat_product.trace_p();
    let tr_h = ds.n_rows() as f64 - tr_p + state.hat_product.trace_m_product(&op);
    Ok(-2.0 * omega + 2.0 * tr_h * (ds.n_strata() as f64).ln())
}

struct Candidate {
    step: ComponentStep,
    chol: Cholesky<f64, Dyn>,
}

/// One full boosting iteration: propose an increment per covariate, score
/// each by BIC, apply the best, and fold its hat factor into the running
/// product.
pub fn boost_iteration(
    state: &mut BoostState,
    ds: &Dataset,
    ctx: &FairnessContext,
    config: &FitConfig,
) -> Result<()> {
    let p = ds.n_features();
    let w = state.mu.map(|m| m * (1.0 - m));
    let tr_p = state.hat_product.trace_p();
    let ln_n = (ds.n_strata() as f64).ln();
    let n_rows = ds.n_rows() as f64;

    let mut bics = vec![f64::INFINITY; p];
    let mut best: Option<Candidate> = None;
    for r in 1..=p {
        let (fh, fs, delta_r) = component_system(state, ds, ctx, config, r)?;
        let chol = match cholesky_ridge(&fh, config.ridge_eps) {
            Ok(c) => c,
            Err(Error::Numerical(_)) => continue,
            Err(e) => return Err(e),
        };
        let increment = chol.solve(&fs);
        let op = ComponentOp {
            ds,
            r,
            w: &w,
            chol: &chol,
        };
        let omega = trial_objective(state, ds, ctx, config, r, &increment, &delta_r, &op)?;
        let tr_h = n_rows - tr_p + state.hat_product.trace_m_product(&op);
        let bic = -2.0 * omega + 2.0 * tr_h * ln_n;
        bics[r - 1] = bic;
        let better = match &best {
            None => true,
            Some(current) => bic < current.step.bic,
        };
        if better {
            best = Some(Candidate {
                step: ComponentStep {
                    r,
                    increment,
                    bic,
                },
                chol,
            });
        }
    }

    let winner = best.ok_or_else(|| numerical("every component step failed to factorize"))?;
    let op = ComponentOp {
        ds,
        r: winner.step.r,
        w: &w,
        chol: &winner.chol,
    };
    state.hat_product.absorb(&op);

    state.params.beta0 += winner.step.increment[0];
    state.params.beta[winner.step.r - 1] += winner.step.increment[1];
    let n = ds.n_strata();
    for i in 0..n {
        state.params.b[i] += winner.step.increment[2 + i];
    }
    state.eta = state.params.linear_predictor(ds);
    state.mu = state.eta.map(sigmoid);
    state.selected.push(winner.step.r);
    state.bic_trace.push(bics);
    state
        .hat_trace
        .push(ds.n_rows() as f64 - state.hat_product.trace_p());
    Ok(())
}

/// Initial boosting state: parameters from the fair cluster-regularized fit
/// (plain when rho is zero), variance at q0, and the hat product seeded with
/// the ridge hat matrix of the first-covariate design.
pub fn warm_start(ds: &Dataset, config: &FitConfig) -> Result<BoostState> {
    config.validate()?;
    let report = fit_fair_crlr(ds, config)?;
    let mut params = report.params;
    params.q = config.q0;
    let mut state = from_params(ds, params, config)?;
    state.warm_iterations = report.iterations;
    Ok(state)
}

/// Boosting state at explicitly given parameters. The hat product is seeded
/// from the base ridge hat matrix evaluated at these parameters' weights.
pub fn from_params(ds: &Dataset, params: ModelParams, config: &FitConfig) -> Result<BoostState> {
    config.validate()?;
    if !(params.q > 0.0) {
        return Err(invalid("variance component must be positive"));
    }
    let eta = params.linear_predictor(ds);
    let mu = eta.map(sigmoid);
    let w = mu.map(|m| m * (1.0 - m));

    let n_rows = ds.n_rows();
    let n = ds.n_strata();
    let m = 2 + n;
    let x = ds.features();

    // G = A_1' W A_1 + K at the current weights and variance; no fairness
    // term enters the base hat matrix.
    let mut g = DMatrix::zeros(m, m);
    for k in 0..n_rows {
        let wv = w[k];
        let xv = x[(k, 0)];
        let slot = 2 + ds.strata()[k] - 1;
        g[(0, 0)] += wv;
        g[(0, 1)] += wv * xv;
        g[(1, 1)] += wv * xv * xv;
        g[(0, slot)] += wv;
        g[(1, slot)] += wv * xv;
        g[(slot, slot)] += wv;
    }
    g[(1, 0)] = g[(0, 1)];
    for i in 0..n {
        g[(2 + i, 0)] = g[(0, 2 + i)];
        g[(2 + i, 1)] = g[(1, 2 + i)];
        g[(2 + i, 2 + i)] += 1.0 / params.q;
    }
    let chol = cholesky_ridge(&g, config.ridge_eps)?;

    // M_0 = A_1 G^-1 A_1' W; the weight sits on the right in the base
    // factor, unlike the per-component factors.
    let design_t_weighted = |u: &DVector<f64>| {
        let mut out = DVector::zeros(m);
        for k in 0..n_rows {
            let wu = w[k] * u[k];
            out[0] += wu;
            out[1] += x[(k, 0)] * wu;
            out[2 + ds.strata()[k] - 1] += wu;
        }
        out
    };
    let design_apply = |v: &DVector<f64>| {
        DVector::from_fn(n_rows, |k, _| {
            v[0] + x[(k, 0)] * v[1] + v[2 + ds.strata()[k] - 1]
        })
    };

    let hat_product = if n_rows > config.hutchinson_threshold {
        let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
        let probes = DMatrix::from_fn(n_rows, config.hutchinson_probes, |_, _| {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        });
        let mut images = probes.clone();
        for j in 0..images.ncols() {
            let z = images.column(j).clone_owned();
            let m0z = design_apply(&chol.solve(&design_t_weighted(&z)));
            let mut col = images.column_mut(j);
            col -= m0z;
        }
        HatTracker::Probes { probes, images }
    } else {
        let mut r = DMatrix::zeros(m, n_rows);
        for c in 0..n_rows {
            let wv = w[c];
            r[(0, c)] = wv;
            r[(1, c)] = wv * x[(c, 0)];
            r[(2 + ds.strata()[c] - 1, c)] = wv;
        }
        let s = chol.solve(&r);
        let mut prod = DMatrix::identity(n_rows, n_rows);
        let ones = DVector::from_element(n_rows, 1.0);
        let x1 = DVector::from_fn(n_rows, |k, _| x[(k, 0)]);
        prod.ger(-1.0, &ones, &s.row(0).transpose(), 1.0);
        prod.ger(-1.0, &x1, &s.row(1).transpose(), 1.0);
        for i in 0..n {
            let rows: Vec<usize> = ds.stratum_rows(i + 1).collect();
            for c in 0..n_rows {
                let val = s[(2 + i, c)];
                for &k in &rows {
                    prod[(k, c)] -= val;
                }
            }
        }
        HatTracker::Dense(prod)
    };

    let q0 = params.q;
    Ok(BoostState {
        params,
        eta,
        mu,
        hat_product,
        q_history: vec![q0],
        selected: Vec::new(),
        bic_trace: Vec::new(),
        hat_trace: Vec::new(),
        warm_iterations: 0,
    })
}

/// Per-stratum posterior variances `V_i` from the current pseudo-Fisher
/// blocks.
fn stratum_variances(ds: &Dataset, mu: &DVector<f64>, q: f64) -> Result<Vec<f64>> {
    let p = ds.n_features();
    let n = ds.n_strata();
    let x = ds.features();
    let q_inv = 1.0 / q;

    let mut f_hat = DMatrix::zeros(p, p);
    let mut f_scalar = vec![q_inv; n];
    let mut f_cross = vec![DVector::zeros(p); n];
    for k in 0..ds.n_rows() {
        let d = mu[k] * (1.0 - mu[k]);
        let i = ds.strata()[k] - 1;
        f_scalar[i] += d;
        for a in 0..p {
            let xa = x[(k, a)];
            f_cross[i][a] += d * xa;
            for b in a..p {
                f_hat[(a, b)] += d * xa * x[(k, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            f_hat[(a, b)] = f_hat[(b, a)];
        }
    }

    let mut schur = f_hat;
    for i in 0..n {
        schur.ger(-1.0 / f_scalar[i], &f_cross[i], &f_cross[i], 1.0);
    }
    let chol = cholesky_ridge(&schur, 1e-8)?;

    Ok((0..n)
        .map(|i| {
            let solved = chol.solve(&f_cross[i]);
            1.0 / f_scalar[i] + f_cross[i].dot(&solved) / (f_scalar[i] * f_scalar[i])
        })
        .collect())
}

/// Mean of posterior variances plus squared intercepts, floored away from
/// zero.
fn assemble_q(variances: &[f64], b: &DVector<f64>) -> f64 {
    let n = variances.len() as f64;
    let total: f64 = variances
        .iter()
        .zip(b.iter())
        .map(|(v, bi)| v + bi * bi)
        .sum();
    (total / n).max(1e-6)
}

/// Re-estimates the random-intercept variance at the current state.
pub fn variance_update(state: &BoostState, ds: &Dataset) -> Result<f64> {
    if !(state.params.q > 0.0) {
        return Err(invalid("variance component must be positive"));
    }
    let variances = stratum_variances(ds, &state.mu, state.params.q)?;
    Ok(assemble_q(&variances, &state.params.b))
}

/// Boosted mixed model under the fairness penalty; rho zero gives the plain
/// mixed model.
pub fn fit_fair_glmm(ds: &Dataset, config: &FitConfig) -> Result<(ModelParams, FitTrace)> {
    config.validate()?;
    let ctx = constraint_vector(ds);
    let mut state = warm_start(ds, config)?;
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..config.l_max {
        boost_iteration(&mut state, ds, &ctx, config)?;
        iterations += 1;
        let q_prev = state.params.q;
        let q_new = variance_update(&state, ds)?;
        state.params.q = q_new;
        state.q_history.push(q_new);
        if (q_new - q_prev).abs() < config.q_tol {
            converged = true;
            break;
        }
    }
    let trace = FitTrace {
        selected: state.selected.clone(),
        bic_history: state.bic_trace.clone(),
        q_history: state.q_history.clone(),
        hat_trace: state.hat_trace.clone(),
        warm_iterations: state.warm_iterations,
        iterations,
        converged,
        randomized_trace: state.uses_probes(),
    };
    Ok((state.params, trace))
}

/// Boosted mixed model without the fairness penalty.
pub fn fit_glmm(ds: &Dataset, config: &FitConfig) -> Result<(ModelParams, FitTrace)> {
    let plain = FitConfig {
        rho: 0.0,
        ..config.clone()
    };
    fit_fair_glmm(ds, &plain)
}
