//! Data containers shared by every estimator.
//!
//! Observations are clustered into strata. Rows are stored sorted by stratum
//! so the random-intercept indicator block of any design matrix is a
//! contiguous run of ones per stratum, and stratum ids are relabeled to a
//! dense `1..=n` range at construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// A clustered binary-outcome dataset with one binary sensitive attribute.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Vec<u8>,
    labels_f64: DVector<f64>,
    strata: Vec<usize>,
    sensitive: Vec<u8>,
    /// Row offset where each stratum begins; has `n_strata + 1` entries.
    stratum_starts: Vec<usize>,
    /// Caller's row index for each stored row.
    permutation: Vec<usize>,
    /// Caller's stratum label for each dense id (`dense id - 1` indexes this).
    stratum_labels: Vec<i64>,
}

impl Dataset {
    /// Builds a dataset from caller-ordered rows. Rows are re-sorted by
    /// stratum label (ties keep their input order) and labels are replaced by
    /// dense ids `1..=n` in ascending label order.
    pub fn new(
        features: DMatrix<f64>,
        labels: Vec<u8>,
        strata: Vec<i64>,
        sensitive: Vec<u8>,
    ) -> Result<Dataset> {
        let n_rows = features.nrows();
        if n_rows == 0 {
            return Err(invalid("dataset has no rows"));
        }
        if features.ncols() == 0 {
            return Err(invalid("dataset has no feature columns"));
        }
        for (name, len) in [
            ("labels", labels.len()),
            ("strata", strata.len()),
            ("sensitive", sensitive.len()),
        ] {
            if len != n_rows {
                return Err(invalid(format!(
                    "{name} has {len} entries but there are {n_rows} rows"
                )));
            }
        }
        if let Some(k) = labels.iter().position(|&y| y > 1) {
            return Err(invalid(format!("label at row {k} is not 0/1")));
        }
        if let Some(k) = sensitive.iter().position(|&s| s > 1) {
            return Err(invalid(format!("sensitive value at row {k} is not 0/1")));
        }

        let mut stratum_labels: Vec<i64> = strata.clone();
        stratum_labels.sort_unstable();
        stratum_labels.dedup();

        let mut permutation: Vec<usize> = (0..n_rows).collect();
        permutation.sort_by_key(|&k| strata[k]);

        let dense_id = |label: i64| stratum_labels.binary_search(&label).unwrap() + 1;

        let mut sorted_features = DMatrix::zeros(n_rows, features.ncols());
        let mut sorted_labels = Vec::with_capacity(n_rows);
        let mut sorted_strata = Vec::with_capacity(n_rows);
        let mut sorted_sensitive = Vec::with_capacity(n_rows);
        for (row, &k) in permutation.iter().enumerate() {
            sorted_features.row_mut(row).copy_from(&features.row(k));
            sorted_labels.push(labels[k]);
            sorted_strata.push(dense_id(strata[k]));
            sorted_sensitive.push(sensitive[k]);
        }

        let n_strata = stratum_labels.len();
        let mut stratum_starts = Vec::with_capacity(n_strata + 1);
        stratum_starts.push(0);
        for id in 1..=n_strata {
            let start = stratum_starts[id - 1];
            let end = sorted_strata[start..].iter().position(|&s| s != id);
            stratum_starts.push(start + end.unwrap_or(n_rows - start));
        }

        let labels_f64 = DVector::from_iterator(n_rows, sorted_labels.iter().map(|&y| y as f64));
        Ok(Dataset {
            features: sorted_features,
            labels: sorted_labels,
            labels_f64,
            strata: sorted_strata,
            sensitive: sorted_sensitive,
            stratum_starts,
            permutation,
            stratum_labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_strata(&self) -> usize {
        self.stratum_labels.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Labels as a float vector, in stored row order.
    pub fn labels_f64(&self) -> &DVector<f64> {
        &self.labels_f64
    }

    /// Dense stratum ids (`1..=n_strata`) in stored row order, ascending.
    pub fn strata(&self) -> &[usize] {
        &self.strata
    }

    pub fn sensitive(&self) -> &[u8] {
        &self.sensitive
    }

    /// Stored-row range of the stratum with dense id `id` (1-based).
    pub fn stratum_rows(&self, id: usize) -> std::ops::Range<usize> {
        self.stratum_starts[id - 1]..self.stratum_starts[id]
    }

    pub fn stratum_size(&self, id: usize) -> usize {
        self.stratum_rows(id).len()
    }

    /// The caller's label for a dense stratum id.
    pub fn stratum_label(&self, id: usize) -> i64 {
        self.stratum_labels[id - 1]
    }

    /// Caller's row index of stored row `k`.
    pub fn source_row(&self, k: usize) -> usize {
        self.permutation[k]
    }

    /// Reorders per-stored-row values back into the caller's row order.
    pub fn restore_order<T: Clone + Default>(&self, values: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); values.len()];
        for (k, v) in values.iter().enumerate() {
            out[self.permutation[k]] = v.clone();
        }
        out
    }
}

/// Parameters of a fitted model: intercept, covariate effects, one random
/// intercept per stratum, and the random-intercept variance.
///
/// Estimators without random effects keep `b` at zero, and `q` is meaningful
/// only for fits that estimate the intercept variance (it is 0 otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub beta0: f64,
    pub beta: DVector<f64>,
    pub b: DVector<f64>,
    pub q: f64,
}

impl ModelParams {
    pub fn zeros(p: usize, n_strata: usize) -> ModelParams {
        ModelParams {
            beta0: 0.0,
            beta: DVector::zeros(p),
            b: DVector::zeros(n_strata),
            q: 0.0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.beta.len()
    }

    pub fn n_strata(&self) -> usize {
        self.b.len()
    }

    /// Stacked parameter vector `(beta0, beta, b)`.
    pub fn delta(&self) -> DVector<f64> {
        let p = self.beta.len();
        let n = self.b.len();
        let mut delta = DVector::zeros(1 + p + n);
        delta[0] = self.beta0;
        delta.rows_mut(1, p).copy_from(&self.beta);
        delta.rows_mut(1 + p, n).copy_from(&self.b);
        delta
    }

    /// Rebuilds parameters from a stacked vector produced by [`delta`].
    ///
    /// [`delta`]: ModelParams::delta
    pub fn from_delta(delta: &DVector<f64>, p: usize, n_strata: usize, q: f64) -> ModelParams {
        assert_eq!(delta.len(), 1 + p + n_strata, "stacked vector length");
        ModelParams {
            beta0: delta[0],
            beta: delta.rows(1, p).clone_owned(),
            b: delta.rows(1 + p, n_strata).clone_owned(),
            q,
        }
    }

    /// Linear predictor for one row; `stratum` is a dense id into this
    /// model's strata, `None` predicts with the random intercept at zero.
    pub fn eta_row(&self, x: &[f64], stratum: Option<usize>) -> f64 {
        let mut eta = self.beta0;
        for (v, coef) in x.iter().zip(self.beta.iter()) {
            eta += v * coef;
        }
        if let Some(id) = stratum {
            if id >= 1 && id <= self.b.len() {
                eta += self.b[id - 1];
            }
        }
        eta
    }

    /// Linear predictor over all dataset rows, in stored row order.
    pub fn linear_predictor(&self, ds: &Dataset) -> DVector<f64> {
        let mut eta = DVector::zeros(ds.n_rows());
        let x = ds.features();
        for k in 0..ds.n_rows() {
            let mut v = self.beta0;
            for j in 0..x.ncols() {
                v += x[(k, j)] * self.beta[j];
            }
            if !self.b.is_empty() {
                v += self.b[ds.strata()[k] - 1];
            }
            eta[k] = v;
        }
        eta
    }
}

/// Hyperparameters and tolerances shared by the solvers.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Ridge weight on the random intercepts in the cluster-regularized fits.
    pub lambda: f64,
    /// Base fairness penalty weight; 0 disables the fairness terms.
    pub rho: f64,
    /// Fairness bound on the sensitive-attribute covariance.
    pub c: f64,
    /// Maximum boosting iterations.
    pub l_max: usize,
    /// Initial random-intercept variance for the boosted fit.
    pub q0: f64,
    /// Stop boosting when the variance moves less than this between
    /// iterations.
    pub q_tol: f64,
    /// Newton stops when the gradient sup-norm falls below this.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Ridge added to a system that fails to factorize.
    pub ridge_eps: f64,
    /// Penalty escalations available to the constrained fits; round `k` uses
    /// weight `rho * 4^k`.
    pub continuation_rounds: usize,
    /// Slack allowed when deciding that the covariance bound is met.
    pub constraint_tol: f64,
    /// Whether the sensitive attribute is appended to the feature matrix by
    /// the data generators.
    pub include_sensitive_as_covariate: bool,
    /// Row count beyond which hat-matrix traces switch to the randomized
    /// estimator.
    pub hutchinson_threshold: usize,
    pub hutchinson_probes: usize,
}

impl Default for FitConfig {
    fn default() -> FitConfig {
        FitConfig {
            lambda: 1.0,
            rho: 0.8,
            c: 0.1,
            l_max: 200,
            q0: 2.0,
            q_tol: 1e-4,
            newton_tol: 1e-8,
            newton_max_iter: 100,
            ridge_eps: 1e-8,
            continuation_rounds: 8,
            constraint_tol: 1e-6,
            include_sensitive_as_covariate: true,
            hutchinson_threshold: 5000,
            hutchinson_probes: 20,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.lambda >= 0.0, "lambda must be nonnegative"),
            (self.rho >= 0.0, "rho must be nonnegative"),
            (self.c >= 0.0, "c must be nonnegative"),
            (self.q0 > 0.0, "q0 must be positive"),
            (self.q_tol > 0.0, "q_tol must be positive"),
            (self.newton_tol > 0.0, "newton_tol must be positive"),
            (self.newton_max_iter > 0, "newton_max_iter must be positive"),
            (self.ridge_eps > 0.0, "ridge_eps must be positive"),
            (self.constraint_tol > 0.0, "constraint_tol must be positive"),
            (self.hutchinson_probes > 0, "hutchinson_probes must be positive"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Invalid(msg.into()));
            }
        }
        Ok(())
    }
}

/// Dense design matrices for the full model and for one boosting component.
///
/// The full design is `[1 | X | Z]`; the component design keeps the intercept
/// column, covariate `r`, and the full indicator block `Z`.
pub struct DesignView {
    pub a_full: DMatrix<f64>,
    pub a_r: DMatrix<f64>,
}

/// Builds the dense designs for covariate `r` (1-based).
pub fn design_view(ds: &Dataset, r: usize) -> Result<DesignView> {
    let p = ds.n_features();
    if r < 1 || r > p {
        return Err(invalid(format!(
            "component index {r} outside 1..={p}"
        )));
    }
    let n_rows = ds.n_rows();
    let n = ds.n_strata();
    let mut a_full = DMatrix::zeros(n_rows, 1 + p + n);
    let mut a_r = DMatrix::zeros(n_rows, n + 2);
    for k in 0..n_rows {
        a_full[(k, 0)] = 1.0;
        a_r[(k, 0)] = 1.0;
        for j in 0..p {
            a_full[(k, 1 + j)] = ds.features()[(k, j)];
        }
        a_r[(k, 1)] = ds.features()[(k, r - 1)];
        let i = ds.strata()[k] - 1;
        a_full[(k, 1 + p + i)] = 1.0;
        a_r[(k, 2 + i)] = 1.0;
    }
    Ok(DesignView { a_full, a_r })
}
