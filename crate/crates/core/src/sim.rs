//! Synthetic populations, stratified train/test splits, replication runs,
//! and table-style summaries.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{Dataset, FitConfig};
use crate::error::{invalid, Result};
use crate::estimators::Estimator;
use crate::logit::sigmoid;
use crate::metrics;

/// Mixed into the generation seed so the split draws from its own stream.
const SPLIT_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

/// The four built-in study designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    UnfairStrata,
    FairStrata,
    UnfairNostrata,
    FairNostrata,
}

impl Scenario {
    pub fn all() -> [Scenario; 4] {
        [
            Scenario::UnfairStrata,
            Scenario::FairStrata,
            Scenario::UnfairNostrata,
            Scenario::FairNostrata,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::UnfairStrata => "unfair-strata",
            Scenario::FairStrata => "fair-strata",
            Scenario::UnfairNostrata => "unfair-nostrata",
            Scenario::FairNostrata => "fair-nostrata",
        }
    }

    pub fn parse(name: &str) -> Result<Scenario> {
        Scenario::all()
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| {
                invalid(format!(
                    "unknown scenario {name:?}; expected one of unfair-strata, \
                     fair-strata, unfair-nostrata, fair-nostrata"
                ))
            })
    }

    /// Default parameters for this scenario.
    pub fn spec(self) -> ScenarioSpec {
        let unfair = [-2.0, 0.4, 0.8, 0.5, 3.0];
        let fair = [-0.1, 1.0, 1.0, 1.0, 0.1];
        let (beta, strata_effect) = match self {
            Scenario::UnfairStrata => (unfair, true),
            Scenario::FairStrata => (fair, true),
            Scenario::UnfairNostrata => (unfair, false),
            Scenario::FairNostrata => (fair, false),
        };
        ScenarioSpec {
            beta,
            strata_effect,
            // Random intercepts with standard deviation 3.
            b_variance: 9.0,
            n_strata: 100,
            stratum_size: 1000,
            c: 0.1,
            rho: 0.8,
            lambda: 1.0,
            seed: 1,
        }
    }
}

/// Everything needed to draw one synthetic population and fit it.
///
/// `beta` holds the intercept, three coefficients for standard-normal
/// covariates, and the coefficient of the binary sensitive feature, in that
/// order. Random intercepts are drawn per stratum only when `strata_effect`
/// is set; the stratum labels themselves always exist.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub beta: [f64; 5],
    pub strata_effect: bool,
    pub b_variance: f64,
    pub n_strata: usize,
    pub stratum_size: usize,
    pub c: f64,
    pub rho: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_strata == 0 {
            return Err(invalid("n_strata must be at least 1"));
        }
        if self.stratum_size < 4 {
            return Err(invalid("stratum_size must be at least 4"));
        }
        if !(self.b_variance > 0.0) {
            return Err(invalid("b_variance must be positive"));
        }
        for (name, v) in [("c", self.c), ("rho", self.rho), ("lambda", self.lambda)] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("{name} must be finite and non-negative")));
            }
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(invalid("beta entries must be finite"));
        }
        Ok(())
    }

    /// Fit settings carried by the spec; everything else keeps its default.
    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            lambda: self.lambda,
            rho: self.rho,
            c: self.c,
            ..FitConfig::default()
        }
    }
}

/// Draws one population: three N(0,1) covariates, a Bernoulli(0.5) sensitive
/// feature stored both as the fourth feature column and as the sensitive
/// vector, stratum labels `1..=n_strata`, and labels from the logit model.
pub fn generate_population(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_rows = spec.n_strata * spec.stratum_size;
    let b_sd = spec.b_variance.sqrt();
    let [beta0, beta1, beta2, beta3, beta_s] = spec.beta;

    let mut features = DMatrix::zeros(n_rows, 4);
    let mut labels = Vec::with_capacity(n_rows);
    let mut strata = Vec::with_capacity(n_rows);
    let mut sensitive = Vec::with_capacity(n_rows);
    let mut row = 0;
    for stratum in 1..=spec.n_strata {
        let b_i = if spec.strata_effect {
            b_sd * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        for _ in 0..spec.stratum_size {
            let x1: f64 = rng.sample(StandardNormal);
            let x2: f64 = rng.sample(StandardNormal);
            let x3: f64 = rng.sample(StandardNormal);
            let s = u8::from(rng.random::<bool>());
            let eta =
                beta0 + beta1 * x1 + beta2 * x2 + beta3 * x3 + beta_s * f64::from(s) + b_i;
            let y = u8::from(rng.random::<f64>() < sigmoid(eta));
            features[(row, 0)] = x1;
            features[(row, 1)] = x2;
            features[(row, 2)] = x3;
            features[(row, 3)] = f64::from(s);
            labels.push(y);
            strata.push(stratum as i64);
            sensitive.push(s);
            row += 1;
        }
    }
    Dataset::new(features, labels, strata, sensitive)
}

/// Picks 3 to 5 training rows per stratum (capped one below the stratum size
/// so every stratum keeps at least one test row). Returns stored-row indices.
pub fn split_rows(ds: &Dataset, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for id in 1..=ds.n_strata() {
        let rows = ds.stratum_rows(id);
        let size = rows.len();
        if size < 5 {
            return Err(invalid(format!(
                "stratum {} has {size} rows; the split needs at least 5",
                ds.stratum_label(id)
            )));
        }
        let want: usize = rng.random_range(3..=5);
        let take = want.min(size - 1);
        let mut picked = vec![false; size];
        for k in rand::seq::index::sample(&mut rng, size, take) {
            picked[k] = true;
        }
        for (offset, &chosen) in picked.iter().enumerate() {
            let row = rows.start + offset;
            if chosen {
                train.push(row);
            } else {
                test.push(row);
            }
        }
    }
    Ok((train, test))
}

/// Copies the given stored rows into a new dataset, keeping original stratum
/// labels so dense ids stay aligned across subsets of the same population.
pub fn subset(ds: &Dataset, rows: &[usize]) -> Result<Dataset> {
    if rows.is_empty() {
        return Err(invalid("row subset is empty"));
    }
    let mut features = DMatrix::zeros(rows.len(), ds.n_features());
    let mut labels = Vec::with_capacity(rows.len());
    let mut strata = Vec::with_capacity(rows.len());
    let mut sensitive = Vec::with_capacity(rows.len());
    for (new_row, &row) in rows.iter().enumerate() {
        if row >= ds.n_rows() {
            return Err(invalid(format!("row index {row} is out of range")));
        }
        features.row_mut(new_row).copy_from(&ds.features().row(row));
        labels.push(ds.labels()[row]);
        strata.push(ds.stratum_label(ds.strata()[row]));
        sensitive.push(ds.sensitive()[row]);
    }
    Dataset::new(features, labels, strata, sensitive)
}

pub fn split_train_test(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_rows, test_rows) = split_rows(ds, seed)?;
    Ok((subset(ds, &train_rows)?, subset(ds, &test_rows)?))
}

/// Drops the trailing feature column (the sensitive copy added by
/// `generate_population`) for runs that keep s out of the design.
fn without_last_feature(ds: &Dataset) -> Result<Dataset> {
    let p = ds.n_features();
    if p < 2 {
        return Err(invalid("dataset has no feature column to drop"));
    }
    let features = ds.features().columns(0, p - 1).into_owned();
    let strata: Vec<i64> = ds.strata().iter().map(|&id| ds.stratum_label(id)).collect();
    Dataset::new(
        features,
        ds.labels().to_vec(),
        strata,
        ds.sensitive().to_vec(),
    )
}

/// One estimator's test-set result inside a replication. A failed fit keeps
/// the error text and NaN metrics instead of aborting the run.
#[derive(Debug, Clone)]
pub struct EstimatorScore {
    pub estimator: Estimator,
    pub accuracy: f64,
    pub disparate_impact: f64,
    pub converged: bool,
    pub seconds: f64,
    pub failure: Option<String>,
}

impl EstimatorScore {
    fn failed(estimator: Estimator, seconds: f64, message: String) -> EstimatorScore {
        EstimatorScore {
            estimator,
            accuracy: f64::NAN,
            disparate_impact: f64::NAN,
            converged: false,
            seconds,
            failure: Some(message),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicationReport {
    pub rep: usize,
    pub scores: Vec<EstimatorScore>,
}

/// Generates, splits, fits all six estimators on the training rows, and
/// scores each on the held-out rows.
pub fn run_replication(spec: &ScenarioSpec, rep: usize) -> Result<ReplicationReport> {
    run_replication_with(spec, rep, &spec.fit_config())
}

/// Same as `run_replication` with explicit fit settings.
pub fn run_replication_with(
    spec: &ScenarioSpec,
    rep: usize,
    config: &FitConfig,
) -> Result<ReplicationReport> {
    let mut rep_spec = spec.clone();
    rep_spec.seed = spec.seed.wrapping_add(rep as u64);
    let population = generate_population(&rep_spec)?;
    let (mut train, mut test) = split_train_test(&population, rep_spec.seed ^ SPLIT_SEED_OFFSET)?;
    if !config.include_sensitive_as_covariate {
        train = without_last_feature(&train)?;
        test = without_last_feature(&test)?;
    }

    let mut scores = Vec::with_capacity(Estimator::all().len());
    for est in Estimator::all() {
        let clock = Instant::now();
        let fitted = est.fit(&train, config);
        let score = match fitted {
            Ok(outcome) => {
                let seconds = clock.elapsed().as_secs_f64();
                match metrics::evaluate(&outcome.params, &test, est.uses_strata()) {
                    Ok(pair) => EstimatorScore {
                        estimator: est,
                        accuracy: pair.accuracy,
                        disparate_impact: pair.disparate_impact,
                        converged: outcome.converged,
                        seconds,
                        failure: None,
                    },
                    Err(err) => EstimatorScore::failed(est, seconds, err.to_string()),
                }
            }
            Err(err) => EstimatorScore::failed(est, clock.elapsed().as_secs_f64(), err.to_string()),
        };
        scores.push(score);
    }
    Ok(ReplicationReport { rep, scores })
}

/// Runs `n_reps` replications with seeds `spec.seed + rep`, in parallel.
pub fn run_replications(spec: &ScenarioSpec, n_reps: usize) -> Result<Vec<ReplicationReport>> {
    run_replications_with(spec, n_reps, &spec.fit_config())
}

pub fn run_replications_with(
    spec: &ScenarioSpec,
    n_reps: usize,
    config: &FitConfig,
) -> Result<Vec<ReplicationReport>> {
    if n_reps == 0 {
        return Err(invalid("n_reps must be at least 1"));
    }
    (0..n_reps)
        .into_par_iter()
        .map(|rep| run_replication_with(spec, rep, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    DisparateImpact,
}

impl Metric {
    pub fn all() -> [Metric; 2] {
        [Metric::Accuracy, Metric::DisparateImpact]
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "ac",
            Metric::DisparateImpact => "di",
        }
    }

    pub fn heading(self) -> &'static str {
        match self {
            Metric::Accuracy => "Accuracy",
            Metric::DisparateImpact => "Disparate impact",
        }
    }

    fn pick(self, score: &EstimatorScore) -> f64 {
        match self {
            Metric::Accuracy => score.accuracy,
            Metric::DisparateImpact => score.disparate_impact,
        }
    }
}

/// Distribution summary of one metric for one estimator across replications.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub estimator: Estimator,
    pub metric: Metric,
    pub mean: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub std: f64,
    /// Replications that produced a value (failures are left out).
    pub n_used: usize,
}

/// Summarizes each estimator and metric over the successful replications.
pub fn summarize(reports: &[ReplicationReport]) -> Result<Vec<SummaryRow>> {
    if reports.is_empty() {
        return Err(invalid("no replication reports to summarize"));
    }
    let mut rows = Vec::new();
    for est in Estimator::all() {
        for metric in Metric::all() {
            let mut values: Vec<f64> = reports
                .iter()
                .flat_map(|r| r.scores.iter())
                .filter(|s| s.estimator == est && s.failure.is_none())
                .map(|s| metric.pick(s))
                .collect();
            if values.is_empty() {
                continue;
            }
            values.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            rows.push(SummaryRow {
                estimator: est,
                metric,
                mean,
                p25: percentile(&values, 25.0),
                median: percentile(&values, 50.0),
                p75: percentile(&values, 75.0),
                p95: percentile(&values, 95.0),
                std: sample_std(&values, mean),
                n_used: values.len(),
            });
        }
    }
    Ok(rows)
}

/// Linear-interpolation percentile of pre-sorted values: the value at
/// fractional position `q/100 * (len-1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&q), "percentile rank out of range");
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// One CSV line per estimator per replication. Failed fits leave the metric
/// fields empty.
pub fn replication_csv(reports: &[ReplicationReport]) -> String {
    let mut out = String::from("rep,estimator,ac,di,converged,seconds\n");
    for report in reports {
        for s in &report.scores {
            let (ac, di) = if s.failure.is_some() {
                (String::new(), String::new())
            } else {
                (s.accuracy.to_string(), s.disparate_impact.to_string())
            };
            out.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                report.rep,
                s.estimator.name(),
                ac,
                di,
                s.converged,
                s.seconds
            ));
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("estimator,metric,mean,p25,median,p75,p95,std\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.estimator.name(),
            row.metric.name(),
            row.mean,
            row.p25,
            row.median,
            row.p75,
            row.p95,
            row.std
        ));
    }
    out
}

/// One Markdown table per metric, estimators as rows.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    for metric in Metric::all() {
        let table: Vec<&SummaryRow> = rows.iter().filter(|r| r.metric == metric).collect();
        if table.is_empty() {
            continue;
        }
        out.push_str(&format!("## {}\n\n", metric.heading()));
        out.push_str("| Estimator | Mean | p25 | Median | p75 | p95 | std |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for row in table {
            out.push_str(&format!(
                "| {} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
                row.estimator.label(),
                row.mean,
                row.p25,
                row.median,
                row.p75,
                row.p95,
                row.std
            ));
        }
        out.push('\n');
    }
    out
}
