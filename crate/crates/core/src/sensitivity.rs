//! Shadow-price recovery: least-squares Lagrange multipliers from the
//! stationarity system of a fitted model, plus the comparison study across
//! sensitive-feature sets.

use nalgebra::{DMatrix, DVector};

use crate::boost::fit_glmm;
use crate::data::{Dataset, FitConfig, ModelParams};
use crate::error::{invalid, numerical, Result};
use crate::fairness::constraint_vector_for;
use crate::logit::link_eval;
use crate::metrics;
use crate::solvers::{fit_fair_lr_with, fit_lr};

/// Multipliers recovered from one stationarity system.
#[derive(Debug, Clone)]
pub struct KktSolution {
    /// One multiplier per sensitive feature, on the covariance scale used by
    /// the fitters (positive when the bound pushes the covariance down).
    pub zetas: Vec<f64>,
    /// Least-squares residual of the stationarity system.
    pub residual_norm: f64,
    /// Norm of the model-gradient side of the system, for judging the
    /// residual's size.
    pub gradient_norm: f64,
    /// Set when the constraint columns are rank deficient and the solve fell
    /// back to the pseudo-inverse.
    pub rank_deficient: bool,
}

fn check_set(ds: &Dataset, sensitive_set: &[Vec<u8>]) -> Result<()> {
    if sensitive_set.is_empty() {
        return Err(invalid("sensitive set is empty"));
    }
    for s in sensitive_set {
        if s.len() != ds.n_rows() {
            return Err(invalid(format!(
                "sensitive feature has {} entries but the dataset has {} rows",
                s.len(),
                ds.n_rows()
            )));
        }
    }
    Ok(())
}

/// Minimum-norm least squares for `columns * x ≈ rhs`, flagging rank loss.
fn least_squares(columns: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, f64, bool)> {
    let k = columns.ncols();
    let svd = nalgebra::SVD::new(columns.clone(), true, true);
    let s_max = svd.singular_values.max();
    let eps = if s_max > 0.0 {
        s_max * columns.nrows().max(k) as f64 * f64::EPSILON
    } else {
        0.0
    };
    let rank = svd.rank(eps);
    let solution = svd
        .solve(rhs, eps)
        .map_err(|msg| numerical(format!("least-squares solve failed: {msg}")))?;
    let residual = (columns * &solution - rhs).norm();
    Ok((solution.column(0).into_owned(), residual, rank < k))
}

/// Recovers the multipliers of a logistic-regression fit from the system
/// `-g + Σ_k ζ_k c_k ≈ 0`, where `g` stacks the intercept and covariate
/// score equations and `c_k = Σ_ℓ (s^k_ℓ - s̄^k) x̃_ℓ`. The reported value is
/// rescaled to the per-row covariance so it matches the quadratic-penalty
/// multiplier `2ρ·max(0, |v| - c)` at a penalized optimum.
pub fn kkt_multipliers_lr(
    ds: &Dataset,
    params: &ModelParams,
    sensitive_set: &[Vec<u8>],
) -> Result<KktSolution> {
    check_set(ds, sensitive_set)?;
    let n_rows = ds.n_rows() as f64;
    let p = ds.n_features();

    let link = link_eval(ds, params);
    let resid = &link.mu - ds.labels_f64();
    let mut g = DVector::zeros(1 + p);
    g[0] = resid.sum();
    g.rows_mut(1, p).copy_from(&ds.features().tr_mul(&resid));

    let mut columns = DMatrix::zeros(1 + p, sensitive_set.len());
    for (k, s) in sensitive_set.iter().enumerate() {
        let ctx = constraint_vector_for(ds, s)?;
        columns.column_mut(k).copy_from(&ctx.a_full.rows(0, 1 + p));
    }

    let (raw, residual_norm, rank_deficient) = least_squares(&columns, &g)?;
    let zetas = raw.iter().map(|z| -n_rows * z).collect();
    Ok(KktSolution {
        zetas,
        residual_norm,
        gradient_norm: g.norm(),
        rank_deficient,
    })
}

/// Recovers the multipliers of a cluster-regularized fit. The system keeps
/// every coordinate: intercept and covariate scores plus one row per stratum
/// intercept (`Σ_j (μ_ij - y_ij) + 2λ b_i`), with constraint columns on the
/// per-row covariance scale `a / N`; the solution is reported as is.
pub fn kkt_multipliers_crlr(
    ds: &Dataset,
    params: &ModelParams,
    lambda: f64,
    sensitive_set: &[Vec<u8>],
) -> Result<KktSolution> {
    check_set(ds, sensitive_set)?;
    let n_rows = ds.n_rows() as f64;

    let g = crate::logit::full_gradient(ds, params, lambda);
    let mut columns = DMatrix::zeros(g.len(), sensitive_set.len());
    for (k, s) in sensitive_set.iter().enumerate() {
        let ctx = constraint_vector_for(ds, s)?;
        columns.column_mut(k).copy_from(&(&ctx.a_full / n_rows));
    }

    let rhs = -&g;
    let (zetas, residual_norm, rank_deficient) = least_squares(&columns, &rhs)?;
    Ok(KktSolution {
        zetas: zetas.iter().copied().collect(),
        residual_norm,
        gradient_norm: g.norm(),
        rank_deficient,
    })
}

/// A named 0/1 attribute, row-aligned with the dataset it will be used on.
#[derive(Debug, Clone)]
pub struct SensitiveFeature {
    pub name: String,
    pub values: Vec<u8>,
}

/// Outcome of constraining one sensitive-feature set.
#[derive(Debug, Clone)]
pub struct ShadowPriceReport {
    pub features: Vec<String>,
    pub zetas: Vec<f64>,
    pub residual_norm: f64,
    pub rank_deficient: bool,
    /// Per feature: disparate-impact gain of the fair fit over the plain
    /// logistic regression, as a percentage of the plain value.
    pub di_improvement_pct: Vec<f64>,
    /// Accuracy lost relative to the plain mixed model, as a percentage.
    pub ac_drop_pct: f64,
    pub fair_accuracy: f64,
}

fn improvement_pct(fair: Result<f64>, plain: Result<f64>) -> f64 {
    match (fair, plain) {
        (Ok(fair), Ok(plain)) => {
            if plain > 0.0 {
                (fair - plain) / plain * 100.0
            } else if fair > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        }
        // A degenerate attribute (single group) has no disparate impact to
        // improve.
        _ => 0.0,
    }
}

/// Fits one fair logistic regression per sensitive-feature set at `c = 0`,
/// recovers the multipliers, and compares: disparate impact against the plain
/// logistic regression, accuracy against the plain mixed model.
pub fn shadow_price_study(
    ds: &Dataset,
    sensitive_sets: &[Vec<SensitiveFeature>],
    config: &FitConfig,
) -> Result<Vec<ShadowPriceReport>> {
    if sensitive_sets.is_empty() {
        return Err(invalid("no sensitive-feature sets given"));
    }

    let lr = fit_lr(ds, config)?;
    let lr_preds = metrics::classify_all(&lr.params, ds, false);
    let glmm = fit_glmm(ds, config)?;
    let glmm_preds = metrics::classify_all(&glmm.0, ds, true);
    let ac_glmm = metrics::accuracy(&metrics::confusion(ds.labels(), &glmm_preds)?)?;

    let fair_config = FitConfig {
        c: 0.0,
        ..config.clone()
    };
    let mut reports = Vec::with_capacity(sensitive_sets.len());
    for set in sensitive_sets {
        if set.is_empty() {
            return Err(invalid("sensitive-feature set is empty"));
        }
        let contexts = set
            .iter()
            .map(|f| constraint_vector_for(ds, &f.values))
            .collect::<Result<Vec<_>>>()?;
        let fair = fit_fair_lr_with(ds, &contexts, &fair_config)?;
        let values: Vec<Vec<u8>> = set.iter().map(|f| f.values.clone()).collect();
        let kkt = kkt_multipliers_lr(ds, &fair.params, &values)?;

        let fair_preds = metrics::classify_all(&fair.params, ds, false);
        let fair_accuracy = metrics::accuracy(&metrics::confusion(ds.labels(), &fair_preds)?)?;
        let di_improvement_pct = set
            .iter()
            .map(|f| {
                improvement_pct(
                    metrics::disparate_impact(&fair_preds, &f.values),
                    metrics::disparate_impact(&lr_preds, &f.values),
                )
            })
            .collect();

        reports.push(ShadowPriceReport {
            features: set.iter().map(|f| f.name.clone()).collect(),
            zetas: kkt.zetas,
            residual_norm: kkt.residual_norm,
            rank_deficient: kkt.rank_deficient,
            di_improvement_pct,
            ac_drop_pct: (ac_glmm - fair_accuracy) / ac_glmm * 100.0,
            fair_accuracy,
        });
    }
    Ok(reports)
}

/// One CSV line per feature within each set.
pub fn sensitivity_csv(reports: &[ShadowPriceReport]) -> String {
    let mut out = String::from("features,feature,zeta,di_improvement_pct,ac_drop_pct\n");
    for report in reports {
        let set_label = report.features.join("+");
        for (k, name) in report.features.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                set_label, name, report.zetas[k], report.di_improvement_pct[k], report.ac_drop_pct
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fairness::constraint_vector;
    use crate::logit::neg_loglik;
    use crate::sim::{generate_population, Scenario, ScenarioSpec};
    use crate::solvers::{fit_fair_crlr, fit_fair_lr};
    use nalgebra::DMatrix;

    fn small_data(seed: u64) -> Dataset {
        let spec = ScenarioSpec {
            n_strata: 3,
            stratum_size: 200,
            seed,
            ..Scenario::UnfairStrata.spec()
        };
        generate_population(&spec).unwrap()
    }

    fn single_round(rho: f64, c: f64) -> FitConfig {
        FitConfig {
            rho,
            c,
            continuation_rounds: 0,
            ..FitConfig::default()
        }
    }

    /// Penalized objective of a fair LR fit, for finite differences in c.
    fn fair_lr_objective(ds: &Dataset, params: &ModelParams, rho: f64, c: f64) -> f64 {
        let v = constraint_vector(ds).covariance_value(&params.delta());
        let excess = (v.abs() - c).max(0.0);
        neg_loglik(ds, params, 0.0) + rho * excess * excess
    }

    #[test]
    fn unconstrained_optimum_has_zero_multipliers() {
        let ds = small_data(4);
        let report = fit_lr(&ds, &FitConfig::default()).unwrap();
        assert!(report.converged);
        let kkt = kkt_multipliers_lr(&ds, &report.params, &[ds.sensitive().to_vec()]).unwrap();
        assert!(kkt.zetas[0].abs() < 1e-3, "zeta {}", kkt.zetas[0]);
        assert!(kkt.residual_norm < 1e-6);
        assert!(!kkt.rank_deficient);
    }

    #[test]
    fn lr_multiplier_matches_the_penalty_identity() {
        let ds = small_data(9);
        let config = single_round(0.8, 0.0);
        let fair = fit_fair_lr(&ds, &config).unwrap();
        assert!(fair.converged);

        let kkt = kkt_multipliers_lr(&ds, &fair.params, &[ds.sensitive().to_vec()]).unwrap();
        let v = constraint_vector(&ds).covariance_value(&fair.params.delta());
        let analytic = 2.0 * config.rho * v;
        assert!(
            (kkt.zetas[0] - analytic).abs() <= 1e-4 * analytic.abs(),
            "zeta {} vs analytic {}",
            kkt.zetas[0],
            analytic
        );
        assert!(kkt.residual_norm / kkt.gradient_norm < 1e-3);
    }

    #[test]
    fn crlr_multiplier_matches_the_identity_and_the_lr_limit() {
        let ds = small_data(12);
        let config = single_round(0.8, 0.0);
        let stiff = FitConfig {
            lambda: 1e8,
            ..config.clone()
        };
        let fair_crlr = fit_fair_crlr(&ds, &stiff).unwrap();
        assert!(fair_crlr.converged);

        let set = [ds.sensitive().to_vec()];
        let kkt = kkt_multipliers_crlr(&ds, &fair_crlr.params, stiff.lambda, &set).unwrap();
        let v = constraint_vector(&ds).covariance_value(&fair_crlr.params.delta());
        let analytic = 2.0 * config.rho * v;
        assert!(
            (kkt.zetas[0] - analytic).abs() <= 1e-4 * analytic.abs(),
            "zeta {} vs analytic {}",
            kkt.zetas[0],
            analytic
        );
        assert!(kkt.residual_norm / kkt.gradient_norm < 1e-3);

        let fair_lr = fit_fair_lr(&ds, &config).unwrap();
        let kkt_lr = kkt_multipliers_lr(&ds, &fair_lr.params, &set).unwrap();
        assert!(
            (kkt.zetas[0] - kkt_lr.zetas[0]).abs() < 1e-3,
            "crlr {} vs lr {}",
            kkt.zetas[0],
            kkt_lr.zetas[0]
        );
    }

    #[test]
    fn finite_difference_slope_recovers_the_multiplier() {
        let ds = small_data(21);
        let h = 1e-3;
        let rho = 2.0;

        let mid = fit_fair_lr(&ds, &single_round(rho, h)).unwrap();
        let kkt = kkt_multipliers_lr(&ds, &mid.params, &[ds.sensitive().to_vec()]).unwrap();

        let lo = fit_fair_lr(&ds, &single_round(rho, 0.0)).unwrap();
        let hi = fit_fair_lr(&ds, &single_round(rho, 2.0 * h)).unwrap();
        let f_lo = fair_lr_objective(&ds, &lo.params, rho, 0.0);
        let f_hi = fair_lr_objective(&ds, &hi.params, rho, 2.0 * h);
        let slope = (f_lo - f_hi) / (2.0 * h);

        assert!(
            (slope - kkt.zetas[0]).abs() <= 0.2 * kkt.zetas[0].abs(),
            "slope {} vs zeta {}",
            slope,
            kkt.zetas[0]
        );
    }

    #[test]
    fn orthogonal_features_decouple() {
        let rows = [
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let features = DMatrix::from_fn(4, 3, |i, j| rows[i][j]);
        let ds = Dataset::new(features, vec![1, 0, 0, 1], vec![1; 4], vec![0; 4]).unwrap();
        let s1 = vec![1u8, 1, 0, 0];
        let s2 = vec![1u8, 0, 1, 0];

        let mut params = ModelParams::zeros(3, 1);
        params.beta0 = 0.3;
        params.beta[0] = 0.1;
        params.beta[1] = -0.2;
        params.beta[2] = 0.4;

        let single1 = kkt_multipliers_lr(&ds, &params, &[s1.clone()]).unwrap();
        let single2 = kkt_multipliers_lr(&ds, &params, &[s2.clone()]).unwrap();
        let both = kkt_multipliers_lr(&ds, &params, &[s1, s2]).unwrap();
        assert!((both.zetas[0] - single1.zetas[0]).abs() < 1e-6);
        assert!((both.zetas[1] - single2.zetas[0]).abs() < 1e-6);
    }

    #[test]
    fn constant_attribute_trips_the_rank_flag() {
        let ds = small_data(2);
        let report = fit_lr(&ds, &FitConfig::default()).unwrap();
        let kkt = kkt_multipliers_lr(&ds, &report.params, &[vec![1u8; ds.n_rows()]]).unwrap();
        assert!(kkt.rank_deficient);
        assert_eq!(kkt.zetas[0], 0.0);
    }

    #[test]
    fn multiplier_recomputation_is_deterministic() {
        let ds = small_data(30);
        let fair = fit_fair_lr(&ds, &single_round(0.8, 0.0)).unwrap();
        let set = [ds.sensitive().to_vec()];
        let a = kkt_multipliers_lr(&ds, &fair.params, &set).unwrap();
        let b = kkt_multipliers_lr(&ds, &fair.params, &set).unwrap();
        assert_eq!(a.zetas[0].to_bits(), b.zetas[0].to_bits());
    }

    #[test]
    fn study_reports_cover_each_set() {
        let spec = ScenarioSpec {
            n_strata: 5,
            stratum_size: 100,
            seed: 17,
            ..Scenario::UnfairStrata.spec()
        };
        let ds = generate_population(&spec).unwrap();
        let s = SensitiveFeature {
            name: "s".to_string(),
            values: ds.sensitive().to_vec(),
        };
        let constant = SensitiveFeature {
            name: "flat".to_string(),
            values: vec![1; ds.n_rows()],
        };
        let reports = shadow_price_study(
            &ds,
            &[vec![s.clone()], vec![constant], vec![s.clone(), s]],
            &FitConfig::default(),
        )
        .unwrap();
        assert_eq!(reports.len(), 3);

        assert_eq!(reports[0].features, vec!["s"]);
        assert!(reports[0].zetas[0] > 0.0, "zeta {}", reports[0].zetas[0]);
        assert!(
            reports[0].di_improvement_pct[0] > 0.0,
            "improvement {}",
            reports[0].di_improvement_pct[0]
        );
        assert!(reports[0].ac_drop_pct.is_finite());

        assert_eq!(reports[1].zetas[0], 0.0);
        assert_eq!(reports[1].di_improvement_pct[0], 0.0);
        assert!(reports[1].rank_deficient);

        // A duplicated feature is collinear with itself.
        assert!(reports[2].rank_deficient);

        let csv = sensitivity_csv(&reports);
        assert!(csv.starts_with("features,feature,zeta,di_improvement_pct,ac_drop_pct\n"));
        assert_eq!(csv.lines().count(), 1 + 1 + 1 + 2);
        assert!(csv.contains("s+s,"));
    }
}
