//! The four subcommands behind `fairmix`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use fairmix_core::ingest::{self, EncodePlan, RawTable, Role, Schema};
use fairmix_core::sensitivity::{self, SensitiveFeature};
use fairmix_core::{metrics, sim};
use fairmix_core::{Dataset, Estimator, FitConfig, Scenario};

use crate::args::{EvaluateArgs, FitArgs, SensitivityArgs, SimulateArgs};
use crate::model_file::{self, ModelFile};
use crate::Failure;

fn usage(message: impl Into<String>) -> Failure {
    Failure::Usage(message.into())
}

fn load_schema(
    schema: &Option<PathBuf>,
    bank_preset: bool,
    strata_bins: usize,
) -> Result<Schema, Failure> {
    if strata_bins < 2 {
        return Err(usage("--strata-bins must be at least 2"));
    }
    if bank_preset {
        return Ok(ingest::bank_schema(strata_bins));
    }
    let path = schema
        .as_ref()
        .ok_or_else(|| usage("pass --schema <file> or --bank-preset"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("cannot read schema {}: {e}", path.display())))?;
    let mut schema = Schema::parse(&text)?;
    schema.strata_bins = strata_bins;
    Ok(schema)
}

fn load_encoded(data: &Path, schema: &Schema) -> Result<(Dataset, EncodePlan, RawTable), Failure> {
    let table = ingest::load_csv(data, schema)
        .map_err(|e| Failure::Data(format!("{}: {e}", data.display())))?;
    let (ds, plan) = ingest::encode(&table, schema, None)?;
    for warning in &plan.warnings {
        eprintln!("warning: {warning}");
    }
    Ok((ds, plan, table))
}

pub fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let scenario = Scenario::parse(&args.scenario).map_err(|e| usage(e.to_string()))?;
    if args.reps == 0 {
        return Err(usage("--reps must be at least 1"));
    }

    let mut spec = scenario.spec();
    spec.seed = args.seed;
    if let Some(v) = args.n_strata {
        spec.n_strata = v;
    }
    if let Some(v) = args.stratum_size {
        spec.stratum_size = v;
    }
    if let Some(v) = args.b_variance {
        spec.b_variance = v;
    }
    if let Some(v) = args.lambda {
        spec.lambda = v;
    }
    if let Some(v) = args.rho {
        spec.rho = v;
    }
    if let Some(v) = args.c {
        spec.c = v;
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;

    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| usage(format!("cannot configure {threads} worker threads: {e}")))?;
    }

    let reports = sim::run_replications(&spec, args.reps)?;
    let summary = sim::summarize(&reports)?;

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("replications.csv"), sim::replication_csv(&reports))?;
    fs::write(args.out.join("summary.csv"), sim::summary_csv(&summary))?;
    let markdown = sim::summary_markdown(&summary);
    fs::write(args.out.join("summary.md"), &markdown)?;

    let failures: usize = reports
        .iter()
        .flat_map(|r| &r.scores)
        .filter(|s| s.failure.is_some())
        .count();
    println!(
        "{}: {} replications, seed {}, results in {}",
        scenario.name(),
        args.reps,
        args.seed,
        args.out.display()
    );
    if failures > 0 {
        eprintln!("warning: {failures} estimator fits failed; see replications.csv");
    }
    println!();
    print!("{markdown}");
    Ok(())
}

fn fit_settings(args: &FitArgs) -> Result<FitConfig, Failure> {
    let config = FitConfig {
        lambda: args.lambda,
        rho: args.rho,
        c: args.c,
        q0: args.q0,
        l_max: args.l_max,
        q_tol: args.q_tol,
        ..FitConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

pub fn fit(args: FitArgs) -> Result<(), Failure> {
    let estimator = Estimator::parse(&args.estimator).map_err(|e| usage(e.to_string()))?;
    let config = fit_settings(&args)?;
    let schema = load_schema(&args.schema, args.bank_preset, args.strata_bins)?;
    let (full, plan, _) = load_encoded(&args.data, &schema)?;

    let ds = match args.train_fraction {
        Some(fraction) => ingest::split_fraction(&full, fraction, args.seed)?.0,
        None => full,
    };

    let outcome = estimator.fit(&ds, &config)?;

    let stratum_labels: Vec<i64> = (1..=ds.n_strata()).map(|id| ds.stratum_label(id)).collect();
    let model = ModelFile {
        estimator,
        params: outcome.params,
        feature_names: plan.feature_names,
        stratum_labels,
        lambda: args.lambda,
        rho: args.rho,
        c: args.c,
        converged: outcome.converged,
        constraint_value: outcome.constraint_value,
    };
    model_file::write(&args.out, &model)?;

    println!("estimator: {}", estimator.name());
    println!(
        "rows: {}  features: {}  strata: {}",
        ds.n_rows(),
        ds.n_features(),
        ds.n_strata()
    );
    println!("converged: {}", outcome.converged);
    println!("constraint value: {}", outcome.constraint_value);
    if let Some(trace) = &outcome.trace {
        println!(
            "boosting iterations: {} (variance {})",
            trace.iterations, model.params.q
        );
        let path = trace_path(&args.out);
        fs::write(&path, trace_csv(trace))?;
        println!("trace: {}", path.display());
    }
    println!("model: {}", args.out.display());
    Ok(())
}

fn trace_path(model_path: &Path) -> PathBuf {
    let mut name = model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".to_string());
    name.push_str(".trace.csv");
    model_path.with_file_name(name)
}

fn trace_csv(trace: &fairmix_core::boost::FitTrace) -> String {
    let mut out = String::from("iteration,selected,q,hat_trace\n");
    for k in 0..trace.selected.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            k + 1,
            trace.selected[k],
            trace.q_history[k + 1],
            trace.hat_trace[k]
        ));
    }
    out
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let model = model_file::read(&args.model)?;
    let schema = load_schema(&args.schema, args.bank_preset, args.strata_bins)?;
    let (ds, plan, _) = load_encoded(&args.data, &schema)?;

    if plan.feature_names != model.feature_names {
        return Err(Failure::Data(format!(
            "schema mismatch: the model was fitted on features [{}] but this data encodes to [{}]",
            model.feature_names.join(", "),
            plan.feature_names.join(", ")
        )));
    }

    let mut params = model.params.clone();
    params.b = DVector::from_fn(ds.n_strata(), |id, _| {
        let label = ds.stratum_label(id + 1);
        model
            .stratum_labels
            .iter()
            .position(|&l| l == label)
            .map_or(0.0, |k| model.params.b[k])
    });

    let use_strata = model.estimator.uses_strata();
    let probabilities = metrics::predict_probs(&params, &ds, use_strata);
    let predictions: Vec<u8> = probabilities.iter().map(|&m| metrics::classify(m)).collect();
    let confusion = metrics::confusion(ds.labels(), &predictions)?;

    println!("model: {} ({})", args.model.display(), model.estimator.name());
    println!("rows: {}", ds.n_rows());
    println!("accuracy: {:.4}", metrics::accuracy(&confusion)?);
    match metrics::disparate_impact(&predictions, ds.sensitive()) {
        Ok(di) => println!("disparate impact: {di:.4}"),
        Err(e) => println!("disparate impact: unavailable ({e})"),
    }
    println!(
        "confusion: tp {}  fp {}  fn {}  tn {}",
        confusion.true_pos, confusion.false_pos, confusion.false_neg, confusion.true_neg
    );

    if let Some(path) = &args.predictions {
        let probabilities = ds.restore_order(probabilities.as_slice());
        let predictions = ds.restore_order(&predictions);
        let labels = ds.restore_order(ds.labels());
        let mut csv = String::from("row,probability,prediction,label\n");
        for k in 0..ds.n_rows() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                k + 1,
                probabilities[k],
                predictions[k],
                labels[k]
            ));
        }
        fs::write(path, csv)?;
        println!("predictions: {}", path.display());
    }
    Ok(())
}

fn parse_feature(
    item: &str,
    table: &RawTable,
    ds: &Dataset,
    sensitive_name: Option<&str>,
) -> Result<SensitiveFeature, Failure> {
    if let Some((column, level)) = item.split_once('=') {
        let column = column.trim();
        let level = level.trim();
        if column.is_empty() || level.is_empty() {
            return Err(usage(format!(
                "malformed feature {item:?}; expected NAME or COLUMN=LEVEL"
            )));
        }
        let raw = ingest::binarize_column(table, column, level)?;
        return Ok(SensitiveFeature {
            name: format!("{column}={level}"),
            values: ingest::stored_order(ds, &raw)?,
        });
    }
    if Some(item) == sensitive_name {
        return Ok(SensitiveFeature {
            name: item.to_string(),
            values: ds.sensitive().to_vec(),
        });
    }
    let hint = sensitive_name
        .map(|n| format!(" ({n})"))
        .unwrap_or_default();
    Err(usage(format!(
        "unknown feature {item:?}; expected the schema's sensitive column{hint} or COLUMN=LEVEL"
    )))
}

pub fn sensitivity(args: SensitivityArgs) -> Result<(), Failure> {
    let schema = load_schema(&args.schema, args.bank_preset, args.strata_bins)?;
    let (ds, _, table) = load_encoded(&args.data, &schema)?;

    let sensitive_name = schema
        .columns
        .iter()
        .find_map(|(name, role)| matches!(role, Role::Sensitive { .. }).then_some(name.as_str()));

    let mut sets = Vec::with_capacity(args.sets.len());
    for expr in &args.sets {
        let mut features = Vec::new();
        for item in expr.split('+') {
            let item = item.trim();
            if item.is_empty() {
                return Err(usage(format!("empty feature in --set {expr:?}")));
            }
            features.push(parse_feature(item, &table, &ds, sensitive_name)?);
        }
        sets.push(features);
    }

    let config = FitConfig {
        lambda: args.lambda,
        rho: args.rho,
        ..FitConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let reports = sensitivity::shadow_price_study(&ds, &sets, &config)?;
    for report in &reports {
        if report.rank_deficient {
            eprintln!(
                "warning: set [{}] has rank-deficient constraint columns; \
                 multipliers come from the pseudo-inverse",
                report.features.join("+")
            );
        }
    }

    let csv = sensitivity::sensitivity_csv(&reports);
    fs::write(&args.out, &csv)?;
    print!("{csv}");
    println!("written: {}", args.out.display());
    Ok(())
}
