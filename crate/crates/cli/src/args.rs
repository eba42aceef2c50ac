//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "fairmix",
    version,
    about = "Fairness-constrained logistic regression and mixed models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run a synthetic scenario study and summarize accuracy and disparate
    /// impact across replications.
    Simulate(SimulateArgs),
    /// Fit one estimator to CSV data and write a model file.
    Fit(FitArgs),
    /// Score a saved model on CSV data.
    Evaluate(EvaluateArgs),
    /// Recover fairness-constraint shadow prices on CSV data.
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario name: unfair-strata, fair-strata, unfair-nostrata, or
    /// fair-nostrata.
    #[arg(long)]
    pub scenario: String,

    /// Number of replications; must be positive.
    #[arg(long)]
    pub reps: usize,

    /// Base seed; replication k draws its population from seed + k.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Directory for replications.csv, summary.csv, and summary.md.
    #[arg(long)]
    pub out: PathBuf,

    /// Override the scenario's number of strata (default 100).
    #[arg(long)]
    pub n_strata: Option<usize>,

    /// Override the scenario's stratum size (default 1000).
    #[arg(long)]
    pub stratum_size: Option<usize>,

    /// Override the random-intercept variance (default 9, standard
    /// deviation 3; only strata scenarios draw intercepts).
    #[arg(long)]
    pub b_variance: Option<f64>,

    /// Override the ridge penalty on stratum intercepts (default 1).
    #[arg(long)]
    pub lambda: Option<f64>,

    /// Override the fairness penalty weight (default 0.8).
    #[arg(long)]
    pub rho: Option<f64>,

    /// Override the covariance bound (default 0.1).
    #[arg(long)]
    pub c: Option<f64>,

    /// Worker threads for replications (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args)]
pub struct FitArgs {
    /// Training CSV (delimiter detected from the header line).
    #[arg(long)]
    pub data: PathBuf,

    /// Schema file mapping column names to roles; see the README for the
    /// grammar.
    #[arg(long, conflicts_with = "bank_preset")]
    pub schema: Option<PathBuf>,

    /// Use the built-in bank-marketing schema instead of a schema file.
    #[arg(long)]
    pub bank_preset: bool,

    /// Quantile bins for the stratum-source column (default 10).
    #[arg(long, default_value_t = 10)]
    pub strata_bins: usize,

    /// Estimator: glmm, fair-glmm, crlr, fair-crlr, lr, or fair-lr.
    #[arg(long)]
    pub estimator: String,

    /// Ridge penalty on stratum intercepts (default 1).
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    /// Fairness penalty weight (default 0.8).
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,

    /// Covariance bound between predictor and sensitive attribute
    /// (default 0.1).
    #[arg(long, default_value_t = 0.1)]
    pub c: f64,

    /// Starting random-intercept variance for boosted fits (default 2).
    #[arg(long, default_value_t = 2.0)]
    pub q0: f64,

    /// Boosting iteration cap (default 200).
    #[arg(long, default_value_t = 200)]
    pub l_max: usize,

    /// Variance-component convergence tolerance (default 1e-4).
    #[arg(long, default_value_t = 1e-4)]
    pub q_tol: f64,

    /// Fit on a random fraction of the rows instead of the whole file.
    #[arg(long)]
    pub train_fraction: Option<f64>,

    /// Seed for the --train-fraction split.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Where to write the model file; boosted fits also write
    /// <out>.trace.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Model file written by `fairmix fit`.
    #[arg(long)]
    pub model: PathBuf,

    /// Evaluation CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Schema file; must declare the columns the model was fitted on.
    #[arg(long, conflicts_with = "bank_preset")]
    pub schema: Option<PathBuf>,

    /// Use the built-in bank-marketing schema.
    #[arg(long)]
    pub bank_preset: bool,

    /// Quantile bins for the stratum-source column (default 10).
    #[arg(long, default_value_t = 10)]
    pub strata_bins: usize,

    /// Write per-row probabilities and predictions to this CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args)]
pub struct SensitivityArgs {
    /// Data CSV.
    #[arg(long)]
    pub data: PathBuf,

    /// Schema file mapping column names to roles.
    #[arg(long, conflicts_with = "bank_preset")]
    pub schema: Option<PathBuf>,

    /// Use the built-in bank-marketing schema.
    #[arg(long)]
    pub bank_preset: bool,

    /// Quantile bins for the stratum-source column (default 10).
    #[arg(long, default_value_t = 10)]
    pub strata_bins: usize,

    /// Sensitive-feature set, repeatable. Each set joins features with '+';
    /// a feature is either the schema's sensitive column name or
    /// COLUMN=LEVEL to binarize a categorical column at one level.
    #[arg(long = "set", required = true)]
    pub sets: Vec<String>,

    /// Ridge penalty on stratum intercepts (default 1).
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    /// Fairness penalty weight (default 0.8).
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,

    /// Where to write the shadow-price CSV.
    #[arg(long)]
    pub out: PathBuf,
}
