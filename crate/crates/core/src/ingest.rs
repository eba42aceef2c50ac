//! CSV loading, schema-driven encoding into a `Dataset`, quantile-based
//! stratum assignment, and the bank-marketing preparation path.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::sim::subset;

/// What a column contributes to the encoded dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Role {
    Numeric,
    Categorical,
    Label,
    /// 0/1 attribute; `positive` is the level mapped to 1. Also enters the
    /// design as one binary column.
    Sensitive { positive: String },
    /// Numeric column used only to build strata, never as a covariate.
    StratumSource,
    Drop,
}

impl Role {
    fn parse(text: &str) -> Result<Role> {
        if let Some(level) = text.strip_prefix("sensitive=") {
            let level = level.trim();
            if level.is_empty() {
                return Err(invalid("sensitive role needs a level: sensitive=<level>"));
            }
            return Ok(Role::Sensitive {
                positive: level.to_string(),
            });
        }
        match text {
            "numeric" => Ok(Role::Numeric),
            "categorical" => Ok(Role::Categorical),
            "label" => Ok(Role::Label),
            "stratum_source" => Ok(Role::StratumSource),
            "drop" => Ok(Role::Drop),
            "sensitive" => Err(invalid(
                "sensitive role needs its positive level: sensitive=<level>",
            )),
            other => Err(invalid(format!(
                "unknown role {other:?}; expected numeric, categorical, label, \
                 sensitive=<level>, stratum_source, or drop"
            ))),
        }
    }
}

/// Column roles for a CSV file, in declaration order.
#[derive(Debug, Clone)]
pub struct Schema {
    pub columns: Vec<(String, Role)>,
    /// Bins used when a stratum_source column is present.
    pub strata_bins: usize,
}

impl Schema {
    /// Parses the `column: role` text format. Lines starting with `#` and
    /// blank lines are skipped; roles are `numeric`, `categorical`, `label`,
    /// `sensitive=<level>`, `stratum_source`, and `drop`.
    pub fn parse(text: &str) -> Result<Schema> {
        let mut columns = Vec::new();
        let mut seen = HashSet::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, role) = line.split_once(':').ok_or_else(|| {
                invalid(format!(
                    "schema line {}: expected \"column: role\", got {line:?}",
                    line_no + 1
                ))
            })?;
            let name = name.trim().to_string();
            if name.is_empty() {
                return Err(invalid(format!("schema line {}: empty column name", line_no + 1)));
            }
            if !seen.insert(name.clone()) {
                return Err(invalid(format!("schema declares column {name:?} twice")));
            }
            columns.push((name, Role::parse(role.trim())?));
        }
        let schema = Schema {
            columns,
            strata_bins: 10,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(invalid("schema declares no columns"));
        }
        let labels = self.count(|r| matches!(r, Role::Label));
        if labels != 1 {
            return Err(invalid(format!(
                "schema must declare exactly one label column, found {labels}"
            )));
        }
        if self.count(|r| matches!(r, Role::StratumSource)) > 1 {
            return Err(invalid("schema declares more than one stratum_source column"));
        }
        if self.strata_bins < 2 {
            return Err(invalid("strata_bins must be at least 2"));
        }
        Ok(())
    }

    fn count(&self, pred: impl Fn(&Role) -> bool) -> usize {
        self.columns.iter().filter(|(_, r)| pred(r)).count()
    }
}

/// Parsed CSV body, one entry per schema column in schema order.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub names: Vec<String>,
    pub columns: Vec<TableColumn>,
    pub n_rows: usize,
}

#[derive(Debug, Clone)]
pub enum TableColumn {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl RawTable {
    pub fn column(&self, name: &str) -> Option<&TableColumn> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| &self.columns[k])
    }
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains(';') {
        b';'
    } else {
        b','
    }
}

/// Reads a delimited file whose header must carry exactly the schema's
/// columns (any order). Numeric and stratum-source columns are parsed to
/// floats here; everything else stays text.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    schema.validate()?;
    let text = fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(&text))
        .from_reader(text.as_bytes());

    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut position = HashMap::new();
    for (k, header) in headers.iter().enumerate() {
        if position.insert(header.clone(), k).is_some() {
            return Err(invalid(format!("csv header repeats column {header:?}")));
        }
    }
    let declared: HashSet<&str> = schema.columns.iter().map(|(n, _)| n.as_str()).collect();
    for header in &headers {
        if !declared.contains(header.as_str()) {
            return Err(invalid(format!(
                "csv has a column the schema does not declare: {header:?}"
            )));
        }
    }
    for (name, _) in &schema.columns {
        if !position.contains_key(name) {
            return Err(invalid(format!("csv is missing column {name:?}")));
        }
    }

    let mut cells: Vec<Vec<String>> = vec![Vec::new(); schema.columns.len()];
    for record in reader.records() {
        let record = record?;
        for (c, (name, _)) in schema.columns.iter().enumerate() {
            cells[c].push(record.get(position[name]).unwrap_or("").trim().to_string());
        }
    }
    let n_rows = cells.first().map_or(0, Vec::len);

    let mut columns = Vec::with_capacity(schema.columns.len());
    for ((name, role), text_column) in schema.columns.iter().zip(cells) {
        let column = match role {
            Role::Numeric | Role::StratumSource => {
                let mut values = Vec::with_capacity(text_column.len());
                for (k, cell) in text_column.iter().enumerate() {
                    let value: f64 = cell.parse().map_err(|_| {
                        invalid(format!(
                            "column {name:?} row {}: cannot parse {cell:?} as a number",
                            k + 1
                        ))
                    })?;
                    if !value.is_finite() {
                        return Err(invalid(format!(
                            "column {name:?} row {}: value is not finite",
                            k + 1
                        )));
                    }
                    values.push(value);
                }
                TableColumn::Numeric(values)
            }
            _ => TableColumn::Text(text_column),
        };
        columns.push(column);
    }

    Ok(RawTable {
        names: schema.columns.iter().map(|(n, _)| n.clone()).collect(),
        columns,
        n_rows,
    })
}

/// Upper cut points of equal-frequency bins; rows with equal values always
/// share a bin, so duplicate cut points collapse (fewer bins than asked).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBins {
    pub boundaries: Vec<f64>,
}

impl QuantileBins {
    pub fn fit(values: &[f64], n_bins: usize) -> Result<QuantileBins> {
        if n_bins < 2 {
            return Err(invalid("quantile binning needs at least 2 bins"));
        }
        if values.is_empty() {
            return Err(invalid("quantile binning needs at least one value"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut boundaries = Vec::with_capacity(n_bins);
        for k in 1..=n_bins {
            let idx = (k * n).div_ceil(n_bins) - 1;
            let cut = sorted[idx];
            if boundaries.last() != Some(&cut) {
                boundaries.push(cut);
            }
        }
        Ok(QuantileBins { boundaries })
    }

    pub fn n_bins(&self) -> usize {
        self.boundaries.len()
    }

    /// 1-based bin id; values above the top cut (possible on held-out data)
    /// fall into the last bin.
    pub fn assign(&self, value: f64) -> i64 {
        for (k, cut) in self.boundaries.iter().enumerate() {
            if value <= *cut {
                return k as i64 + 1;
            }
        }
        self.boundaries.len() as i64
    }
}

/// Equal-frequency stratum ids for a numeric column of the table.
pub fn assign_strata_by_quantile(
    table: &RawTable,
    source_column: &str,
    n_bins: usize,
) -> Result<Vec<i64>> {
    let column = table
        .column(source_column)
        .ok_or_else(|| invalid(format!("table has no column {source_column:?}")))?;
    let TableColumn::Numeric(values) = column else {
        return Err(invalid(format!(
            "stratum source column {source_column:?} is not numeric"
        )));
    };
    let bins = QuantileBins::fit(values, n_bins)?;
    Ok(values.iter().map(|&v| bins.assign(v)).collect())
}

/// Frozen transform of one column.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoding {
    ZScore { mean: f64, std: f64 },
    /// Constant numeric column; contributes nothing.
    ConstantDropped { value: f64 },
    /// Sorted levels; the first is the reference and gets no column.
    OneHot { levels: Vec<String> },
    Binary { positive: String },
    Quantile(QuantileBins),
    None,
}

#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub encoding: Encoding,
}

/// Everything needed to re-apply an encoding to new rows of the same shape.
#[derive(Debug, Clone)]
pub struct EncodePlan {
    pub columns: Vec<ColumnSpec>,
    pub feature_names: Vec<String>,
    pub warnings: Vec<String>,
}

fn numeric_column<'t>(table: &'t RawTable, name: &str) -> Result<&'t Vec<f64>> {
    match table.column(name) {
        Some(TableColumn::Numeric(values)) => Ok(values),
        _ => Err(invalid(format!("expected numeric column {name:?}"))),
    }
}

fn text_column<'t>(table: &'t RawTable, name: &str) -> Result<&'t Vec<String>> {
    match table.column(name) {
        Some(TableColumn::Text(values)) => Ok(values),
        _ => Err(invalid(format!("expected text column {name:?}"))),
    }
}

fn parse_labels(values: &[String], name: &str) -> Result<Vec<u8>> {
    values
        .iter()
        .enumerate()
        .map(|(k, v)| match v.as_str() {
            "yes" | "1" => Ok(1),
            "no" | "0" => Ok(0),
            other => Err(invalid(format!(
                "label column {name:?} row {}: expected yes/no/1/0, got {other:?}",
                k + 1
            ))),
        })
        .collect()
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Turns a raw table into a dataset. With `prior` the frozen statistics,
/// category levels, and bin cuts are reused instead of recomputed, so a test
/// split is encoded exactly like its training split.
pub fn encode(
    table: &RawTable,
    schema: &Schema,
    prior: Option<&EncodePlan>,
) -> Result<(Dataset, EncodePlan)> {
    schema.validate()?;
    if table.n_rows == 0 {
        return Err(invalid("table has no rows"));
    }
    if let Some(plan) = prior {
        if plan.columns.len() != schema.columns.len()
            || plan
                .columns
                .iter()
                .zip(&schema.columns)
                .any(|(spec, (name, role))| spec.name != *name || spec.role != *role)
        {
            return Err(invalid("encoding plan does not match the schema"));
        }
    }

    let mut warnings = Vec::new();
    let mut specs = Vec::with_capacity(schema.columns.len());
    let mut feature_names = Vec::new();
    let mut feature_columns: Vec<Vec<f64>> = Vec::new();

    let mut labels = None;
    let mut sensitive: Option<Vec<u8>> = None;
    let mut strata: Option<Vec<i64>> = None;

    for (idx, (name, role)) in schema.columns.iter().enumerate() {
        let frozen = prior.map(|plan| &plan.columns[idx].encoding);
        let encoding = match role {
            Role::Numeric => {
                let values = numeric_column(table, name)?;
                let encoding = match frozen {
                    Some(enc) => enc.clone(),
                    None => {
                        let (mean, std) = mean_and_std(values);
                        if std <= 1e-12 * (mean.abs() + 1.0) {
                            warnings.push(format!(
                                "column {name:?} is constant ({mean}); dropped"
                            ));
                            Encoding::ConstantDropped { value: mean }
                        } else {
                            Encoding::ZScore { mean, std }
                        }
                    }
                };
                if let Encoding::ZScore { mean, std } = encoding {
                    feature_names.push(name.clone());
                    feature_columns.push(values.iter().map(|v| (v - mean) / std).collect());
                }
                encoding
            }
            Role::Categorical => {
                let values = text_column(table, name)?;
                let encoding = match frozen {
                    Some(enc) => enc.clone(),
                    None => {
                        let mut levels: Vec<String> = values.iter().cloned().collect::<HashSet<_>>().into_iter().collect();
                        levels.sort();
                        if levels.len() == 1 {
                            warnings.push(format!(
                                "column {name:?} has a single level {:?}; dropped",
                                levels[0]
                            ));
                        }
                        Encoding::OneHot { levels }
                    }
                };
                if let Encoding::OneHot { levels } = &encoding {
                    let mut unseen: HashSet<&str> = HashSet::new();
                    let mut block: Vec<Vec<f64>> =
                        vec![vec![0.0; table.n_rows]; levels.len().saturating_sub(1)];
                    for (row, value) in values.iter().enumerate() {
                        match levels.iter().position(|l| l == value) {
                            Some(0) => {}
                            Some(j) => block[j - 1][row] = 1.0,
                            None => {
                                unseen.insert(value);
                            }
                        }
                    }
                    for level in unseen {
                        warnings.push(format!(
                            "column {name:?}: level {level:?} was not in the encoding plan; \
                             rows encoded as the reference level"
                        ));
                    }
                    for (j, column) in block.into_iter().enumerate() {
                        feature_names.push(format!("{name}={}", levels[j + 1]));
                        feature_columns.push(column);
                    }
                }
                encoding
            }
            Role::Label => {
                let values = text_column(table, name)?;
                labels = Some(parse_labels(values, name)?);
                Encoding::None
            }
            Role::Sensitive { positive } => {
                let values = text_column(table, name)?;
                let bits: Vec<u8> = values.iter().map(|v| u8::from(v == positive)).collect();
                feature_names.push(name.clone());
                feature_columns.push(bits.iter().map(|&b| f64::from(b)).collect());
                if sensitive.is_none() {
                    sensitive = Some(bits);
                }
                Encoding::Binary {
                    positive: positive.clone(),
                }
            }
            Role::StratumSource => {
                let values = numeric_column(table, name)?;
                let bins = match frozen {
                    Some(Encoding::Quantile(bins)) => bins.clone(),
                    Some(_) => return Err(invalid("encoding plan does not match the schema")),
                    None => {
                        let bins = QuantileBins::fit(values, schema.strata_bins)?;
                        if bins.n_bins() < schema.strata_bins {
                            warnings.push(format!(
                                "column {name:?} has too few distinct values for {} bins; \
                                 merged into {}",
                                schema.strata_bins,
                                bins.n_bins()
                            ));
                        }
                        bins
                    }
                };
                strata = Some(values.iter().map(|&v| bins.assign(v)).collect());
                Encoding::Quantile(bins)
            }
            Role::Drop => Encoding::None,
        };
        specs.push(ColumnSpec {
            name: name.clone(),
            role: role.clone(),
            encoding,
        });
    }

    let labels = labels.expect("schema validation guarantees a label column");
    let sensitive = sensitive.unwrap_or_else(|| {
        warnings.push(
            "schema declares no sensitive column; the sensitive attribute is all zeros"
                .to_string(),
        );
        vec![0; table.n_rows]
    });
    let strata = strata.unwrap_or_else(|| vec![1; table.n_rows]);

    if feature_columns.is_empty() {
        return Err(invalid("encoding produced no feature columns"));
    }
    let features = DMatrix::from_fn(table.n_rows, feature_columns.len(), |i, j| {
        feature_columns[j][i]
    });
    let dataset = Dataset::new(features, labels, strata, sensitive)?;
    Ok((
        dataset,
        EncodePlan {
            columns: specs,
            feature_names,
            warnings,
        },
    ))
}

/// Reorders caller-ordered per-row values into the dataset's stored order.
pub fn stored_order<T: Clone>(ds: &Dataset, caller_values: &[T]) -> Result<Vec<T>> {
    if caller_values.len() != ds.n_rows() {
        return Err(invalid(format!(
            "values have {} entries but the dataset has {} rows",
            caller_values.len(),
            ds.n_rows()
        )));
    }
    Ok((0..ds.n_rows())
        .map(|k| caller_values[ds.source_row(k)].clone())
        .collect())
}

/// 0/1 view of a text column: 1 where the cell equals `positive`.
pub fn binarize_column(table: &RawTable, name: &str, positive: &str) -> Result<Vec<u8>> {
    let values = text_column(table, name)?;
    Ok(values.iter().map(|v| u8::from(v == positive)).collect())
}

/// Uniform row split: `fraction` of the rows (rounded) into the first part.
/// Errors if either side loses a stratum, since random-intercept indices must
/// line up across the two parts.
pub fn split_fraction(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(invalid("split fraction must lie strictly between 0 and 1"));
    }
    let n = ds.n_rows();
    let take = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = vec![false; n];
    for k in rand::seq::index::sample(&mut rng, n, take) {
        picked[k] = true;
    }
    let first: Vec<usize> = (0..n).filter(|&k| picked[k]).collect();
    let rest: Vec<usize> = (0..n).filter(|&k| !picked[k]).collect();
    let a = subset(ds, &first)?;
    let b = subset(ds, &rest)?;
    if a.n_strata() != ds.n_strata() || b.n_strata() != ds.n_strata() {
        return Err(invalid(
            "split left a stratum empty on one side; use a larger fraction or fewer strata",
        ));
    }
    Ok((a, b))
}

/// Settings for the bank-marketing preparation.
#[derive(Debug, Clone)]
pub struct BankConfig {
    pub strata_bins: usize,
    pub train_fraction: f64,
}

impl Default for BankConfig {
    fn default() -> BankConfig {
        BankConfig {
            strata_bins: 10,
            train_fraction: 0.035,
        }
    }
}

/// Encoded bank data plus the raw table (kept for sensitivity studies on
/// other columns) and the plan that produced it.
#[derive(Debug, Clone)]
pub struct BankData {
    pub dataset: Dataset,
    pub plan: EncodePlan,
    pub table: RawTable,
    pub config: BankConfig,
}

impl BankData {
    /// Seeded train/test split at the configured fraction.
    pub fn split(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        split_fraction(&self.dataset, self.config.train_fraction, seed)
    }
}

/// Column roles for the bank-marketing file: call duration builds the strata
/// and stays out of the design, the housing loan is the sensitive attribute,
/// and the subscription outcome is the label.
pub fn bank_schema(strata_bins: usize) -> Schema {
    let columns = vec![
        ("age", Role::Numeric),
        ("job", Role::Categorical),
        ("marital", Role::Categorical),
        ("education", Role::Categorical),
        ("default", Role::Categorical),
        (
            "housing",
            Role::Sensitive {
                positive: "yes".to_string(),
            },
        ),
        ("loan", Role::Categorical),
        ("contact", Role::Categorical),
        ("month", Role::Categorical),
        ("day_of_week", Role::Categorical),
        ("duration", Role::StratumSource),
        ("campaign", Role::Numeric),
        ("pdays", Role::Numeric),
        ("previous", Role::Numeric),
        ("poutcome", Role::Categorical),
        ("emp.var.rate", Role::Numeric),
        ("cons.price.idx", Role::Numeric),
        ("cons.conf.idx", Role::Numeric),
        ("euribor3m", Role::Numeric),
        ("nr.employed", Role::Numeric),
        ("y", Role::Label),
    ];
    Schema {
        columns: columns
            .into_iter()
            .map(|(n, r)| (n.to_string(), r))
            .collect(),
        strata_bins,
    }
}

/// Loads and encodes the user-supplied bank-marketing CSV.
pub fn prepare_bank(path: &Path, config: &BankConfig) -> Result<BankData> {
    let schema = bank_schema(config.strata_bins);
    let table = load_csv(path, &schema)?;
    let (dataset, plan) = encode(&table, &schema, None)?;
    Ok(BankData {
        dataset,
        plan,
        table,
        config: config.clone(),
    })
}
