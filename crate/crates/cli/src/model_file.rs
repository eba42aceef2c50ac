//! Plain-text model files: one `key value` pair per line, with `feature`
//! and `stratum` lines carrying the value before the name so names may
//! contain spaces. Floats are written in shortest round-trip form.

use std::path::Path;

use fairmix_core::{Estimator, ModelParams};
use nalgebra::DVector;

use crate::Failure;

pub const FORMAT_LINE: &str = "fairmix model 1";

pub struct ModelFile {
    pub estimator: Estimator,
    pub params: ModelParams,
    pub feature_names: Vec<String>,
    pub stratum_labels: Vec<i64>,
    pub lambda: f64,
    pub rho: f64,
    pub c: f64,
    pub converged: bool,
    pub constraint_value: f64,
}

pub fn render(model: &ModelFile) -> String {
    let mut out = String::new();
    out.push_str(FORMAT_LINE);
    out.push('\n');
    out.push_str(&format!("estimator {}\n", model.estimator.name()));
    out.push_str(&format!("lambda {}\n", model.lambda));
    out.push_str(&format!("rho {}\n", model.rho));
    out.push_str(&format!("c {}\n", model.c));
    out.push_str(&format!("converged {}\n", model.converged));
    out.push_str(&format!("constraint {}\n", model.constraint_value));
    out.push_str(&format!("q {}\n", model.params.q));
    out.push_str(&format!("intercept {}\n", model.params.beta0));
    for (name, value) in model.feature_names.iter().zip(model.params.beta.iter()) {
        out.push_str(&format!("feature {value} {name}\n"));
    }
    for (label, value) in model.stratum_labels.iter().zip(model.params.b.iter()) {
        out.push_str(&format!("stratum {value} {label}\n"));
    }
    out
}

pub fn write(path: &Path, model: &ModelFile) -> Result<(), Failure> {
    std::fs::write(path, render(model))
        .map_err(|e| Failure::Data(format!("cannot write model file {}: {e}", path.display())))
}

fn bad(line_no: usize, message: &str) -> Failure {
    Failure::Data(format!("model file line {line_no}: {message}"))
}

fn parse_float(line_no: usize, field: &str, raw: &str) -> Result<f64, Failure> {
    raw.parse::<f64>()
        .map_err(|_| bad(line_no, &format!("cannot parse {field} value {raw:?}")))
}

pub fn parse(text: &str) -> Result<ModelFile, Failure> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == FORMAT_LINE => {}
        Some((_, first)) => {
            return Err(Failure::Data(format!(
                "unsupported model format {first:?}; expected {FORMAT_LINE:?}"
            )))
        }
        None => return Err(Failure::Data("model file is empty".into())),
    }

    let mut estimator = None;
    let mut lambda = None;
    let mut rho = None;
    let mut c = None;
    let mut converged = None;
    let mut constraint = None;
    let mut q = None;
    let mut intercept = None;
    let mut features: Vec<(String, f64)> = Vec::new();
    let mut strata: Vec<(i64, f64)> = Vec::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (key, rest) = line
            .split_once(' ')
            .ok_or_else(|| bad(line_no, "expected 'key value'"))?;
        match key {
            "estimator" => {
                estimator = Some(
                    Estimator::parse(rest)
                        .map_err(|e| bad(line_no, &e.to_string()))?,
                );
            }
            "lambda" => lambda = Some(parse_float(line_no, key, rest)?),
            "rho" => rho = Some(parse_float(line_no, key, rest)?),
            "c" => c = Some(parse_float(line_no, key, rest)?),
            "converged" => {
                converged = Some(rest.parse::<bool>().map_err(|_| {
                    bad(line_no, &format!("cannot parse converged value {rest:?}"))
                })?);
            }
            "constraint" => constraint = Some(parse_float(line_no, key, rest)?),
            "q" => q = Some(parse_float(line_no, key, rest)?),
            "intercept" => intercept = Some(parse_float(line_no, key, rest)?),
            "feature" => {
                let (raw, name) = rest
                    .split_once(' ')
                    .ok_or_else(|| bad(line_no, "expected 'feature value name'"))?;
                features.push((name.to_string(), parse_float(line_no, key, raw)?));
            }
            "stratum" => {
                let (raw, label) = rest
                    .split_once(' ')
                    .ok_or_else(|| bad(line_no, "expected 'stratum value label'"))?;
                let label = label
                    .parse::<i64>()
                    .map_err(|_| bad(line_no, &format!("cannot parse stratum label {label:?}")))?;
                strata.push((label, parse_float(line_no, key, raw)?));
            }
            other => return Err(bad(line_no, &format!("unknown key {other:?}"))),
        }
    }

    let require = |field: &str, present: bool| {
        if present {
            Ok(())
        } else {
            Err(Failure::Data(format!("model file is missing {field}")))
        }
    };
    require("estimator", estimator.is_some())?;
    require("lambda", lambda.is_some())?;
    require("rho", rho.is_some())?;
    require("c", c.is_some())?;
    require("converged", converged.is_some())?;
    require("constraint", constraint.is_some())?;
    require("q", q.is_some())?;
    require("intercept", intercept.is_some())?;

    let (feature_names, beta): (Vec<String>, Vec<f64>) = features.into_iter().unzip();
    let (stratum_labels, b): (Vec<i64>, Vec<f64>) = strata.into_iter().unzip();
    Ok(ModelFile {
        estimator: estimator.unwrap(),
        params: ModelParams {
            beta0: intercept.unwrap(),
            beta: DVector::from_vec(beta),
            b: DVector::from_vec(b),
            q: q.unwrap(),
        },
        feature_names,
        stratum_labels,
        lambda: lambda.unwrap(),
        rho: rho.unwrap(),
        c: c.unwrap(),
        converged: converged.unwrap(),
        constraint_value: constraint.unwrap(),
    })
}

pub fn read(path: &Path) -> Result<ModelFile, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("cannot read model file {}: {e}", path.display())))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelFile {
        ModelFile {
            estimator: Estimator::FairGlmm,
            params: ModelParams {
                beta0: -1.2345678901234567,
                beta: DVector::from_vec(vec![0.1, -2.0 / 3.0, 1e-17]),
                b: DVector::from_vec(vec![0.25, -0.125]),
                q: 2.718281828459045,
            },
            feature_names: vec!["age".into(), "job=blue collar".into(), "x3".into()],
            stratum_labels: vec![4, 9],
            lambda: 1.0,
            rho: 0.8,
            c: 0.1,
            converged: true,
            constraint_value: -0.04321,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let model = sample();
        let parsed = parse(&render(&model)).unwrap();
        assert_eq!(parsed.estimator, model.estimator);
        assert_eq!(parsed.params.beta0.to_bits(), model.params.beta0.to_bits());
        for (a, b) in parsed.params.beta.iter().zip(model.params.beta.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in parsed.params.b.iter().zip(model.params.b.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(parsed.params.q.to_bits(), model.params.q.to_bits());
        assert_eq!(parsed.feature_names, model.feature_names);
        assert_eq!(parsed.stratum_labels, model.stratum_labels);
        assert_eq!(parsed.converged, model.converged);
        assert_eq!(
            parsed.constraint_value.to_bits(),
            model.constraint_value.to_bits()
        );
    }

    #[test]
    fn feature_names_keep_their_spaces() {
        let parsed = parse(&render(&sample())).unwrap();
        assert_eq!(parsed.feature_names[1], "job=blue collar");
    }

    #[test]
    fn version_and_key_errors_are_reported() {
        assert!(parse("something else\n").is_err());
        let mut text = String::from(FORMAT_LINE);
        text.push_str("\nnonsense 1\n");
        assert!(parse(&text).is_err());
        let missing = format!("{FORMAT_LINE}\nestimator lr\n");
        assert!(parse(&missing).is_err());
    }
}
