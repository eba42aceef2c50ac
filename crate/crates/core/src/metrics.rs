//! Classification scoring: confusion counts, accuracy, and the symmetric
//! disparate-impact ratio.

use nalgebra::DVector;

use crate::data::{Dataset, ModelParams};
use crate::error::{invalid, Result};
use crate::logit::sigmoid;

/// Confusion counts over one scored set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Confusion {
    pub true_pos: usize,
    pub true_neg: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

/// Accuracy and disparate impact of one model on one dataset.
#[derive(Debug, Clone, Copy)]
pub struct MetricPair {
    pub accuracy: f64,
    pub disparate_impact: f64,
}

/// Predicted probability for one row. The stratum intercept enters when the
/// id is known to the model; otherwise the prediction falls back to the
/// population mean level (b = 0).
pub fn predict_prob(params: &ModelParams, features_row: &[f64], stratum: Option<usize>) -> f64 {
    sigmoid(params.eta_row(features_row, stratum))
}

/// Predicted probabilities for a whole dataset. `use_strata` controls whether
/// the stratum intercepts contribute, so pooled models score without them.
pub fn predict_probs(params: &ModelParams, ds: &Dataset, use_strata: bool) -> DVector<f64> {
    let x = ds.features();
    DVector::from_fn(ds.n_rows(), |k, _| {
        let row: Vec<f64> = (0..ds.n_features()).map(|j| x[(k, j)]).collect();
        let stratum = use_strata.then(|| ds.strata()[k]);
        predict_prob(params, &row, stratum)
    })
}

/// Hard label: positive exactly when the probability reaches one half.
pub fn classify(prob: f64) -> u8 {
    u8::from(prob >= 0.5)
}

/// Hard labels for a whole dataset.
pub fn classify_all(params: &ModelParams, ds: &Dataset, use_strata: bool) -> Vec<u8> {
    predict_probs(params, ds, use_strata)
        .iter()
        .map(|&m| classify(m))
        .collect()
}

/// Tallies predictions against labels.
pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<Confusion> {
    if labels.len() != predictions.len() {
        return Err(invalid(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut c = Confusion {
        true_pos: 0,
        true_neg: 0,
        false_pos: 0,
        false_neg: 0,
    };
    for (&y, &p) in labels.iter().zip(predictions) {
        match (y, p) {
            (1, 1) => c.true_pos += 1,
            (0, 0) => c.true_neg += 1,
            (0, 1) => c.false_pos += 1,
            (1, 0) => c.false_neg += 1,
            _ => return Err(invalid("labels and predictions must be 0 or 1")),
        }
    }
    Ok(c)
}

/// Fraction of correct calls.
pub fn accuracy(c: &Confusion) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(invalid("accuracy of an empty confusion is undefined"));
    }
    Ok((c.true_pos + c.true_neg) as f64 / total as f64)
}

/// Symmetric disparate impact: `min(r, 1/r)` for the ratio `r` of
/// positive-prediction rates between the two sensitive groups. Both rates
/// zero counts as parity (1); exactly one rate zero is total disparity (0).
pub fn disparate_impact(predictions: &[u8], sensitive: &[u8]) -> Result<f64> {
    if predictions.len() != sensitive.len() {
        return Err(invalid(format!(
            "{} predictions but {} sensitive values",
            predictions.len(),
            sensitive.len()
        )));
    }
    let mut pos = [0usize; 2];
    let mut count = [0usize; 2];
    for (&p, &s) in predictions.iter().zip(sensitive) {
        if s > 1 || p > 1 {
            return Err(invalid("predictions and sensitive values must be 0 or 1"));
        }
        count[s as usize] += 1;
        pos[s as usize] += p as usize;
    }
    if count[0] == 0 || count[1] == 0 {
        return Err(invalid(
            "disparate impact needs both sensitive groups present",
        ));
    }
    let rate0 = pos[0] as f64 / count[0] as f64;
    let rate1 = pos[1] as f64 / count[1] as f64;
    if rate0 == 0.0 && rate1 == 0.0 {
        return Ok(1.0);
    }
    if rate0 == 0.0 || rate1 == 0.0 {
        return Ok(0.0);
    }
    let r = rate1 / rate0;
    Ok(r.min(1.0 / r))
}

/// Scores a fitted model on a dataset: accuracy plus disparate impact.
pub fn evaluate(params: &ModelParams, ds: &Dataset, use_strata: bool) -> Result<MetricPair> {
    let predictions = classify_all(params, ds, use_strata);
    let c = confusion(ds.labels(), &predictions)?;
    Ok(MetricPair {
        accuracy: accuracy(&c)?,
        disparate_impact: disparate_impact(&predictions, ds.sensitive())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn params_with_b(b: &[f64]) -> ModelParams {
        let mut p = ModelParams::zeros(1, b.len());
        p.b = DVector::from_row_slice(b);
        p
    }

    #[test]
    fn zero_params_predict_one_half() {
        let p = ModelParams::zeros(2, 1);
        assert_eq!(predict_prob(&p, &[3.0, -1.0], Some(1)), 0.5);
    }

    #[test]
    fn stratum_intercept_enters_known_strata_only() {
        let p = params_with_b(&[2.0]);
        let with = predict_prob(&p, &[0.0], Some(1));
        assert!((with - sigmoid(2.0)).abs() < 1e-15);
        assert!((with - 0.8808).abs() < 1e-3);
        assert_eq!(predict_prob(&p, &[0.0], Some(9)), 0.5);
        assert_eq!(predict_prob(&p, &[0.0], None), 0.5);
    }

    #[test]
    fn boundary_goes_positive() {
        assert_eq!(classify(0.5), 1);
        assert_eq!(classify(0.4999), 0);
        assert_eq!(classify(1.0), 1);
        assert_eq!(classify(0.0), 0);
    }

    #[test]
    fn accuracy_hand_value_and_flip_invariance() {
        let c = Confusion {
            true_pos: 3,
            true_neg: 5,
            false_pos: 1,
            false_neg: 1,
        };
        assert_eq!(accuracy(&c).unwrap(), 0.8);
        let flipped = Confusion {
            true_pos: c.true_neg,
            true_neg: c.true_pos,
            false_pos: c.false_neg,
            false_neg: c.false_pos,
        };
        assert_eq!(accuracy(&flipped).unwrap(), 0.8);
        let empty = Confusion {
            true_pos: 0,
            true_neg: 0,
            false_pos: 0,
            false_neg: 0,
        };
        assert!(accuracy(&empty).is_err());
    }

    #[test]
    fn confusion_counts_every_cell() {
        let labels = [1, 1, 0, 0, 1, 0];
        let preds = [1, 0, 0, 1, 1, 0];
        let c = confusion(&labels, &preds).unwrap();
        assert_eq!(c.true_pos, 2);
        assert_eq!(c.false_neg, 1);
        assert_eq!(c.true_neg, 2);
        assert_eq!(c.false_pos, 1);
        assert_eq!(c.total(), labels.len());
        assert!(confusion(&labels, &preds[..5]).is_err());
    }

    #[test]
    fn disparate_impact_hand_values() {
        // Group s=1 rate 0.2 (1 of 5), group s=0 rate 0.4 (2 of 5).
        let preds = [1, 0, 0, 0, 0, 1, 1, 0, 0, 0];
        let sens = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let di = disparate_impact(&preds, &sens).unwrap();
        assert!((di - 0.5).abs() < 1e-15);

        let flipped: Vec<u8> = sens.iter().map(|&s| 1 - s).collect();
        assert_eq!(disparate_impact(&preds, &flipped).unwrap(), di);

        let equal = [1, 0, 1, 0];
        let s = [1, 1, 0, 0];
        assert_eq!(disparate_impact(&equal, &s).unwrap(), 1.0);
    }

    #[test]
    fn disparate_impact_zero_rate_conventions() {
        let s = [1, 1, 0, 0];
        assert_eq!(disparate_impact(&[0, 0, 0, 0], &s).unwrap(), 1.0);
        assert_eq!(disparate_impact(&[1, 0, 0, 0], &s).unwrap(), 0.0);
        assert_eq!(disparate_impact(&[0, 0, 1, 0], &s).unwrap(), 0.0);
        assert!(disparate_impact(&[1, 0, 1, 0], &[1, 1, 1, 1]).is_err());
    }

    #[test]
    fn evaluate_combines_both_measures() {
        let x = DMatrix::from_row_slice(4, 1, &[2.0, 2.0, -2.0, -2.0]);
        let ds = Dataset::new(x, vec![1, 1, 0, 0], vec![1, 1, 2, 2], vec![1, 0, 1, 0]).unwrap();
        let mut params = ModelParams::zeros(1, 2);
        params.beta[0] = 3.0;
        let m = evaluate(&params, &ds, true).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.disparate_impact, 1.0);
    }
}
