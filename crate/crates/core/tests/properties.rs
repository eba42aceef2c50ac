//! Randomized properties of the metric and fairness primitives.

use fairmix_core::fairness::constraint_vector_for;
use fairmix_core::metrics::{accuracy, confusion, disparate_impact};
use fairmix_core::Dataset;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn bits(n: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, n)
}

/// Feature matrix, labels, strata, and sensitive bits for a small dataset.
fn dataset_parts() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<u8>, Vec<u8>)> {
    (6usize..24, 1usize..4).prop_flat_map(|(n, p)| {
        (
            Just(n),
            Just(p),
            prop::collection::vec(-2.0f64..2.0, n * p),
            bits(n),
            bits(n),
        )
    })
}

fn build(n: usize, p: usize, x: &[f64], labels: &[u8], sensitive: &[u8]) -> Dataset {
    let features = DMatrix::from_fn(n, p, |i, j| x[i * p + j]);
    let strata: Vec<i64> = (0..n).map(|k| (k % 3) as i64 + 1).collect();
    Dataset::new(features, labels.to_vec(), strata, sensitive.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn disparate_impact_is_symmetric_in_the_group_labels(
        (preds, sens) in (4usize..32).prop_flat_map(|n| (bits(n), bits(n)))
    ) {
        let flipped: Vec<u8> = sens.iter().map(|s| 1 - s).collect();
        match (disparate_impact(&preds, &sens), disparate_impact(&preds, &flipped)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((0.0..=1.0).contains(&a), "di {a} outside [0,1]");
                prop_assert!((a - b).abs() <= 1e-12, "swap changed di: {a} vs {b}");
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(
                false,
                "only one side errored: {:?} vs {:?}",
                a.is_ok(),
                b.is_ok()
            ),
        }
    }

    #[test]
    fn accuracy_survives_flipping_labels_and_predictions(
        (preds, labels) in (4usize..32).prop_flat_map(|n| (bits(n), bits(n)))
    ) {
        let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<u8>>();
        let plain = accuracy(&confusion(&labels, &preds).unwrap()).unwrap();
        let flipped = accuracy(&confusion(&flip(&labels), &flip(&preds)).unwrap()).unwrap();
        prop_assert_eq!(plain.to_bits(), flipped.to_bits());
    }

    #[test]
    fn covariance_is_linear_in_the_parameters(
        (n, p, x, labels, sensitive) in dataset_parts(),
        raw1 in prop::collection::vec(-3.0f64..3.0, 28),
        raw2 in prop::collection::vec(-3.0f64..3.0, 28),
        alpha in -4.0f64..4.0,
    ) {
        let ds = build(n, p, &x, &labels, &sensitive);
        let ctx = constraint_vector_for(&ds, ds.sensitive()).unwrap();
        let m = 1 + ds.n_features() + ds.n_strata();
        let d1 = DVector::from_fn(m, |i, _| raw1[i]);
        let d2 = DVector::from_fn(m, |i, _| raw2[i]);
        let combined = ctx.covariance_value(&(&d1 * alpha + &d2));
        let separate = alpha * ctx.covariance_value(&d1) + ctx.covariance_value(&d2);
        let scale = 1.0 + combined.abs().max(separate.abs());
        prop_assert!(
            (combined - separate).abs() <= 1e-10 * scale,
            "combined {combined} vs separate {separate}"
        );
    }

    #[test]
    fn penalty_is_invariant_under_flipping_the_sensitive_attribute(
        (n, p, x, labels, sensitive) in dataset_parts(),
        raw in prop::collection::vec(-3.0f64..3.0, 28),
        rho in 0.0f64..4.0,
    ) {
        let ds = build(n, p, &x, &labels, &sensitive);
        let flipped: Vec<u8> = ds.sensitive().iter().map(|s| 1 - s).collect();
        let ctx = constraint_vector_for(&ds, ds.sensitive()).unwrap();
        let ctx_flip = constraint_vector_for(&ds, &flipped).unwrap();

        let m = 1 + ds.n_features() + ds.n_strata();
        let delta = DVector::from_fn(m, |i, _| raw[i]);
        let v = ctx.covariance_value(&delta);
        let v_flip = ctx_flip.covariance_value(&delta);
        let pen = ctx.penalty_terms(&delta, rho);
        let pen_flip = ctx_flip.penalty_terms(&delta, rho);

        let vscale = 1.0 + v.abs();
        prop_assert!((v + v_flip).abs() <= 1e-10 * vscale, "covariance {v} vs {v_flip}");
        let pscale = 1.0 + pen.value.abs();
        prop_assert!(
            (pen.value - pen_flip.value).abs() <= 1e-9 * pscale,
            "penalty {} vs {}",
            pen.value,
            pen_flip.value
        );
        // The gradient carries two sign flips, so it is unchanged.
        let gscale = 1.0 + pen.grad.amax();
        prop_assert!(
            (&pen.grad - &pen_flip.grad).amax() <= 1e-9 * gscale,
            "gradients differ by {}",
            (&pen.grad - &pen_flip.grad).amax()
        );
    }
}
