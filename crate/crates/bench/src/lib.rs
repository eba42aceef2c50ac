//! Shared fixtures for the criterion benchmarks.

use fairmix_core::sim::{generate_population, split_train_test};
use fairmix_core::{Dataset, Scenario, ScenarioSpec};

/// Study-shaped scenario scaled down to `n_strata` strata of 30 rows.
pub fn bench_spec(n_strata: usize, seed: u64) -> ScenarioSpec {
    let mut spec = Scenario::UnfairStrata.spec();
    spec.n_strata = n_strata;
    spec.stratum_size = 30;
    spec.seed = seed;
    spec
}

/// Training split of a bench population: 3 to 5 rows per stratum, the shape
/// every estimator sees in the scenario study.
pub fn train_set(n_strata: usize, seed: u64) -> Dataset {
    let population = generate_population(&bench_spec(n_strata, seed)).expect("population");
    split_train_test(&population, seed).expect("split").0
}
