//! Shared fixtures for the benchmarks.

use ctm_core::learner::{calibrate_lambda, precompute, LearnerWork};
use ctm_core::sim::{self, SimStudyConfig};
use ctm_core::{BoostConfig, Dataset, TensorLearner};
use nalgebra::DMatrix;

/// Simulated data and the study learners for `n` observations, `p` noise columns.
pub fn study_problem(n: usize, p: usize) -> (Dataset, Vec<TensorLearner>) {
    let data = sim::simulate_hvc(n, p, 7).expect("simulated data");
    let learners = SimStudyConfig::default().learners(&data, p).expect("learners");
    (data, learners)
}

/// Factorised work object for the first learner plus a gradient lattice.
pub fn ridge_problem(n: usize) -> (LearnerWork, DMatrix<f64>) {
    let (data, learners) = study_problem(n, 0);
    let grid = BoostConfig::default().grid.build(data.response()).expect("grid");
    let mut work = precompute(&learners[0], data.frame(), grid.points(), data.weights()).expect("design");
    let lambda = calibrate_lambda(&work, 4.0).expect("lambda");
    work.set_lambda(lambda).expect("factorisation");
    let u = DMatrix::from_fn(grid.len(), n, |k, i| ((k * 31 + i * 17) % 13) as f64 / 13.0 - 0.5);
    (work, u)
}
