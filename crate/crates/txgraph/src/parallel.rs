//! Multi-threaded drivers for the embarrassingly parallel parts: forest
//! trees, cross-validation folds' trees and error-injection jobs.

use rayon::prelude::*;
use txgraph_core::classifier::{
    cross_validate_with, CvReport, DecisionTree, ExchangeClassifier, ExchangeModel, ForestParams,
};
use txgraph_core::evaluation::{
    epsilon_baseline, run_epsilon_job, summarize_curve, EpsilonJob, EpsilonStudy, StudyInput,
};
use txgraph_core::{ClassifierError, ExploreError};

/// Per-tree loop on the rayon pool; results stay in index order.
pub fn par_trees(n: usize, fit: &(dyn Fn(usize) -> DecisionTree + Sync)) -> Vec<DecisionTree> {
    (0..n).into_par_iter().map(fit).collect()
}

pub fn train_forest(
    rows: &[Vec<f64>],
    labels: &[bool],
    params: &ForestParams,
    seed: u64,
) -> Result<ExchangeModel, ClassifierError> {
    ExchangeModel::train_forest_with(rows, labels, params, seed, par_trees)
}

pub fn cross_validate(
    rows: &[Vec<f64>],
    labels: &[bool],
    k: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<CvReport, ClassifierError> {
    cross_validate_with(rows, labels, k, params, seed, &par_trees)
}

/// Same result as the sequential study, jobs run in parallel.
pub fn epsilon_study<C: ExchangeClassifier + Sync>(
    input: &StudyInput<'_>,
    base: &C,
    jobs: &[EpsilonJob],
) -> Result<EpsilonStudy, ExploreError> {
    let baseline = epsilon_baseline(input, base)?;
    let runs = jobs
        .par_iter()
        .map(|j| run_epsilon_job(input, base, &baseline, j))
        .collect::<Result<Vec<_>, _>>()?;
    let curve = summarize_curve(&runs);
    Ok(EpsilonStudy {
        baseline_relations: baseline.len(),
        runs,
        curve,
    })
}
