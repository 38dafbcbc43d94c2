//! Bagged random forest over [`DecisionTree`]s.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{check_training_set, DecisionTree, TreeParams};
use crate::error::ClassifierError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub threshold: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 600,
            max_depth: 40,
            min_samples_leaf: 1,
            max_features: None,
            threshold: 0.5,
        }
    }
}

impl ForestParams {
    pub fn features_per_split(&self, d: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| libm::floor(libm::sqrt(d as f64)) as usize)
            .clamp(1, d.max(1))
    }

    fn tree_params(&self, d: usize) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            max_features: Some(self.features_per_split(d)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
}

/// Generator for tree `i` of a forest seeded with `seed`. Each tree gets its
/// own stream, so trees can be fitted in any order or in parallel.
pub fn tree_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Fits tree `i` of the forest: bootstrap draw of `n` rows with replacement,
/// then CART with feature subsampling.
pub fn fit_forest_tree(
    x: &[Vec<f64>],
    y: &[bool],
    params: &ForestParams,
    seed: u64,
    i: usize,
) -> DecisionTree {
    let mut rng = tree_rng(seed, i);
    let n = x.len();
    let samples: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n as u32)).collect();
    let d = x.first().map_or(0, Vec::len);
    DecisionTree::fit_samples(x, y, samples, &params.tree_params(d), &mut rng)
}

impl RandomForest {
    pub fn validate(x: &[Vec<f64>], y: &[bool], params: &ForestParams) -> Result<(), ClassifierError> {
        if params.n_trees == 0 {
            return Err(ClassifierError::InvalidParameter("n_trees must be positive".into()));
        }
        if !(0.0..=1.0).contains(&params.threshold) {
            return Err(ClassifierError::InvalidParameter("threshold must lie in [0, 1]".into()));
        }
        check_training_set(x, y)
    }

    pub fn fit(
        x: &[Vec<f64>],
        y: &[bool],
        params: &ForestParams,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        Self::fit_with(x, y, params, seed, |n, fit| (0..n).map(fit).collect())
    }

    /// Like [`RandomForest::fit`], with the per-tree loop supplied by the
    /// caller (`map(n, fit_tree_i)` must return trees in index order).
    pub fn fit_with<M>(
        x: &[Vec<f64>],
        y: &[bool],
        params: &ForestParams,
        seed: u64,
        map: M,
    ) -> Result<Self, ClassifierError>
    where
        M: FnOnce(usize, &(dyn Fn(usize) -> DecisionTree + Sync)) -> Vec<DecisionTree>,
    {
        Self::validate(x, y, params)?;
        let fit = |i: usize| fit_forest_tree(x, y, params, seed, i);
        let trees = map(params.n_trees, &fit);
        Ok(RandomForest {
            params: params.clone(),
            seed,
            trees,
        })
    }

    pub fn n_features(&self) -> usize {
        self.trees.first().map_or(0, |t| t.n_features)
    }

    /// Mean of the trees' leaf probabilities.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        if self.trees.is_empty() {
            return Err(ClassifierError::ModelUntrained);
        }
        if x.len() != self.n_features() {
            return Err(ClassifierError::DimensionMismatch {
                expected: self.n_features(),
                found: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    pub fn predict(&self, x: &[f64]) -> Result<(f64, bool), ClassifierError> {
        let p = self.predict_proba(x)?;
        Ok((p, p >= self.params.threshold))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tree::Node;
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let c = if pos { 2.0 } else { -2.0 };
            x.push((0..5).map(|_| c + rng.gen_range(-2.5..2.5)).collect());
            y.push(pos);
        }
        (x, y)
    }

    #[test]
    fn deterministic_per_seed() {
        let (x, y) = blobs(80, 1);
        let p = ForestParams {
            n_trees: 10,
            ..ForestParams::default()
        };
        let a = RandomForest::fit(&x, &y, &p, 7).unwrap();
        let b = RandomForest::fit(&x, &y, &p, 7).unwrap();
        assert_eq!(a, b);
        let c = RandomForest::fit(&x, &y, &p, 8).unwrap();
        assert_ne!(a, c);
        // Out-of-order fitting gives the same trees.
        let d = RandomForest::fit_with(&x, &y, &p, 7, |n, f| {
            let mut v: Vec<(usize, DecisionTree)> = (0..n).rev().map(|i| (i, f(i))).collect();
            v.sort_by_key(|(i, _)| *i);
            v.into_iter().map(|(_, t)| t).collect()
        })
        .unwrap();
        assert_eq!(a, d);
    }

    #[test]
    fn single_tree_forest_is_one_bootstrap_tree() {
        let (x, y) = blobs(40, 2);
        let p = ForestParams {
            n_trees: 1,
            ..ForestParams::default()
        };
        let f = RandomForest::fit(&x, &y, &p, 3).unwrap();
        assert_eq!(f.trees.len(), 1);
        assert_eq!(f.trees[0], fit_forest_tree(&x, &y, &p, 3, 0));
        for r in &x {
            assert_eq!(f.predict_proba(r).unwrap(), f.trees[0].predict_proba(r));
        }
        assert_eq!(ForestParams::default().features_per_split(42), 6);
    }

    #[test]
    fn threshold_is_inclusive() {
        let leaf = |p| DecisionTree {
            n_features: 1,
            nodes: vec![Node::Leaf { p, n: 1 }],
        };
        let f = RandomForest {
            params: ForestParams::default(),
            seed: 0,
            trees: vec![leaf(1.0), leaf(0.0)],
        };
        assert_eq!(f.predict(&[0.0]).unwrap(), (0.5, true));
        let all = RandomForest {
            params: ForestParams::default(),
            seed: 0,
            trees: vec![leaf(1.0); 3],
        };
        assert_eq!(all.predict(&[0.0]).unwrap(), (1.0, true));
        let empty = RandomForest {
            params: ForestParams::default(),
            seed: 0,
            trees: vec![],
        };
        assert_eq!(empty.predict(&[0.0]).unwrap_err(), ClassifierError::ModelUntrained);
    }

    #[test]
    fn unused_feature_does_not_matter() {
        let (mut x, y) = blobs(60, 4);
        // Column 5 is constant, so no split can use it.
        for r in &mut x {
            r.push(1.0);
        }
        let p = ForestParams {
            n_trees: 15,
            ..ForestParams::default()
        };
        let f = RandomForest::fit(&x, &y, &p, 1).unwrap();
        assert!(f.trees.iter().all(|t| t.used_features().all(|u| u != 5)));
        let mut v = x[3].clone();
        let before = f.predict(&v).unwrap();
        v[5] = -1e9;
        assert_eq!(f.predict(&v).unwrap(), before);
    }

    proptest! {
        #[test]
        fn probability_in_unit_interval(seed in any::<u64>(), probe in proptest::collection::vec(-10.0f64..10.0, 5)) {
            let (x, y) = blobs(30, seed);
            let p = ForestParams { n_trees: 5, ..ForestParams::default() };
            let f = RandomForest::fit(&x, &y, &p, seed).unwrap();
            let pr = f.predict_proba(&probe).unwrap();
            prop_assert!((0.0..=1.0).contains(&pr));
        }

        #[test]
        fn adding_positive_leaves_is_monotone(ps in proptest::collection::vec(0.0f64..=1.0, 1..10), k in 1usize..5) {
            let leaf = |p| DecisionTree { n_features: 1, nodes: vec![Node::Leaf { p, n: 1 }] };
            let mut f = RandomForest { params: ForestParams::default(), seed: 0, trees: ps.iter().map(|&p| leaf(p)).collect() };
            let before = f.predict_proba(&[0.0]).unwrap();
            f.trees.extend((0..k).map(|_| leaf(1.0)));
            prop_assert!(f.predict_proba(&[0.0]).unwrap() >= before - 1e-15);
        }
    }
}
