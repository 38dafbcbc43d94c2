//! Exchange-address classifier: CART trees, random forests, the persisted
//! model and the classifier interface the explorer consumes.

pub mod dataset;
pub mod forest;
pub mod metrics;
pub mod tree;

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::chain::ChainStore;
use crate::error::ClassifierError;
use crate::features::{extract_features, Normalizer, FEATURE_NAMES};

pub use dataset::{assemble_dataset, cross_validate, cross_validate_with, CvReport, LabeledDataset, Split};
pub use forest::{ForestParams, RandomForest};
pub use metrics::{roc_curve, Confusion, RocPoint, Scores};
pub use tree::{DecisionTree, TreeParams};

/// Version written into model files.
pub const MODEL_VERSION: u32 = 1;

/// Anything that decides whether an address belongs to an exchange.
pub trait ExchangeClassifier {
    fn is_exchange(&self, store: &ChainStore, address: &str) -> bool;
}

impl<T: ExchangeClassifier + ?Sized> ExchangeClassifier for &T {
    fn is_exchange(&self, store: &ChainStore, address: &str) -> bool {
        (**self).is_exchange(store, address)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimator {
    DecisionTree { tree: DecisionTree, threshold: f64 },
    RandomForest(RandomForest),
}

impl Estimator {
    pub fn predict(&self, x: &[f64]) -> Result<(f64, bool), ClassifierError> {
        match self {
            Estimator::DecisionTree { tree, threshold } => {
                if tree.nodes.is_empty() {
                    return Err(ClassifierError::ModelUntrained);
                }
                if x.len() != tree.n_features {
                    return Err(ClassifierError::DimensionMismatch {
                        expected: tree.n_features,
                        found: x.len(),
                    });
                }
                let p = tree.predict_proba(x);
                Ok((p, p >= *threshold))
            }
            Estimator::RandomForest(f) => f.predict(x),
        }
    }
}

/// Self-contained model file contents: feature order, normalization and the
/// fitted estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeModel {
    pub version: u32,
    pub features: Vec<String>,
    pub normalizer: Normalizer,
    pub estimator: Estimator,
}

impl ExchangeModel {
    /// Fits the normalizer and a forest on raw feature rows.
    pub fn train_forest(
        rows: &[Vec<f64>],
        labels: &[bool],
        params: &ForestParams,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        let normalizer = Normalizer::fit(rows)?;
        let z = normalizer.transform_all(rows)?;
        let forest = RandomForest::fit(&z, labels, params, seed)?;
        Ok(Self::from_parts(normalizer, Estimator::RandomForest(forest)))
    }

    /// [`ExchangeModel::train_forest`] with a caller-supplied per-tree loop.
    pub fn train_forest_with<M>(
        rows: &[Vec<f64>],
        labels: &[bool],
        params: &ForestParams,
        seed: u64,
        map: M,
    ) -> Result<Self, ClassifierError>
    where
        M: FnOnce(usize, &(dyn Fn(usize) -> DecisionTree + Sync)) -> Vec<DecisionTree>,
    {
        let normalizer = Normalizer::fit(rows)?;
        let z = normalizer.transform_all(rows)?;
        let forest = RandomForest::fit_with(&z, labels, params, seed, map)?;
        Ok(Self::from_parts(normalizer, Estimator::RandomForest(forest)))
    }

    pub fn train_tree(
        rows: &[Vec<f64>],
        labels: &[bool],
        params: &TreeParams,
        threshold: f64,
        seed: u64,
    ) -> Result<Self, ClassifierError> {
        use rand::SeedableRng;
        let normalizer = Normalizer::fit(rows)?;
        let z = normalizer.transform_all(rows)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tree = DecisionTree::fit(&z, labels, params, &mut rng)?;
        Ok(Self::from_parts(normalizer, Estimator::DecisionTree { tree, threshold }))
    }

    pub fn from_parts(normalizer: Normalizer, estimator: Estimator) -> Self {
        ExchangeModel {
            version: MODEL_VERSION,
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            normalizer,
            estimator,
        }
    }

    /// Probability and verdict for a raw (unnormalized) feature vector.
    pub fn predict(&self, raw: &[f64]) -> Result<(f64, bool), ClassifierError> {
        let z = self.normalizer.transform(raw)?;
        self.estimator.predict(&z)
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Result<Vec<(f64, bool)>, ClassifierError> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn evaluate(&self, rows: &[Vec<f64>], labels: &[bool]) -> Result<Confusion, ClassifierError> {
        let pred: Vec<bool> = self.predict_all(rows)?.into_iter().map(|p| p.1).collect();
        Ok(Confusion::from_predictions(labels, &pred))
    }
}

impl ExchangeClassifier for ExchangeModel {
    fn is_exchange(&self, store: &ChainStore, address: &str) -> bool {
        let f = extract_features(store, address);
        self.predict(&f.0).map(|p| p.1).unwrap_or(false)
    }
}

/// Ground-truth classifier over a fixed address set.
#[derive(Debug, Clone, Default)]
pub struct SetClassifier {
    pub exchanges: BTreeSet<String>,
}

impl SetClassifier {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(addresses: I) -> Self {
        SetClassifier {
            exchanges: addresses.into_iter().map(Into::into).collect(),
        }
    }
}

impl ExchangeClassifier for SetClassifier {
    fn is_exchange(&self, _store: &ChainStore, address: &str) -> bool {
        self.exchanges.contains(address)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectMode {
    /// Turn negatives into (false) positives.
    InjectCfp,
    /// Turn positives into (false) negatives.
    InjectCfn,
}

impl InjectMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InjectMode::InjectCfp => "inject_cfp",
            InjectMode::InjectCfn => "inject_cfn",
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) fixed by `(seed, address)`.
pub fn address_uniform(seed: u64, address: &str) -> f64 {
    let mut h = splitmix(seed);
    for b in address.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Flips decisions of one polarity with probability `epsilon`. The draw is a
/// function of `(seed, address)`, so repeated queries agree and the flipped
/// set for a smaller epsilon is contained in the one for a larger epsilon.
#[derive(Debug, Clone)]
pub struct ErrorInjector<C> {
    pub inner: C,
    pub epsilon: f64,
    pub mode: InjectMode,
    pub seed: u64,
}

impl<C: ExchangeClassifier> ExchangeClassifier for ErrorInjector<C> {
    fn is_exchange(&self, store: &ChainStore, address: &str) -> bool {
        let v = self.inner.is_exchange(store, address);
        let target = match self.mode {
            InjectMode::InjectCfp => !v,
            InjectMode::InjectCfn => v,
        };
        if target && address_uniform(self.seed, address) < self.epsilon {
            !v
        } else {
            v
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::IngestOptions;
    use alloc::format;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn injection_polarity_and_rate() {
        let store = ChainStore::build(vec![], &IngestOptions::default()).unwrap();
        let addrs: Vec<String> = (0..20_000).map(|i| format!("addr{i}")).collect();
        let truth = SetClassifier::new(addrs.iter().step_by(2).cloned());
        for (mode, eps) in [(InjectMode::InjectCfp, 0.1), (InjectMode::InjectCfn, 0.3)] {
            let inj = ErrorInjector {
                inner: &truth,
                epsilon: eps,
                mode,
                seed: 42,
            };
            let mut flipped = 0usize;
            let mut eligible = 0usize;
            for a in &addrs {
                let t = truth.is_exchange(&store, a);
                let got = inj.is_exchange(&store, a);
                let is_target = (mode == InjectMode::InjectCfp) != t;
                if is_target {
                    eligible += 1;
                    flipped += usize::from(got != t);
                } else {
                    assert_eq!(got, t, "wrong polarity flipped");
                }
            }
            let n = eligible as f64;
            let sigma = libm::sqrt(n * eps * (1.0 - eps));
            assert!((flipped as f64 - n * eps).abs() <= 3.0 * sigma, "{flipped} of {eligible}");
        }
    }

    #[test]
    fn flip_sets_nest() {
        let store = ChainStore::build(vec![], &IngestOptions::default()).unwrap();
        let none = SetClassifier::default();
        let small = ErrorInjector { inner: &none, epsilon: 0.1, mode: InjectMode::InjectCfp, seed: 5 };
        let large = ErrorInjector { inner: &none, epsilon: 0.3, mode: InjectMode::InjectCfp, seed: 5 };
        for i in 0..2_000 {
            let a = format!("x{i}");
            if small.is_exchange(&store, &a) {
                assert!(large.is_exchange(&store, &a));
            }
        }
    }

    #[test]
    fn model_predicts_with_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|i| {
                let base = if i % 2 == 0 { 1000.0 } else { 1.0 };
                (0..42).map(|_| base * rng.gen_range(0.5..1.5)).collect()
            })
            .collect();
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let p = ForestParams { n_trees: 20, ..ForestParams::default() };
        let m = ExchangeModel::train_forest(&rows, &labels, &p, 4).unwrap();
        assert_eq!(m.evaluate(&rows, &labels).unwrap().f1(), 1.0);
        assert!(m.predict(&[0.0; 3]).is_err());
        let t = ExchangeModel::train_tree(&rows, &labels, &TreeParams::default(), 0.5, 4).unwrap();
        assert_eq!(t.evaluate(&rows, &labels).unwrap().f1(), 1.0);
    }
}
