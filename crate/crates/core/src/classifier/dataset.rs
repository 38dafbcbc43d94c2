//! Labelled dataset assembly, stratified splitting and cross-validation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forest::{ForestParams, RandomForest};
use super::tree::DecisionTree;
use super::metrics::{Confusion, Scores};
use crate::chain::ChainStore;
use crate::cluster::ClusterMap;
use crate::error::ClassifierError;
use crate::features::{extract_features, Normalizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub addresses: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
    pub split: Vec<Split>,
    /// Where each row came from: `seed` or `cluster:<seed address>`.
    pub provenance: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    fn part(&self, which: Split) -> (Vec<Vec<f64>>, Vec<bool>) {
        self.split
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == which)
            .map(|(i, _)| (self.rows[i].clone(), self.labels[i]))
            .unzip()
    }

    pub fn train(&self) -> (Vec<Vec<f64>>, Vec<bool>) {
        self.part(Split::Train)
    }

    pub fn test(&self) -> (Vec<Vec<f64>>, Vec<bool>) {
        self.part(Split::Test)
    }

    /// Reassigns rows to a stratified train/test split with `test_fraction`
    /// of each class (rounded) held out.
    pub fn stratify(&mut self, test_fraction: f64, seed: u64) {
        self.split = stratified_split(&self.labels, test_fraction, seed);
    }
}

/// Expands one class: seeds first, then cluster members taken round-robin
/// across the seeds' clusters until `target` addresses are collected.
fn expand_class(
    seeds: &[String],
    clusters: &ClusterMap,
    target: usize,
    taken: &BTreeSet<String>,
) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    let mut have: BTreeSet<String> = BTreeSet::new();
    for s in seeds {
        if out.len() >= target {
            break;
        }
        if !taken.contains(s) && have.insert(s.clone()) {
            out.push((s.clone(), "seed".to_string()));
        }
    }
    let mut queues: Vec<(&String, &[String], usize)> = Vec::new();
    let mut seen_clusters = BTreeSet::new();
    for s in seeds {
        let c = clusters.cluster_of(s);
        if seen_clusters.insert(c) {
            queues.push((s, clusters.members(c), 0));
        }
    }
    while out.len() < target {
        let mut progressed = false;
        for (seed, members, pos) in queues.iter_mut() {
            while *pos < members.len() {
                let m = &members[*pos];
                *pos += 1;
                if !taken.contains(m) && have.insert(m.clone()) {
                    out.push((m.clone(), format!("cluster:{seed}")));
                    progressed = true;
                    break;
                }
            }
            if out.len() >= target {
                break;
            }
        }
        if !progressed {
            break;
        }
    }
    out
}

/// Builds a balanced dataset of `target_size` addresses (half exchanges,
/// half non-exchanges) from seed lists expanded through their multi-input
/// clusters, then splits it 80/20 stratified.
pub fn assemble_dataset(
    store: &ChainStore,
    clusters: &ClusterMap,
    positives: &[String],
    negatives: &[String],
    target_size: usize,
    seed: u64,
) -> Result<LabeledDataset, ClassifierError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(ClassifierError::InsufficientData(
            "both seed lists must be non-empty".to_string(),
        ));
    }
    let pos_set: BTreeSet<&String> = positives.iter().collect();
    if let Some(a) = negatives.iter().find(|a| pos_set.contains(a)) {
        return Err(ClassifierError::ContradictorySeed(a.clone()));
    }
    let per_class = target_size / 2;
    if per_class == 0 {
        return Err(ClassifierError::InvalidParameter("target size must be at least 2".into()));
    }
    // Negative seeds may not be pulled in as positive cluster members and
    // vice versa.
    let neg_seeds: BTreeSet<String> = negatives.iter().cloned().collect();
    let pos = expand_class(positives, clusters, per_class, &neg_seeds);
    let pos_taken: BTreeSet<String> = pos.iter().map(|(a, _)| a.clone()).collect();
    let neg = expand_class(negatives, clusters, per_class, &pos_taken);
    if pos.len() < per_class || neg.len() < per_class {
        return Err(ClassifierError::InsufficientData(format!(
            "could only collect {} positive and {} negative addresses, need {per_class} each",
            pos.len(),
            neg.len()
        )));
    }
    let mut ds = LabeledDataset {
        addresses: Vec::new(),
        rows: Vec::new(),
        labels: Vec::new(),
        split: Vec::new(),
        provenance: Vec::new(),
    };
    for (label, list) in [(true, pos), (false, neg)] {
        for (a, prov) in list {
            ds.rows.push(extract_features(store, &a).0.to_vec());
            ds.addresses.push(a);
            ds.labels.push(label);
            ds.provenance.push(prov);
        }
    }
    ds.stratify(0.2, seed);
    Ok(ds)
}

/// Per-class shuffled assignment; `round(n_c · test_fraction)` rows of each
/// class go to the test split.
pub fn stratified_split(labels: &[bool], test_fraction: f64, seed: u64) -> Vec<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = alloc::vec![Split::Train; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = libm::round(idx.len() as f64 * test_fraction) as usize;
        for &i in &idx[..n_test] {
            split[i] = Split::Test;
        }
    }
    split
}

/// Stratified fold assignment: every class is shuffled and dealt
/// round-robin over `k` folds.
pub fn stratified_folds(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>, ClassifierError> {
    if k < 2 {
        return Err(ClassifierError::InvalidParameter("k must be at least 2".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos < k || labels.len() - pos < k {
        return Err(ClassifierError::InsufficientData(format!(
            "each class needs at least {k} samples for {k}-fold stratification"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = alloc::vec![0; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (j, &i) in idx.iter().enumerate() {
            fold[i] = j % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub mean: Scores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub confusion: Confusion,
    pub scores: Scores,
}

/// Stratified k-fold cross-validation of a forest. Each fold fits its own
/// normalizer on the training part.
pub fn cross_validate(
    rows: &[Vec<f64>],
    labels: &[bool],
    k: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<CvReport, ClassifierError> {
    cross_validate_with(rows, labels, k, params, seed, &|n, fit| (0..n).map(fit).collect())
}

/// [`cross_validate`] with a caller-supplied per-tree loop, as in
/// [`RandomForest::fit_with`].
pub fn cross_validate_with<M>(
    rows: &[Vec<f64>],
    labels: &[bool],
    k: usize,
    params: &ForestParams,
    seed: u64,
    map: &M,
) -> Result<CvReport, ClassifierError>
where
    M: Fn(usize, &(dyn Fn(usize) -> DecisionTree + Sync)) -> Vec<DecisionTree>,
{
    let fold = stratified_folds(labels, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..rows.len() {
            if fold[i] == f {
                xte.push(rows[i].clone());
                yte.push(labels[i]);
            } else {
                xtr.push(rows[i].clone());
                ytr.push(labels[i]);
            }
        }
        let norm = Normalizer::fit(&xtr)?;
        let xtr = norm.transform_all(&xtr)?;
        let forest = RandomForest::fit_with(&xtr, &ytr, params, seed.wrapping_add(f as u64), map)?;
        let mut pred = Vec::with_capacity(xte.len());
        for r in &xte {
            pred.push(forest.predict(&norm.transform(r)?)?.1);
        }
        let confusion = Confusion::from_predictions(&yte, &pred);
        folds.push(FoldResult {
            fold: f,
            confusion,
            scores: confusion.scores(),
        });
    }
    let mean = Scores::mean(&folds.iter().map(|f| f.scores).collect::<Vec<_>>());
    Ok(CvReport { k, folds, mean })
}

/// Count of rows per (label, split), for stratification checks.
pub fn split_counts(ds: &LabeledDataset) -> BTreeMap<(bool, bool), usize> {
    let mut m = BTreeMap::new();
    for (l, s) in ds.labels.iter().zip(&ds.split) {
        *m.entry((*l, *s == Split::Test)).or_insert(0) += 1;
    }
    m
}
