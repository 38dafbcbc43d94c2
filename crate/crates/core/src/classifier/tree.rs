//! CART decision trees with Gini impurity.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::ClassifierError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Candidate features per split; `None` considers all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 40,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum Node {
    Leaf {
        p: f64,
        n: u32,
    },
    Split {
        f: u32,
        thr: f64,
        l: u32,
        r: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub nodes: Vec<Node>,
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct Builder<'a, R: RngCore> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    params: &'a TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
    features: Vec<usize>,
    scratch: Vec<(f64, bool)>,
}

impl<R: RngCore> Builder<'_, R> {
    fn leaf(&mut self, samples: &[u32]) -> u32 {
        let pos = samples.iter().filter(|&&i| self.y[i as usize]).count();
        let p = if samples.is_empty() {
            0.0
        } else {
            pos as f64 / samples.len() as f64
        };
        self.nodes.push(Node::Leaf {
            p,
            n: samples.len() as u32,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Best split of `samples` on feature `f`: (weighted child impurity,
    /// threshold). `None` when the feature is constant or no split respects
    /// the leaf size.
    fn best_on(&mut self, samples: &[u32], f: usize) -> Option<(f64, f64)> {
        self.scratch.clear();
        self.scratch
            .extend(samples.iter().map(|&i| (self.x[i as usize][f], self.y[i as usize])));
        self.scratch.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = self.scratch.len();
        if self.scratch[0].0 == self.scratch[n - 1].0 {
            return None;
        }
        let total_pos = self.scratch.iter().filter(|s| s.1).count() as f64;
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut left_pos = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            left_pos += f64::from(u8::from(self.scratch[i].1));
            let (a, b) = (self.scratch[i].0, self.scratch[i + 1].0);
            if a == b {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            if i + 1 < min_leaf || n - i - 1 < min_leaf {
                continue;
            }
            let imp = (nl * gini(left_pos, nl) + nr * gini(total_pos - left_pos, nr)) / n as f64;
            if best.is_none_or(|(bi, _)| imp < bi) {
                let mut thr = a + (b - a) / 2.0;
                if !(thr >= a && thr < b) {
                    thr = a;
                }
                best = Some((imp, thr));
            }
        }
        best
    }

    fn grow(&mut self, samples: Vec<u32>, depth: usize) -> u32 {
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.y[i as usize]).count();
        if pos == 0 || pos == n || depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf.max(1) {
            return self.leaf(&samples);
        }
        let parent = gini(pos as f64, n as f64);
        let d = self.features.len();
        let mtry = self.params.max_features.unwrap_or(d).clamp(1, d);
        self.features.shuffle(self.rng);
        // Draw features until `mtry` non-constant ones have been evaluated.
        let mut best: Option<(f64, usize, f64)> = None;
        let mut evaluated = 0;
        for k in 0..d {
            if evaluated >= mtry {
                break;
            }
            let f = self.features[k];
            if let Some((imp, thr)) = self.best_on(&samples, f) {
                evaluated += 1;
                if best.is_none_or(|(bi, _, _)| imp < bi) {
                    best = Some((imp, f, thr));
                }
            }
        }
        let Some((imp, f, thr)) = best else {
            return self.leaf(&samples);
        };
        if imp >= parent - 1e-12 {
            return self.leaf(&samples);
        }
        let (left, right): (Vec<u32>, Vec<u32>) =
            samples.into_iter().partition(|&i| self.x[i as usize][f] <= thr);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { p: 0.0, n: 0 });
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[id] = Node::Split {
            f: f as u32,
            thr,
            l,
            r,
        };
        id as u32
    }
}

impl DecisionTree {
    /// Fits a tree on the rows listed in `samples` (duplicates allowed, as in
    /// a bootstrap draw).
    pub fn fit_samples<R: RngCore>(
        x: &[Vec<f64>],
        y: &[bool],
        samples: Vec<u32>,
        params: &TreeParams,
        rng: &mut R,
    ) -> Self {
        let n_features = x.first().map_or(0, Vec::len);
        let mut b = Builder {
            x,
            y,
            params,
            rng,
            nodes: Vec::new(),
            features: (0..n_features).collect(),
            scratch: Vec::with_capacity(samples.len()),
        };
        if samples.is_empty() {
            b.leaf(&[]);
        } else {
            b.grow(samples, 0);
        }
        DecisionTree {
            n_features,
            nodes: b.nodes,
        }
    }

    /// Fits on all rows. Fails on fewer than two rows or a single class.
    pub fn fit<R: RngCore>(
        x: &[Vec<f64>],
        y: &[bool],
        params: &TreeParams,
        rng: &mut R,
    ) -> Result<Self, ClassifierError> {
        check_training_set(x, y)?;
        Ok(Self::fit_samples(x, y, (0..x.len() as u32).collect(), params, rng))
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { p, .. } => return *p,
                Node::Split { f, thr, l, r } => {
                    i = if x[*f as usize] <= *thr { *l } else { *r } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { l, r, .. } => 1 + walk(nodes, *l as usize).max(walk(nodes, *r as usize)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { f, .. } => Some(*f as usize),
            Node::Leaf { .. } => None,
        })
    }
}

pub(crate) fn check_training_set(x: &[Vec<f64>], y: &[bool]) -> Result<(), ClassifierError> {
    if x.len() != y.len() {
        return Err(ClassifierError::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(ClassifierError::InsufficientData(
            "training needs at least two samples".into(),
        ));
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(ClassifierError::DimensionMismatch {
            expected: d,
            found: r.len(),
        });
    }
    let pos = y.iter().filter(|&&l| l).count();
    if pos == 0 || pos == y.len() {
        return Err(ClassifierError::DegenerateData);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_one_dimension() {
        let x = vec![vec![1.0], vec![2.0], vec![8.0], vec![9.0]];
        let y = vec![false, false, true, true];
        let t = DecisionTree::fit(&x, &y, &TreeParams::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let Node::Split { thr, .. } = t.nodes[0] else {
            panic!("root should split")
        };
        assert!(thr > 2.0 && thr < 8.0);
        assert_eq!(t.depth(), 1);
        for (r, l) in x.iter().zip(&y) {
            assert_eq!(t.predict_proba(r) >= 0.5, *l);
        }
    }

    #[test]
    fn identical_rows_give_prior_leaf() {
        let x = vec![vec![3.0, 3.0]; 4];
        let y = vec![true, false, false, false];
        let t = DecisionTree::fit(&x, &y, &TreeParams::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict_proba(&[3.0, 3.0]), 0.25);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = vec![vec![1.0], vec![2.0]];
        let err = DecisionTree::fit(&x, &[true, true], &TreeParams::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(err.unwrap_err(), ClassifierError::DegenerateData);
    }

    #[test]
    fn depth_limit_and_xor() {
        let x = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let y = vec![false, true, true, false];
        // XOR has no impurity-reducing first split.
        let t = DecisionTree::fit(&x, &y, &TreeParams::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        let x: Vec<Vec<f64>> = (0..64).map(|i| vec![f64::from(i)]).collect();
        let y: Vec<bool> = (0..64).map(|i| i % 2 == 0).collect();
        let params = TreeParams {
            max_depth: 3,
            ..TreeParams::default()
        };
        let t = DecisionTree::fit(&x, &y, &params, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(t.depth() <= 3);
    }

    #[test]
    fn every_split_reduces_impurity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let x: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + 0.3 * r[1] > 0.6 || r[3] > 0.95).collect();
        let t = DecisionTree::fit(&x, &y, &TreeParams::default(), &mut rng).unwrap();
        // Training accuracy on distinct points is perfect when grown to purity.
        let acc = x.iter().zip(&y).filter(|(r, l)| (t.predict_proba(r) >= 0.5) == **l).count();
        assert_eq!(acc, 300);
    }
}
