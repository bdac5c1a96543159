use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Hyperparameters, TrainingSet};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    /// Samples with `x[feature] <= threshold` go left.
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Mean training target of the node; the prediction at leaves.
    pub value: f64,
    /// Number of training samples (with bootstrap multiplicity) reaching the node.
    pub cover: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

/// Binary regression tree stored as an arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub n_features: usize,
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// A single-leaf tree.
    pub fn leaf(n_features: usize, value: f64, cover: f64) -> Self {
        Self {
            n_features,
            nodes: vec![TreeNode {
                value,
                cover,
                split: None,
            }],
        }
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = 0;
        while let Some(s) = &self.nodes[node].split {
            node = if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        node
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, node: usize) -> usize {
            match &t.nodes[node].split {
                None => 0,
                Some(s) => 1 + walk(t, s.left).max(walk(t, s.right)),
            }
        }
        walk(self, 0)
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.nodes.iter().filter_map(|n| n.split.as_ref().map(|s| s.feature)).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}

/// Best split of `indices` on one feature: `(gain, threshold)`.
///
/// Gain is the reduction in the sum of squared errors. Candidate thresholds
/// sit midway between consecutive distinct values, and both children must
/// keep at least `min_leaf` samples.
fn best_split_on(data: &TrainingSet<'_>, indices: &mut [usize], feature: usize, min_leaf: usize) -> Option<(f64, f64)> {
    indices.sort_by(|&a, &b| data.features[a][feature].total_cmp(&data.features[b][feature]));
    let n = indices.len();
    let total: f64 = indices.iter().map(|&i| data.targets[i]).sum();
    let parent = total * total / n as f64;
    let mut left_sum = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 1..n {
        left_sum += data.targets[indices[k - 1]];
        let lo = data.features[indices[k - 1]][feature];
        let hi = data.features[indices[k]][feature];
        if k < min_leaf || n - k < min_leaf || lo == hi {
            continue;
        }
        let right_sum = total - left_sum;
        let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
        let gain = score - parent;
        if best.map_or(true, |(g, _)| gain > g) {
            let mid = lo + (hi - lo) / 2.0;
            let threshold = if mid < hi { mid } else { lo };
            best = Some((gain, threshold));
        }
    }
    best
}

struct Grower<'d, 'a> {
    data: &'d TrainingSet<'a>,
    hp: &'d Hyperparameters,
    mtry: usize,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl Grower<'_, '_> {
    fn grow(&mut self, mut indices: Vec<usize>, depth: usize) -> usize {
        let n = indices.len();
        let (sum, sum_sq) = indices.iter().fold((0.0, 0.0), |(s, q), &i| {
            let y = self.data.targets[i];
            (s + y, q + y * y)
        });
        let mean = sum / n as f64;
        let sse = (sum_sq - sum * mean).max(0.0);
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            value: mean,
            cover: n as f64,
            split: None,
        });

        let depth_ok = self.hp.max_depth.map_or(true, |d| depth < d);
        let spread = indices
            .iter()
            .map(|&i| self.data.targets[i])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        if !depth_ok || n < 2 * self.hp.min_leaf.max(1) || spread.0 == spread.1 {
            return id;
        }

        let d = self.data.n_features();
        let mut candidates: Vec<usize> = sample(&mut self.rng, d, self.mtry).into_vec();
        candidates.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        for f in candidates {
            if let Some((gain, threshold)) = best_split_on(self.data, &mut indices, f, self.hp.min_leaf.max(1)) {
                if best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else {
            return id;
        };
        if !(gain > 1e-12 * sse) {
            return id;
        }
        let (left, right): (Vec<usize>, Vec<usize>) = indices
            .into_iter()
            .partition(|&i| self.data.features[i][feature] <= threshold);
        let left_id = self.grow(left, depth + 1);
        let right_id = self.grow(right, depth + 1);
        self.nodes[id].split = Some(Split {
            feature,
            threshold,
            left: left_id,
            right: right_id,
        });
        id
    }
}

/// Grows one CART regression tree on the given rows (repeats allowed).
///
/// Each node draws a fresh random feature subset of the configured size and
/// takes the split with the largest squared-error reduction (earliest
/// feature, then smallest threshold, on exact ties). Growth stops at the
/// depth limit, when a node cannot give both children `min_leaf` samples,
/// when targets are constant, or when no split reduces the error.
pub(crate) fn grow_tree(data: &TrainingSet<'_>, indices: Vec<usize>, hp: &Hyperparameters, seed: u64) -> Result<RegressionTree> {
    if indices.is_empty() {
        return Err(Error::Data("cannot fit a tree on an empty sample set".into()));
    }
    let d = data.n_features();
    let mut grower = Grower {
        data,
        hp,
        mtry: hp.max_features.resolve(d),
        rng: ChaCha8Rng::seed_from_u64(seed),
        nodes: Vec::new(),
    };
    grower.grow(indices, 0);
    Ok(RegressionTree {
        n_features: d,
        nodes: grower.nodes,
    })
}

/// Fits a tree on every row of `data`, without resampling.
pub fn fit_tree(data: &TrainingSet<'_>, hp: &Hyperparameters, seed: u64) -> Result<RegressionTree> {
    grow_tree(data, (0..data.len()).collect(), hp, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaxFeatures;

    fn hp(max_depth: Option<usize>, min_leaf: usize) -> Hyperparameters {
        Hyperparameters {
            n_trees: 1,
            max_depth,
            min_leaf,
            max_features: MaxFeatures::All,
            bootstrap: false,
        }
    }

    #[test]
    fn constant_targets_give_single_leaf() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 0.0]];
        let data = TrainingSet::new(&rows, vec![7.0; 3]);
        let t = fit_tree(&data, &hp(None, 1), 1).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].value, 7.0);
    }

    #[test]
    fn binary_feature_separates_perfectly() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![(i % 2) as f64, (i * 7 % 5) as f64]).collect();
        let targets: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 3.0 } else { 11.0 }).collect();
        let data = TrainingSet::new(&rows, targets.clone());
        let t = fit_tree(&data, &hp(Some(1), 1), 1).unwrap();
        let mse: f64 = rows.iter().zip(&targets).map(|(x, y)| (t.predict(x) - y).powi(2)).sum::<f64>() / 10.0;
        assert_eq!(mse, 0.0);
        assert_eq!(t.nodes[0].split.as_ref().unwrap().feature, 0);
    }

    #[test]
    fn cover_is_additive_and_leaves_finite() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, ((i * 13) % 17) as f64]).collect();
        let targets: Vec<f64> = (0..40).map(|i| ((i * 31) % 23) as f64).collect();
        let data = TrainingSet::new(&rows, targets);
        let t = fit_tree(&data, &hp(None, 2), 5).unwrap();
        for node in &t.nodes {
            assert!(node.value.is_finite());
            if let Some(s) = &node.split {
                assert_eq!(node.cover, t.nodes[s.left].cover + t.nodes[s.right].cover);
            }
        }
        assert!(t.nodes.iter().filter(|n| n.split.is_none()).all(|n| n.cover >= 2.0));
    }

    #[test]
    fn depth_limit() {
        let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64]).collect();
        let data = TrainingSet::new(&rows, (0..64).map(|i| (i * i) as f64).collect());
        assert_eq!(fit_tree(&data, &hp(Some(3), 1), 0).unwrap().depth(), 3);
    }

    #[test]
    fn empty_sample_set() {
        let rows: Vec<Vec<f64>> = Vec::new();
        let data = TrainingSet::new(&rows, Vec::new());
        assert!(fit_tree(&data, &hp(None, 1), 0).is_err());
    }

    /// Exhaustive scan of every (feature, threshold) pair, scoring each split
    /// by the directly computed SSE of both children.
    fn exhaustive_root_split(rows: &[Vec<f64>], y: &[f64], min_leaf: usize) -> (usize, f64) {
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let mut best = (usize::MAX, f64::NAN, f64::INFINITY);
        for f in 0..rows[0].len() {
            let mut values: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let left: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| r[f] <= t).map(|(_, &v)| v).collect();
                let right: Vec<f64> = rows.iter().zip(y).filter(|(r, _)| r[f] > t).map(|(_, &v)| v).collect();
                if left.len() < min_leaf || right.len() < min_leaf {
                    continue;
                }
                let total = sse(&left) + sse(&right);
                if total < best.2 {
                    best = (f, t, total);
                }
            }
        }
        (best.0, best.1)
    }

    #[test]
    fn root_split_matches_exhaustive_enumeration() {
        let rows = vec![
            vec![0.12, 0.40, 0.55],
            vec![0.31, 0.22, 0.10],
            vec![0.05, 0.61, 0.47],
            vec![0.44, 0.18, 0.92],
            vec![0.27, 0.73, 0.33],
            vec![0.39, 0.09, 0.68],
            vec![0.18, 0.52, 0.21],
            vec![0.50, 0.35, 0.79],
        ];
        let y = vec![41.0, 63.0, 38.0, 80.0, 52.0, 71.0, 45.0, 77.0];
        let data = TrainingSet::new(&rows, y.clone());
        for min_leaf in [1, 2, 3] {
            let t = fit_tree(&data, &hp(Some(1), min_leaf), 0).unwrap();
            let s = t.nodes[0].split.as_ref().unwrap();
            let (f, thr) = exhaustive_root_split(&rows, &y, min_leaf);
            assert_eq!(s.feature, f);
            assert!((s.threshold - thr).abs() < 1e-12);
        }
    }
}
