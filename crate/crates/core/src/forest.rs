//! Random-forest regression: bootstrap-sampled CART trees with greedy
//! variance-reduction splits over a random feature subset per node.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

const FOREST_SPLIT_TAG: &str = "forest-split";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per split. `None` means ceil(d / 3).
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

impl TreeParams {
    fn features_per_split(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| n_features.div_ceil(3))
            .clamp(1, n_features)
    }
}

/// Tree node in flat storage. Leaves have `feature == None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Node {
            feature: None,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return node.value,
                Some(f) => {
                    i = if x[f] <= node.threshold { node.left } else { node.right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i].feature {
                None => 0,
                Some(_) => 1 + walk(nodes, nodes[i].left as usize).max(walk(nodes, nodes[i].right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_none()).count()
    }

    /// Grows a tree on `rows` (indices into `x`/`y`, repeats allowed).
    pub fn fit(x: &[Vec<f64>], y: &[f64], rows: Vec<usize>, params: &TreeParams, rng: &mut StreamRng) -> Self {
        let n_features = x.first().map_or(0, Vec::len);
        let mut builder = Builder {
            x,
            y,
            params,
            n_features,
            mtry: params.features_per_split(n_features.max(1)),
            nodes: Vec::new(),
        };
        let mut rows = rows;
        builder.grow(&mut rows, 0, rng);
        RegressionTree { nodes: builder.nodes }
    }
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    params: &'a TreeParams,
    n_features: usize,
    mtry: usize,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn grow(&mut self, rows: &mut [usize], depth: usize, rng: &mut StreamRng) -> u32 {
        let id = self.nodes.len() as u32;
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&r| self.y[r]).sum();
        let mean = sum / n;
        self.nodes.push(Node::leaf(mean));

        let depth_ok = self.params.max_depth.is_none_or(|d| depth < d);
        let first = self.y[rows[0]];
        let constant = rows.iter().all(|&r| self.y[r] == first);
        if !depth_ok || constant || rows.len() < 2 * self.params.min_leaf {
            return id;
        }
        let Some(split) = self.best_split(rows, rng) else {
            return id;
        };

        let mid = partition(rows, |&r| self.x[r][split.feature] <= split.threshold);
        let (lo, hi) = rows.split_at_mut(mid);
        let left = self.grow(lo, depth + 1, rng);
        let right = self.grow(hi, depth + 1, rng);
        let node = &mut self.nodes[id as usize];
        node.feature = Some(split.feature);
        node.threshold = split.threshold;
        node.left = left;
        node.right = right;
        id
    }

    /// Tries `mtry` random features; if none of them admits a split, keeps
    /// drawing from the rest.
    fn best_split(&self, rows: &[usize], rng: &mut StreamRng) -> Option<Split> {
        let mut features: Vec<usize> = (0..self.n_features).collect();
        features.shuffle(rng);
        let mut best: Option<Split> = None;
        let mut order: Vec<usize> = rows.to_vec();
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.mtry && best.is_some() {
                break;
            }
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            if let Some(s) = self.scan_feature(&order, f) {
                if best.as_ref().is_none_or(|b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn scan_feature(&self, order: &[usize], f: usize) -> Option<Split> {
        let n = order.len();
        let min_leaf = self.params.min_leaf;
        let total: f64 = order.iter().map(|&r| self.y[r]).sum();
        let parent = total * total / n as f64;
        let mut left_sum = 0.0;
        let mut best: Option<Split> = None;
        for i in 0..n - 1 {
            left_sum += self.y[order[i]];
            let nl = i + 1;
            let nr = n - nl;
            let here = self.x[order[i]][f];
            let next = self.x[order[i + 1]][f];
            if here == next || nl < min_leaf || nr < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            // Reduction in SSE equals this sum-of-squares difference.
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
            if gain > 1e-12 * parent.abs().max(1e-300) && best.as_ref().is_none_or(|b| gain > b.gain) {
                let mut threshold = here + (next - here) / 2.0;
                if threshold >= next {
                    threshold = here;
                }
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
        best
    }
}

fn partition(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut mid = 0;
    for i in 0..rows.len() {
        if pred(&rows[i]) {
            rows.swap(i, mid);
            mid += 1;
        }
    }
    mid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestMeta {
    pub config_hash: String,
    pub seed: u64,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub params: TreeParams,
    pub train_rows: usize,
    pub test_rows: usize,
    /// Held-out R^2; `None` when the held-out targets are constant.
    pub test_r2: Option<f64>,
    pub target_min: f64,
    pub target_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    pub meta: ForestMeta,
    pub trees: Vec<RegressionTree>,
}

impl RegressionForest {
    /// Fits `num_trees` trees on the given rows. Each tree draws from its own
    /// stream, so the result does not depend on thread scheduling.
    pub fn fit(
        x: &[Vec<f64>],
        y: &[f64],
        rows: &[usize],
        num_trees: usize,
        params: TreeParams,
        seed: u64,
    ) -> Result<Vec<RegressionTree>> {
        if rows.is_empty() || num_trees == 0 {
            return Err(Error::Domain("forest needs at least one row and one tree".into()));
        }
        Ok((0..num_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(seed, rng::tag::FOREST, t as u64);
                let sample: Vec<usize> = if params.bootstrap {
                    (0..rows.len()).map(|_| rows[rng.random_range(0..rows.len())]).collect()
                } else {
                    rows.to_vec()
                };
                RegressionTree::fit(x, y, sample, &params, &mut rng)
            })
            .collect())
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let forest: RegressionForest =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("forest: {e}")))?;
        if forest.trees.is_empty() {
            return Err(Error::Domain("forest has no trees".into()));
        }
        for t in &forest.trees {
            let n = t.nodes.len() as u32;
            let bad = t.nodes.is_empty()
                || t.nodes.iter().any(|node| {
                    node.feature.is_some_and(|f| f >= forest.meta.n_features || node.left >= n || node.right >= n)
                });
            if bad {
                return Err(Error::Parse("forest: malformed tree".into()));
            }
        }
        Ok(forest)
    }
}

/// `1 - SS_res / SS_tot`, or `None` when the targets are constant.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Option<f64> {
    let n = actual.len() as f64;
    if actual.is_empty() {
        return None;
    }
    let mean = actual.iter().sum::<f64>() / n;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let ss_res: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum();
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

/// Shuffled train/test index split with at least one row on each side when
/// there are two or more rows.
pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, FOREST_SPLIT_TAG, 0));
    let cut = ((n as f64 * train_fraction).round() as usize).clamp(1.min(n), n.saturating_sub(1).max(1));
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_data(f: impl Fn(f64, f64) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let (a, b) = (i as f64, j as f64 * 0.5);
                x.push(vec![a, b]);
                y.push(f(a, b));
            }
        }
        (x, y)
    }

    #[test]
    fn memorizes_unique_rows_without_randomness() {
        let (x, y) = grid_data(|a, b| (a * 1.7 + b).sin() * 100.0);
        let rows: Vec<usize> = (0..x.len()).collect();
        let params = TreeParams {
            max_depth: None,
            min_leaf: 1,
            max_features: Some(2),
            bootstrap: false,
        };
        let trees = RegressionForest::fit(&x, &y, &rows, 1, params, 3).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(trees[0].predict(xi), *yi);
        }
    }

    #[test]
    fn constant_target_gives_single_leaf() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let y = vec![4.0; 30];
        let rows: Vec<usize> = (0..30).collect();
        let trees = RegressionForest::fit(&x, &y, &rows, 3, TreeParams::default(), 1).unwrap();
        assert!(trees.iter().all(|t| t.nodes.len() == 1));
        assert_eq!(r_squared(&y, &y), None);
    }

    #[test]
    fn depth_and_leaf_limits_hold() {
        let (x, y) = grid_data(|a, b| a * b);
        let rows: Vec<usize> = (0..x.len()).collect();
        let params = TreeParams {
            max_depth: Some(3),
            min_leaf: 5,
            max_features: None,
            bootstrap: true,
        };
        let trees = RegressionForest::fit(&x, &y, &rows, 4, params, 9).unwrap();
        for t in &trees {
            assert!(t.depth() <= 3);
            assert!(t.leaves() <= 8);
        }
    }

    #[test]
    fn r_squared_matches_brute_force() {
        let actual = [3.0, -1.0, 2.5, 7.0, 0.0];
        let predicted = [2.5, 0.0, 2.0, 8.0, -0.5];
        let mean = actual.iter().sum::<f64>() / 5.0;
        let mut tot = 0.0;
        let mut res = 0.0;
        for i in 0..5 {
            tot += (actual[i] - mean) * (actual[i] - mean);
            res += (actual[i] - predicted[i]) * (actual[i] - predicted[i]);
        }
        assert!((r_squared(&actual, &predicted).unwrap() - (1.0 - res / tot)).abs() < 1e-12);
    }

    #[test]
    fn split_is_a_partition() {
        let (train, test) = train_test_split(100, 0.8, 5);
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(train_test_split(100, 0.8, 5), (train, test));
    }

    #[test]
    fn json_round_trip_rejects_garbage() {
        assert!(RegressionForest::from_json("{\"meta\":").is_err());
    }
}
