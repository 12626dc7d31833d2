//! CART-style regression tree: exact sorted-scan split search on squared
//! error, used as the base learner by both boosting models.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    All,
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub max_features: MaxFeatures,
}

impl TreeConfig {
    pub fn new(max_depth: usize) -> Self {
        Self {
            max_depth,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Fitted binary regression tree; nodes stored in a flat arena with the
/// root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Route a row to its leaf: `x[feature] <= threshold` goes left.
    pub fn leaf_index(&self, x: &[f64]) -> Result<usize> {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { .. } => return Ok(idx),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = *x.get(feature).ok_or_else(|| {
                        Error::Data(format!(
                            "row has {} features but tree needs index {feature}",
                            x.len()
                        ))
                    })?;
                    idx = if v <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        let idx = self.leaf_index(x)?;
        match self.nodes[idx] {
            Node::Leaf { value } => Ok(value),
            Node::Split { .. } => unreachable!(),
        }
    }

    /// Overwrite the value stored at a leaf node.
    pub fn set_leaf_value(&mut self, leaf_idx: usize, value: f64) {
        match &mut self.nodes[leaf_idx] {
            Node::Leaf { value: v } => *v = value,
            Node::Split { .. } => panic!("node {leaf_idx} is not a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Fit a tree on all rows of `x`.
pub fn fit_tree<R: Rng>(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    config: &TreeConfig,
    rng: &mut R,
) -> Result<RegressionTree> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    fit_tree_on_rows(x, targets, &rows, config, rng)
}

/// Fit a tree on the given row subset. `targets` is indexed by absolute row.
pub fn fit_tree_on_rows<R: Rng>(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    rows: &[usize],
    config: &TreeConfig,
    rng: &mut R,
) -> Result<RegressionTree> {
    if rows.is_empty() {
        return Err(Error::Data("cannot fit a tree on zero rows".into()));
    }
    if x.nrows() != targets.len() {
        return Err(Error::Data(format!(
            "matrix has {} rows but {} targets given",
            x.nrows(),
            targets.len()
        )));
    }
    let mut nodes = Vec::new();
    let mut scratch = rows.to_vec();
    build_node(x, targets, &mut scratch, 0, config, rng, &mut nodes);
    Ok(RegressionTree { nodes })
}

fn mean_of(targets: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&i| targets[i]).sum::<f64>() / rows.len() as f64
}

fn build_node<R: Rng>(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    rows: &mut [usize],
    depth: usize,
    config: &TreeConfig,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let idx = nodes.len();
    nodes.push(Node::Leaf {
        value: mean_of(targets, rows),
    });

    if depth >= config.max_depth || rows.len() < config.min_samples_split {
        return idx;
    }
    let Some(split) = best_split(x, targets, rows, config, rng) else {
        return idx;
    };

    // Partition rows in place around the chosen split.
    let mid = partition(x, rows, split.feature, split.threshold);
    debug_assert!(mid >= config.min_samples_leaf && rows.len() - mid >= config.min_samples_leaf);

    let (left_rows, right_rows) = rows.split_at_mut(mid);
    let left = build_node(x, targets, left_rows, depth + 1, config, rng, nodes);
    let right = build_node(x, targets, right_rows, depth + 1, config, rng, nodes);
    nodes[idx] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    idx
}

fn partition(x: ArrayView2<'_, f64>, rows: &mut [usize], feature: usize, threshold: f64) -> usize {
    let mut lo = 0;
    for i in 0..rows.len() {
        if x[(rows[i], feature)] <= threshold {
            rows.swap(lo, i);
            lo += 1;
        }
    }
    lo
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Best squared-error split over a random feature subset. Gain ties break
/// toward the lowest feature index, then the lowest threshold; returns None
/// when no split has strictly positive gain.
fn best_split<R: Rng>(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    rows: &[usize],
    config: &TreeConfig,
    rng: &mut R,
) -> Option<Split> {
    let d = x.ncols();
    let mut candidates: Vec<usize> = (0..d).collect();
    if let MaxFeatures::Count(k) = config.max_features {
        if k < d {
            candidates.shuffle(rng);
            candidates.truncate(k);
            candidates.sort_unstable();
        }
    }

    let n = rows.len() as f64;
    let total: f64 = rows.iter().map(|&i| targets[i]).sum();
    let parent_score = total * total / n;

    let mut best: Option<Split> = None;
    let mut order: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for &f in &candidates {
        order.clear();
        order.extend(rows.iter().map(|&i| (x[(i, f)], targets[i])));
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut left_sum = 0.0;
        for (pos, window) in order.windows(2).enumerate() {
            left_sum += window[0].1;
            if window[0].0 == window[1].0 {
                continue;
            }
            let n_left = pos + 1;
            let n_right = rows.len() - n_left;
            if n_left < config.min_samples_leaf || n_right < config.min_samples_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64
                + right_sum * right_sum / n_right as f64
                - parent_score;
            if gain <= 0.0 {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => gain > b.gain,
            };
            if better {
                let threshold = window[0].0 + 0.5 * (window[1].0 - window[0].0);
                best = Some(Split {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr2, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step_fixture() -> (Array2<f64>, Vec<f64>) {
        (
            arr2(&[[1.0], [2.0], [3.0], [4.0]]),
            vec![0.0, 0.0, 10.0, 10.0],
        )
    }

    #[test]
    fn constant_targets_give_single_leaf() {
        let x = arr2(&[[1.0], [2.0], [3.0]]);
        let y = vec![5.0, 5.0, 5.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(x.view(), &y, &TreeConfig::new(4), &mut rng).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_eq!(tree.predict_row(&[100.0]).unwrap(), 5.0);
    }

    #[test]
    fn step_data_splits_at_midpoint() {
        let (x, y) = step_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(x.view(), &y, &TreeConfig::new(1), &mut rng).unwrap();
        match tree.nodes[0] {
            Node::Split {
                feature, threshold, ..
            } => {
                assert_eq!(feature, 0);
                assert_abs_diff_eq!(threshold, 2.5, epsilon = 1e-12);
            }
            _ => panic!("expected a split at the root"),
        }
        assert_eq!(tree.predict_row(&[1.7]).unwrap(), 0.0);
        assert_eq!(tree.predict_row(&[3.2]).unwrap(), 10.0);
        // A row exactly at the threshold goes left.
        assert_eq!(tree.predict_row(&[2.5]).unwrap(), 0.0);
    }

    #[test]
    fn depth_zero_is_mean_leaf() {
        let (x, y) = step_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(x.view(), &y, &TreeConfig::new(0), &mut rng).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        assert_abs_diff_eq!(tree.predict_row(&[9.0]).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn deeper_trees_never_increase_training_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 60;
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-2.0..2.0f64));
        let y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)].sin() + 0.5 * x[(i, 1)] + rng.gen_range(-0.1..0.1))
            .collect();

        let mut prev_sse = f64::INFINITY;
        for depth in 0..5 {
            let mut fit_rng = ChaCha8Rng::seed_from_u64(0);
            let tree = fit_tree(x.view(), &y, &TreeConfig::new(depth), &mut fit_rng).unwrap();
            let sse: f64 = (0..n)
                .map(|i| {
                    let p = tree.predict_row(x.row(i).as_slice().unwrap()).unwrap();
                    (y[i] - p) * (y[i] - p)
                })
                .sum();
            assert!(
                sse <= prev_sse + 1e-9,
                "depth {depth}: sse {sse} > previous {prev_sse}"
            );
            prev_sse = sse;
        }
    }

    #[test]
    fn training_rows_predict_their_leaf_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.0..1.0));
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mut fit_rng = ChaCha8Rng::seed_from_u64(1);
        let tree = fit_tree(x.view(), &y, &TreeConfig::new(3), &mut fit_rng).unwrap();

        // Group rows by leaf, then check each prediction equals the group mean.
        let mut by_leaf: std::collections::HashMap<usize, Vec<usize>> = Default::default();
        for i in 0..n {
            let leaf = tree.leaf_index(x.row(i).as_slice().unwrap()).unwrap();
            by_leaf.entry(leaf).or_default().push(i);
        }
        for (leaf, rows) in by_leaf {
            let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
            match tree.nodes[leaf] {
                Node::Leaf { value } => assert_abs_diff_eq!(value, mean, epsilon = 1e-9),
                _ => panic!("leaf_index returned a split node"),
            }
        }
    }

    #[test]
    fn respects_min_samples_leaf() {
        let (x, y) = step_fixture();
        let cfg = TreeConfig {
            max_depth: 3,
            min_samples_split: 2,
            min_samples_leaf: 3,
            max_features: MaxFeatures::All,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(x.view(), &y, &cfg, &mut rng).unwrap();
        // No split leaves both sides with >= 3 of 4 rows.
        assert_eq!(tree.nodes.len(), 1);
    }

    #[test]
    fn deterministic_under_feature_subsampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((50, 6), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..50).map(|i| x[(i, 2)] * 3.0 + x[(i, 4)]).collect();
        let cfg = TreeConfig {
            max_depth: 4,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: MaxFeatures::Count(2),
        };
        let t1 = fit_tree(x.view(), &y, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let t2 = fit_tree(x.view(), &y, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn predict_errors_on_short_row() {
        let (x, y) = step_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(x.view(), &y, &TreeConfig::new(1), &mut rng).unwrap();
        assert!(tree.predict_row(&[]).is_err());
    }

    #[test]
    fn empty_input_is_an_error() {
        let x = Array2::<f64>::zeros((0, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(fit_tree(x.view(), &[], &TreeConfig::new(1), &mut rng).is_err());
    }
}
