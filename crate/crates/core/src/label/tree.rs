//! CART-style decision trees with the Gini split criterion.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { counts: Vec<u32> },
}

impl TreeNode {
    /// Majority class of the reached leaf; ties break toward the lower
    /// class index. Values `<= threshold` descend left.
    pub fn predict(&self, features: &[f64]) -> usize {
        match self {
            TreeNode::Leaf { counts } => {
                let mut best = 0;
                for (i, &c) in counts.iter().enumerate() {
                    if c > counts[best] {
                        best = i;
                    }
                }
                best
            }
            TreeNode::Split { feature, threshold, left, right } => {
                if features[*feature] <= *threshold {
                    left.predict(features)
                } else {
                    right.predict(features)
                }
            }
        }
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self {
            TreeNode::Split { feature, threshold, .. } => Some((*feature, *threshold)),
            TreeNode::Leaf { .. } => None,
        }
    }
}

/// Gini impurity `1 - sum(p_c^2)` of a class-count vector.
pub fn gini_impurity(counts: &[u32]) -> f64 {
    let n: u32 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Fits one tree. With `bootstrap`, the sample is `n` draws with
/// replacement from the tree's RNG stream; feature subsets are redrawn at
/// every node. Splits are midpoints of adjacent distinct values; the search
/// keeps the first best candidate, so ties resolve to the lowest feature
/// index and lowest threshold.
pub(super) fn fit_tree(
    features: &[Vec<f64>],
    class_ids: &[usize],
    n_classes: usize,
    min_samples_split: usize,
    max_features: usize,
    bootstrap: bool,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let n = features.len();
    let indices: Vec<usize> = if bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    build(features, class_ids, n_classes, min_samples_split, max_features, indices, rng)
}

fn counts_of(class_ids: &[usize], indices: &[usize], n_classes: usize) -> Vec<u32> {
    let mut counts = vec![0u32; n_classes];
    for &i in indices {
        counts[class_ids[i]] += 1;
    }
    counts
}

fn build(
    features: &[Vec<f64>],
    class_ids: &[usize],
    n_classes: usize,
    min_samples_split: usize,
    max_features: usize,
    indices: Vec<usize>,
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let counts = counts_of(class_ids, &indices, n_classes);
    let n = indices.len();
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if n < min_samples_split || pure {
        return TreeNode::Leaf { counts };
    }

    let n_features = features[0].len();
    let candidates = sample_features(n_features, max_features, rng);

    let parent = gini_impurity(&counts);
    let mut best: Option<(f64, usize, f64)> = None; // (decrease, feature, threshold)
    let mut pairs: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &feature in &candidates {
        pairs.clear();
        pairs.extend(indices.iter().map(|&i| (features[i][feature], class_ids[i])));
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let mut left = vec![0u32; n_classes];
        let mut right = counts.clone();
        for w in 0..n - 1 {
            let (value, class) = pairs[w];
            left[class] += 1;
            right[class] -= 1;
            let next = pairs[w + 1].0;
            if value == next {
                continue;
            }
            let nl = (w + 1) as f64;
            let nr = (n - w - 1) as f64;
            let weighted =
                (nl * gini_impurity(&left) + nr * gini_impurity(&right)) / n as f64;
            let decrease = parent - weighted;
            let better = match best {
                None => decrease > 0.0,
                Some((b, _, _)) => decrease > b,
            };
            if better {
                best = Some((decrease, feature, (value + next) / 2.0));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        return TreeNode::Leaf { counts };
    };

    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
        indices.into_iter().partition(|&i| features[i][feature] <= threshold);
    let left = build(features, class_ids, n_classes, min_samples_split, max_features, left_idx, rng);
    let right =
        build(features, class_ids, n_classes, min_samples_split, max_features, right_idx, rng);
    TreeNode::Split { feature, threshold, left: Box::new(left), right: Box::new(right) }
}

/// Draws `max_features` distinct feature indices, returned in ascending
/// order so the split search visits them deterministically.
fn sample_features(n_features: usize, max_features: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = max_features.min(n_features);
    if m == n_features {
        return (0..n_features).collect();
    }
    let mut all: Vec<usize> = (0..n_features).collect();
    for i in 0..m {
        let j = rng.random_range(i..n_features);
        all.swap(i, j);
    }
    let mut picked = all[..m].to_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, tag};

    #[test]
    fn gini_of_balanced_two_class_node_is_half() {
        assert_eq!(gini_impurity(&[2, 2]), 0.5);
        assert_eq!(gini_impurity(&[4, 0]), 0.0);
        assert_eq!(gini_impurity(&[]), 0.0);
    }

    /// Exhaustive split-search oracle for 1-D data: tries every midpoint of
    /// adjacent distinct sorted values and recomputes the weighted Gini by
    /// direct counting.
    fn oracle_best_split(xs: &[f64], ys: &[usize], n_classes: usize) -> Option<f64> {
        let mut sorted: Vec<f64> = xs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        let n = xs.len() as f64;
        let mut parent_counts = vec![0u32; n_classes];
        for &y in ys {
            parent_counts[y] += 1;
        }
        let parent = gini_impurity(&parent_counts);
        let mut best: Option<(f64, f64)> = None;
        for pair in sorted.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            let mut lc = vec![0u32; n_classes];
            let mut rc = vec![0u32; n_classes];
            for (x, &y) in xs.iter().zip(ys) {
                if *x <= threshold {
                    lc[y] += 1;
                } else {
                    rc[y] += 1;
                }
            }
            let nl: u32 = lc.iter().sum();
            let nr: u32 = rc.iter().sum();
            let weighted =
                (nl as f64 * gini_impurity(&lc) + nr as f64 * gini_impurity(&rc)) / n;
            let decrease = parent - weighted;
            let better = match best {
                None => decrease > 0.0,
                Some((b, _)) => decrease > b,
            };
            if better {
                best = Some((decrease, threshold));
            }
        }
        best.map(|(_, t)| t)
    }

    fn single_tree(xs: &[f64], ys: &[usize], n_classes: usize) -> TreeNode {
        let features: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let mut rng = rng::stream(1, tag::TREE, 0);
        fit_tree(&features, ys, n_classes, 2, 1, false, &mut rng)
    }

    #[test]
    fn worked_example_splits_at_one_and_a_half() {
        let tree = single_tree(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1], 2);
        assert_eq!(tree.root_split(), Some((0, 1.5)));
        assert_eq!(oracle_best_split(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1], 2), Some(1.5));
    }

    #[test]
    fn tree_root_matches_exhaustive_oracle_on_small_datasets() {
        // all binary label patterns over x = 0..n for n <= 6
        for n in 2..=6usize {
            let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
            for pattern in 0..(1u32 << n) {
                let ys: Vec<usize> =
                    (0..n).map(|i| ((pattern >> i) & 1) as usize).collect();
                let tree = single_tree(&xs, &ys, 2);
                let oracle = oracle_best_split(&xs, &ys, 2);
                match (tree.root_split(), oracle) {
                    (None, None) => {}
                    (Some((0, got)), Some(want)) => {
                        assert_eq!(got, want, "n={n} pattern={pattern:b}");
                    }
                    other => panic!("n={n} pattern={pattern:b}: {other:?}"),
                }
            }
        }
    }

    #[test]
    fn duplicate_values_never_split_between_equals() {
        let tree = single_tree(&[1.0, 1.0, 1.0, 1.0], &[0, 1, 0, 1], 2);
        assert!(tree.root_split().is_none());
    }
}
