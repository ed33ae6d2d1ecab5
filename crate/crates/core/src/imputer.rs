//! Random-forest imputation of both potential outcomes.
//!
//! A CART regression forest is grown on the design (T, Z, T·Z) (joint mode) or
//! on Z within each arm (per-arm mode); each subject is then predicted under
//! T = 1 and T = 0 and the two predictions are contrasted.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImputedContrasts, TrialDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features per split; `None` means ⌈features / 3⌉.
    pub mtry: Option<usize>,
    /// Minimum terminal node size.
    pub min_node: usize,
    /// Grow each tree on a bootstrap resample (otherwise on the full sample).
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            mtry: None,
            min_node: 5,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or_else(|| n_features.div_ceil(3).max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A single CART regression tree. Inputs with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    /// How many times each training row was drawn into this tree's sample.
    in_bag: Vec<u32>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn in_bag_counts(&self) -> &[u32] {
        &self.in_bag
    }

    /// Mean squared error over the rows this tree never saw; `None` if every
    /// row was in-bag.
    pub fn oob_mse(&self, x: &DMatrix<f64>, y: &[f64]) -> Option<f64> {
        let mut sse = 0.0;
        let mut count = 0usize;
        let mut row = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            if self.in_bag[i] == 0 {
                fill_row(x, i, &mut row);
                let e = self.predict(&row) - y[i];
                sse += e * e;
                count += 1;
            }
        }
        (count > 0).then(|| sse / count as f64)
    }
}

fn fill_row(x: &DMatrix<f64>, i: usize, row: &mut [f64]) {
    for (j, r) in row.iter_mut().enumerate() {
        *r = x[(i, j)];
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionForest {
    trees: Vec<RegressionTree>,
    n_trees: usize,
    mtry: usize,
    min_node: usize,
    seed: u64,
    feature_names: Vec<String>,
}

impl RegressionForest {
    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.n_trees
    }

    pub fn mtry(&self) -> usize {
        self.mtry
    }

    pub fn min_node(&self) -> usize {
        self.min_node
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Mean of the per-tree leaf values.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_names.len(),
                found: features.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(features)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Same values as calling `predict` per row; trees are walked one at a
    /// time so each stays in cache.
    pub fn predict_matrix(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let p = x.ncols();
        if p != self.feature_names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_names.len(),
                found: p,
            });
        }
        let n = x.nrows();
        let mut rows = vec![0.0; n * p];
        for i in 0..n {
            fill_row(x, i, &mut rows[i * p..(i + 1) * p]);
        }
        let mut sums = vec![0.0; n];
        for tree in &self.trees {
            for (i, sum) in sums.iter_mut().enumerate() {
                *sum += tree.predict(&rows[i * p..(i + 1) * p]);
            }
        }
        let count = self.trees.len() as f64;
        Ok(sums.into_iter().map(|s| s / count).collect())
    }

    /// Out-of-bag predictions for the training matrix the forest was grown on.
    /// Diagnostic only; imputation uses the full forest.
    pub fn oob_predictions(&self, x: &DMatrix<f64>) -> Vec<Option<f64>> {
        let mut row = vec![0.0; x.ncols()];
        (0..x.nrows())
            .map(|i| {
                fill_row(x, i, &mut row);
                let (sum, count) = self
                    .trees
                    .iter()
                    .filter(|t| t.in_bag[i] == 0)
                    .fold((0.0, 0usize), |(s, c), t| (s + t.predict(&row), c + 1));
                (count > 0).then(|| sum / count as f64)
            })
            .collect()
    }
}

/// Grows a forest of CART regression trees on the rows of `x` (n × features).
///
/// Tree t draws all of its randomness from `derive_seed(seed, t)`, so the
/// result is identical whether trees are grown sequentially or in parallel.
pub fn fit_forest(
    x: &DMatrix<f64>,
    y: &[f64],
    feature_names: Vec<String>,
    config: &ForestConfig,
    seed: u64,
) -> Result<RegressionForest> {
    let n = x.nrows();
    let n_features = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if feature_names.len() != n_features {
        return Err(Error::DimensionMismatch {
            expected: n_features,
            found: feature_names.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "forest needs at least 2 rows, got {n}"
        )));
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument("forest needs at least one feature".into()));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Validation("forest inputs must be finite".into()));
    }
    if config.n_trees == 0 {
        return Err(Error::InvalidArgument("n_trees ≥ 1 required".into()));
    }
    if config.min_node == 0 {
        return Err(Error::InvalidArgument("min_node ≥ 1 required".into()));
    }
    let mtry = config.resolved_mtry(n_features);
    if mtry == 0 || mtry > n_features {
        return Err(Error::InvalidArgument(format!(
            "mtry must lie in 1..={n_features}, got {mtry}"
        )));
    }

    let owned: Vec<Vec<f64>> = (0..n_features)
        .map(|j| x.column(j).iter().copied().collect())
        .collect();
    let columns: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
    let presorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut v: Vec<usize> = (0..n).collect();
            v.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
            v
        })
        .collect();
    let grower = TreeGrower {
        columns: &columns,
        presorted: &presorted,
        y,
        mtry,
        min_node: config.min_node,
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let mut in_bag = vec![0u32; n];
            if config.bootstrap {
                for _ in 0..n {
                    in_bag[rng.random_range(0..n)] += 1;
                }
            } else {
                in_bag.fill(1);
            }
            let nodes = grower.grow(&in_bag, n, &mut rng);
            RegressionTree { nodes, in_bag }
        })
        .collect();

    Ok(RegressionForest {
        trees,
        n_trees: config.n_trees,
        mtry,
        min_node: config.min_node,
        seed,
        feature_names,
    })
}

struct TreeGrower<'a> {
    columns: &'a [&'a [f64]],
    /// Row indices sorted by each feature.
    presorted: &'a [Vec<usize>],
    y: &'a [f64],
    mtry: usize,
    min_node: usize,
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    /// Number of sorted rows going left.
    n_left: usize,
    /// sum_l²/n_l + sum_r²/n_r; maximizing it minimizes the children's SSE.
    score: f64,
}

impl TreeGrower<'_> {
    /// Each feature keeps the sample sorted by its values; a node is a common
    /// range in every ordering, and splits stable-partition all orderings.
    fn grow(&self, in_bag: &[u32], m: usize, rng: &mut Rng) -> Vec<Node> {
        let mut order: Vec<Vec<usize>> = self
            .presorted
            .iter()
            .map(|sorted| {
                let mut v = Vec::with_capacity(m);
                for &i in sorted {
                    for _ in 0..in_bag[i] {
                        v.push(i);
                    }
                }
                v
            })
            .collect();
        let mut scratch = Vec::with_capacity(m);
        let mut nodes = vec![Node::Leaf { value: 0.0 }];
        let mut stack = vec![(0usize, 0usize, m)];
        while let Some((slot, start, end)) = stack.pop() {
            let rows = &order[0][start..end];
            let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
            let pure = rows.iter().all(|&i| self.y[i] == self.y[rows[0]]);
            if pure || rows.len() < 2 * self.min_node {
                nodes[slot] = Node::Leaf { value: mean };
                continue;
            }
            match self.best_split(&order, start, end, rng) {
                None => nodes[slot] = Node::Leaf { value: mean },
                Some(split) => {
                    let col = self.columns[split.feature];
                    for (j, ord) in order.iter_mut().enumerate() {
                        if j == split.feature {
                            continue;
                        }
                        let seg = &mut ord[start..end];
                        scratch.resize(seg.len(), 0);
                        let (mut w, mut r) = (0, 0);
                        for k in 0..seg.len() {
                            let i = seg[k];
                            let left = usize::from(col[i] <= split.threshold);
                            seg[w] = i;
                            scratch[r] = i;
                            w += left;
                            r += 1 - left;
                        }
                        debug_assert_eq!(w, split.n_left);
                        seg[w..].copy_from_slice(&scratch[..r]);
                    }
                    let mid = start + split.n_left;
                    let left = nodes.len();
                    let right = left + 1;
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[slot] = Node::Split {
                        feature: split.feature,
                        threshold: split.threshold,
                        left,
                        right,
                    };
                    stack.push((right, mid, end));
                    stack.push((left, start, mid));
                }
            }
        }
        nodes
    }

    /// Searches `mtry` features in a seeded random order; if none of them
    /// admits a split, keeps going down the order until one does.
    fn best_split(
        &self,
        order: &[Vec<usize>],
        start: usize,
        end: usize,
        rng: &mut Rng,
    ) -> Option<SplitCandidate> {
        let mut features: Vec<usize> = (0..self.columns.len()).collect();
        features.shuffle(rng);
        let mut best: Option<SplitCandidate> = None;
        for (k, &feature) in features.iter().enumerate() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            if let Some(c) = self.scan(feature, &order[feature][start..end]) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn scan(&self, feature: usize, sorted: &[usize]) -> Option<SplitCandidate> {
        let col = self.columns[feature];
        let n = sorted.len();
        let total: f64 = sorted.iter().map(|&i| self.y[i]).sum();
        let first = self.min_node.max(1);
        if n < 2 * first {
            return None;
        }
        let mut left_sum: f64 = sorted[..first - 1].iter().map(|&i| self.y[i]).sum();
        let mut best: Option<SplitCandidate> = None;
        for pos in first..=n - first {
            left_sum += self.y[sorted[pos - 1]];
            let lo = col[sorted[pos - 1]];
            let hi = col[sorted[pos]];
            if lo == hi {
                continue;
            }
            let right_sum = total - left_sum;
            let score = left_sum * left_sum / pos as f64 + right_sum * right_sum / (n - pos) as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mid = 0.5 * (lo + hi);
                let threshold = if mid < hi { mid } else { lo };
                best = Some(SplitCandidate {
                    feature,
                    threshold,
                    n_left: pos,
                    score,
                });
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImputationMode {
    /// One forest on (T, Z, T·Z); counterfactuals by toggling T.
    Joint,
    /// One forest per arm on Z; each subject predicted by both.
    PerArm,
}

impl std::str::FromStr for ImputationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "joint" => Ok(ImputationMode::Joint),
            "per_arm" | "perarm" | "per-arm" => Ok(ImputationMode::PerArm),
            other => Err(Error::InvalidArgument(format!(
                "unknown imputation mode '{other}' (expected joint or per_arm)"
            ))),
        }
    }
}

/// Joint design matrix [T, Z, T·Z] with every subject's treatment replaced by
/// `treatment` when given.
pub fn joint_design(data: &TrialDataset, treatment: Option<bool>) -> DMatrix<f64> {
    let p = data.p();
    DMatrix::from_fn(data.n(), 2 * p + 1, |i, j| {
        let s = &data.subjects()[i];
        let t = if treatment.unwrap_or(s.treatment) { 1.0 } else { 0.0 };
        match j {
            0 => t,
            j if j <= p => s.covariates[j - 1],
            j => t * s.covariates[j - 1 - p],
        }
    })
}

fn joint_feature_names(data: &TrialDataset) -> Vec<String> {
    std::iter::once("treatment".to_string())
        .chain(data.covariate_names().iter().cloned())
        .chain(data.covariate_names().iter().map(|n| format!("treatment:{n}")))
        .collect()
}

/// Imputes Y(1) and Y(0) for every subject and returns their contrast.
///
/// `target` is the continuous response in subject order (for survival data,
/// the null-model martingale residuals).
pub fn impute_contrasts(
    data: &TrialDataset,
    target: &[f64],
    config: &ForestConfig,
    mode: ImputationMode,
    seed: u64,
) -> Result<ImputedContrasts> {
    if target.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: target.len(),
        });
    }
    let (yhat1, yhat0) = match mode {
        ImputationMode::Joint => {
            let design = joint_design(data, None);
            let forest = fit_forest(&design, target, joint_feature_names(data), config, seed)?;
            let yhat1 = forest.predict_matrix(&joint_design(data, Some(true)))?;
            let yhat0 = forest.predict_matrix(&joint_design(data, Some(false)))?;
            (yhat1, yhat0)
        }
        ImputationMode::PerArm => {
            let z = data.covariates();
            let treatments = data.treatments();
            let mut arms = Vec::with_capacity(2);
            for (arm, arm_seed) in [(true, derive_seed(seed, 1)), (false, derive_seed(seed, 0))] {
                let rows: Vec<usize> = (0..data.n()).filter(|&i| treatments[i] == arm).collect();
                if rows.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "per-arm imputation: arm T={} is empty",
                        u8::from(arm)
                    )));
                }
                let x = z.select_rows(&rows);
                let y: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
                let forest = fit_forest(&x, &y, data.covariate_names().to_vec(), config, arm_seed)?;
                arms.push(forest.predict_matrix(&z)?);
            }
            let yhat0 = arms.pop().unwrap();
            let yhat1 = arms.pop().unwrap();
            (yhat1, yhat0)
        }
    };
    ImputedContrasts::from_predictions(yhat1, yhat0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_tree(min_node: usize) -> ForestConfig {
        ForestConfig {
            n_trees: 1,
            mtry: None,
            min_node,
            bootstrap: false,
        }
    }

    #[test]
    fn constant_target_predicts_constant() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i * (j + 1)) as f64);
        let y = vec![4.5; 20];
        let f = fit_forest(&x, &y, vec!["a".into(), "b".into()], &ForestConfig::default(), 1).unwrap();
        for probe in [[0.0, 0.0], [100.0, -3.0], [7.5, 2.0]] {
            assert_eq!(f.predict(&probe).unwrap(), 4.5);
        }
    }

    #[test]
    fn one_split_matches_hand_built_tree() {
        // oracle: the only useful CART split is x <= 0.5 with leaves 0 and 1
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 1.0, 1.0]);
        let y = [0.0, 0.0, 1.0, 1.0];
        let f = fit_forest(&x, &y, vec!["x".into()], &single_tree(1), 9).unwrap();
        let preds = f.predict_matrix(&x).unwrap();
        assert_eq!(preds, vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(f.trees()[0].n_leaves(), 2);
        assert_eq!(f.trees()[0].nodes[0], Node::Split { feature: 0, threshold: 0.5, left: 1, right: 2 });
    }

    #[test]
    fn mean_of_trees() {
        let leaf = |v| RegressionTree { nodes: vec![Node::Leaf { value: v }], in_bag: vec![] };
        let forest = RegressionForest {
            trees: vec![leaf(1.0), leaf(3.0)],
            n_trees: 2,
            mtry: 1,
            min_node: 1,
            seed: 0,
            feature_names: vec!["x".into()],
        };
        assert_eq!(forest.predict(&[0.3]).unwrap(), 2.0);
        let single = RegressionForest { trees: vec![leaf(3.2)], n_trees: 1, ..forest.clone() };
        assert_eq!(single.predict(&[9.0]).unwrap(), 3.2);
        assert!(matches!(forest.predict(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn min_node_limits_leaf_size() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let f = fit_forest(&x, &y, vec!["x".into()], &single_tree(5), 3).unwrap();
        assert!(f.trees()[0].n_leaves() <= 8);
    }

    #[test]
    fn same_seed_same_forest() {
        let x = DMatrix::from_fn(50, 3, |i, j| ((i * 31 + j * 17) % 13) as f64);
        let y: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let cfg = ForestConfig { n_trees: 20, ..ForestConfig::default() };
        let a = fit_forest(&x, &y, names.clone(), &cfg, 11).unwrap();
        let b = fit_forest(&x, &y, names.clone(), &cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = fit_forest(&x, &y, names, &cfg, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_config() {
        let x = DMatrix::from_fn(5, 2, |i, j| (i + j) as f64);
        let y = [1.0; 5];
        let names = || vec!["a".to_string(), "b".to_string()];
        let bad_mtry = ForestConfig { mtry: Some(3), ..ForestConfig::default() };
        assert!(fit_forest(&x, &y, names(), &bad_mtry, 0).is_err());
        let bad_trees = ForestConfig { n_trees: 0, ..ForestConfig::default() };
        assert!(fit_forest(&x, &y, names(), &bad_trees, 0).is_err());
        let one = DMatrix::from_fn(1, 2, |_, _| 0.0);
        assert!(fit_forest(&one, &[1.0], names(), &ForestConfig::default(), 0).is_err());
    }

    #[test]
    fn default_mtry_is_third_rounded_up() {
        let c = ForestConfig::default();
        assert_eq!(c.resolved_mtry(11), 4);
        assert_eq!(c.resolved_mtry(1), 1);
        assert_eq!(c.resolved_mtry(3), 1);
    }
}
