//! Class-weighted CART decision tree over continuous features.
//!
//! Split candidates are the midpoints between consecutive distinct sorted
//! values of a feature; values `<= threshold` route left. The split chosen at
//! each node maximizes the weighted impurity decrease
//! `imp(parent) - (W_l/W) imp(left) - (W_r/W) imp(right)`, with all counts
//! weighted by the per-sample weights. Ties break to the lowest feature
//! index, then the lowest threshold.

use ndarray::ArrayView1;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::DesignMatrix;
use crate::seeding::component_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    Gini,
    Entropy,
}

impl SplitCriterion {
    pub fn parse(token: &str) -> Option<Self> {
        match token.to_ascii_lowercase().as_str() {
            "gini" => Some(SplitCriterion::Gini),
            "entropy" => Some(SplitCriterion::Entropy),
            _ => None,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            SplitCriterion::Gini => "gini",
            SplitCriterion::Entropy => "entropy",
        }
    }
}

/// Node impurity of a weighted class-count vector.
///
/// Gini: `1 - sum p_i^2`. Entropy: `-sum p_i log2 p_i` (in bits) with
/// `0 log 0 = 0`. Both are zero at a pure node and maximal at the uniform
/// distribution.
pub fn impurity(criterion: SplitCriterion, weighted_counts: &[f64]) -> Result<f64> {
    let total: f64 = weighted_counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZeroCounts);
    }
    Ok(match criterion {
        SplitCriterion::Gini => {
            let sum_sq: f64 = weighted_counts.iter().map(|&w| (w / total) * (w / total)).sum();
            1.0 - sum_sq
        }
        SplitCriterion::Entropy => weighted_counts
            .iter()
            .filter(|&&w| w > 0.0)
            .map(|&w| {
                let p = w / total;
                -p * p.log2()
            })
            .sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub criterion: SplitCriterion,
    /// `None` grows until purity or the other stopping rules fire.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_weighted_gain: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            criterion: SplitCriterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            min_weighted_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        /// Weighted category distribution, summing to one.
        distribution: Vec<f64>,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }

    fn leaf_for<'a>(&'a self, row: &[f64]) -> &'a [f64] {
        match self {
            TreeNode::Leaf { distribution } => distribution,
            TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if row[*feature] <= *threshold {
                    left.leaf_for(row)
                } else {
                    right.leaf_for(row)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTreeModel {
    pub root: TreeNode,
    pub params: TreeParams,
    pub n_categories: usize,
    pub column_names: Vec<String>,
}

impl DecisionTreeModel {
    /// Leaf distribution for one row; values exactly on a threshold route
    /// left.
    pub fn predict_proba_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.column_names.len() {
            return Err(Error::WidthMismatch {
                expected: self.column_names.len(),
                got: row.len(),
            });
        }
        Ok(self.root.leaf_for(row).to_vec())
    }

    pub fn predict_proba(&self, matrix: &DesignMatrix) -> Result<ndarray::Array2<f64>> {
        predict_with(&self.root, self.column_names.len(), self.n_categories, matrix)
    }
}

pub(crate) fn predict_with(
    root: &TreeNode,
    width: usize,
    n_categories: usize,
    matrix: &DesignMatrix,
) -> Result<ndarray::Array2<f64>> {
    if matrix.n_columns() != width {
        return Err(Error::WidthMismatch {
            expected: width,
            got: matrix.n_columns(),
        });
    }
    let mut out = ndarray::Array2::zeros((matrix.n_rows(), n_categories));
    let mut buffer = vec![0.0; width];
    for (i, row) in matrix.values.rows().into_iter().enumerate() {
        for (slot, &x) in buffer.iter_mut().zip(row.iter()) {
            *slot = x;
        }
        let dist = root.leaf_for(&buffer);
        out.row_mut(i).assign(&ndarray::ArrayView1::from(dist));
    }
    Ok(out)
}

/// Best midpoint split of one column, if any: `(threshold, weighted impurity
/// decrease)`. A constant column has no split.
pub fn best_split(
    column: &[f64],
    labels: &[usize],
    sample_weights: &[f64],
    criterion: SplitCriterion,
) -> Option<(f64, f64)> {
    let n_categories = labels.iter().copied().max()? + 1;
    let rows: Vec<usize> = (0..column.len()).collect();
    let mut scratch = SplitScratch::new(n_categories);
    let view = ArrayView1::from(column);
    scratch.best_for_column(&view, &rows, labels, sample_weights, criterion)
}

/// Per-node sampler of candidate feature subsets for forest trees. Sampled
/// subsets come back sorted so the lowest-index tie-break stays meaningful.
pub struct FeatureSubsampler {
    rng: ChaCha8Rng,
    n_features: usize,
    per_split: usize,
}

impl FeatureSubsampler {
    pub fn new(seed: u64, component: &str, index: u64, n_features: usize, per_split: usize) -> Self {
        FeatureSubsampler {
            rng: component_rng(seed, component, index),
            n_features,
            per_split: per_split.min(n_features).max(1),
        }
    }

    fn sample(&mut self) -> Vec<usize> {
        let mut all: Vec<usize> = (0..self.n_features).collect();
        let (chosen, _) = all.partial_shuffle(&mut self.rng, self.per_split);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        chosen
    }
}

/// Incremental split-scan workspace. Impurities update in O(1) per moved
/// sample using sufficient statistics (sum of squared weights for Gini,
/// `sum w log2 w` for entropy).
struct SplitScratch {
    order: Vec<usize>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl SplitScratch {
    fn new(n_categories: usize) -> Self {
        SplitScratch {
            order: Vec::new(),
            left: vec![0.0; n_categories],
            right: vec![0.0; n_categories],
        }
    }

    /// Scans the midpoints of `column` restricted to `rows`. `labels` and
    /// `weights` are indexed by row id.
    fn best_for_column(
        &mut self,
        column: &ArrayView1<'_, f64>,
        rows: &[usize],
        labels: &[usize],
        weights: &[f64],
        criterion: SplitCriterion,
    ) -> Option<(f64, f64)> {
        if rows.len() < 2 {
            return None;
        }
        self.order.clear();
        self.order.extend_from_slice(rows);
        self.order
            .sort_unstable_by(|&a, &b| column[a].partial_cmp(&column[b]).expect("finite feature"));

        self.left.iter_mut().for_each(|w| *w = 0.0);
        self.right.iter_mut().for_each(|w| *w = 0.0);
        let mut right_weight = 0.0;
        for &row in &self.order {
            self.right[labels[row]] += weights[row];
            right_weight += weights[row];
        }
        let total_weight = right_weight;
        let parent = Impurity::seed(criterion, &self.right);
        let parent_impurity = parent.value(right_weight);

        let mut left_state = Impurity::zero(criterion);
        let mut right_state = parent;
        let mut left_weight = 0.0;

        let mut best: Option<(f64, f64)> = None;
        for pair in 0..self.order.len() - 1 {
            let row = self.order[pair];
            let class = labels[row];
            let w = weights[row];
            left_state.add(class, w, &mut self.left);
            right_state.remove(class, w, &mut self.right);
            left_weight += w;
            right_weight -= w;

            let here = column[row];
            let next = column[self.order[pair + 1]];
            if here == next {
                continue;
            }
            let imp_left = left_state.value(left_weight);
            let imp_right = right_state.value(right_weight);
            let decrease = parent_impurity
                - (left_weight / total_weight) * imp_left
                - (right_weight / total_weight) * imp_right;
            // Guard against a midpoint that rounds up onto the next value,
            // which would leave the right child empty.
            let mut threshold = here + (next - here) * 0.5;
            if threshold >= next {
                threshold = here;
            }
            if best.map_or(true, |(_, d)| decrease > d) {
                best = Some((threshold, decrease));
            }
        }
        best
    }
}

/// Sufficient statistics for O(1) impurity updates.
#[derive(Clone, Copy)]
enum Impurity {
    /// Tracks `sum w_i^2`.
    Gini { sum_sq: f64 },
    /// Tracks `sum w_i log2 w_i`.
    Entropy { sum_wlog: f64 },
}

impl Impurity {
    fn zero(criterion: SplitCriterion) -> Self {
        match criterion {
            SplitCriterion::Gini => Impurity::Gini { sum_sq: 0.0 },
            SplitCriterion::Entropy => Impurity::Entropy { sum_wlog: 0.0 },
        }
    }

    fn seed(criterion: SplitCriterion, counts: &[f64]) -> Self {
        match criterion {
            SplitCriterion::Gini => Impurity::Gini {
                sum_sq: counts.iter().map(|&w| w * w).sum(),
            },
            SplitCriterion::Entropy => Impurity::Entropy {
                sum_wlog: counts.iter().filter(|&&w| w > 0.0).map(|&w| w * w.log2()).sum(),
            },
        }
    }

    fn add(&mut self, class: usize, w: f64, counts: &mut [f64]) {
        let old = counts[class];
        let new = old + w;
        counts[class] = new;
        self.update(old, new);
    }

    fn remove(&mut self, class: usize, w: f64, counts: &mut [f64]) {
        let old = counts[class];
        let new = old - w;
        counts[class] = new;
        self.update(old, new);
    }

    fn update(&mut self, old: f64, new: f64) {
        match self {
            Impurity::Gini { sum_sq } => {
                *sum_sq += new * new - old * old;
            }
            Impurity::Entropy { sum_wlog } => {
                let term = |w: f64| if w > 0.0 { w * w.log2() } else { 0.0 };
                *sum_wlog += term(new) - term(old);
            }
        }
    }

    fn value(&self, total: f64) -> f64 {
        if total <= 0.0 {
            return 0.0;
        }
        match self {
            Impurity::Gini { sum_sq } => 1.0 - sum_sq / (total * total),
            // H = log2 W - (sum w log2 w) / W
            Impurity::Entropy { sum_wlog } => (total.log2() - sum_wlog / total).max(0.0),
        }
    }
}

/// Outcome of fitting one tree: the structure plus the raw (unnormalized)
/// mean-decrease-in-impurity accumulator per feature.
pub(crate) struct FittedTree {
    pub root: TreeNode,
    pub raw_importance: Vec<f64>,
}

struct TreeBuilder<'a> {
    matrix: &'a DesignMatrix,
    labels: &'a [usize],
    weights: &'a [f64],
    params: &'a TreeParams,
    n_categories: usize,
    root_weight: f64,
    scratch: SplitScratch,
    raw_importance: Vec<f64>,
}

impl<'a> TreeBuilder<'a> {
    fn node_counts(&self, rows: &[usize]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; self.n_categories];
        let mut total = 0.0;
        for &row in rows {
            counts[self.labels[row]] += self.weights[row];
            total += self.weights[row];
        }
        (counts, total)
    }

    fn leaf(&self, counts: &[f64], total: f64) -> TreeNode {
        TreeNode::Leaf {
            distribution: counts.iter().map(|&w| w / total).collect(),
        }
    }

    fn build(
        &mut self,
        rows: Vec<usize>,
        depth: usize,
        subsampler: &mut Option<&mut FeatureSubsampler>,
    ) -> TreeNode {
        let (counts, total) = self.node_counts(&rows);
        let pure = counts.iter().filter(|&&w| w > 0.0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || rows.len() < self.params.min_samples_split {
            return self.leaf(&counts, total);
        }

        let candidates: Vec<usize> = match subsampler {
            Some(s) => s.sample(),
            None => (0..self.matrix.n_columns()).collect(),
        };

        let mut best: Option<(usize, f64, f64)> = None;
        for feature in candidates {
            let column = self.matrix.values.column(feature);
            if let Some((threshold, decrease)) = self.scratch.best_for_column(
                &column,
                &rows,
                self.labels,
                self.weights,
                self.params.criterion,
            ) {
                if best.map_or(true, |(_, _, d)| decrease > d) {
                    best = Some((feature, threshold, decrease));
                }
            }
        }

        let Some((feature, threshold, decrease)) = best else {
            return self.leaf(&counts, total);
        };
        // Zero-gain splits on an impure node are allowed (and needed: parity
        // patterns like XOR have no first split with positive gain); each
        // split still strictly shrinks both sides, so recursion terminates.
        if decrease < 0.0 || decrease < self.params.min_weighted_gain {
            return self.leaf(&counts, total);
        }

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&row| self.matrix.values[(row, feature)] <= threshold);
        debug_assert!(!left_rows.is_empty() && !right_rows.is_empty());

        self.raw_importance[feature] += (total / self.root_weight) * decrease;

        let left = self.build(left_rows, depth + 1, subsampler);
        let right = self.build(right_rows, depth + 1, subsampler);
        TreeNode::Internal {
            feature,
            threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

pub(crate) fn fit_tree_on_rows(
    matrix: &DesignMatrix,
    rows: Vec<usize>,
    labels: &[usize],
    weights: &[f64],
    n_categories: usize,
    params: &TreeParams,
    mut subsampler: Option<&mut FeatureSubsampler>,
) -> Result<FittedTree> {
    if rows.is_empty() {
        return Err(Error::InvalidParam("cannot fit a tree on zero rows".into()));
    }
    if weights.iter().any(|&w| w < 0.0) || weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidParam(
            "sample weights must be nonnegative and not all zero".into(),
        ));
    }
    let mut builder = TreeBuilder {
        matrix,
        labels,
        weights,
        params,
        n_categories,
        root_weight: rows.iter().map(|&r| weights[r]).sum(),
        scratch: SplitScratch::new(n_categories),
        raw_importance: vec![0.0; matrix.n_columns()],
    };
    let root = builder.build(rows, 0, &mut subsampler);
    Ok(FittedTree {
        root,
        raw_importance: builder.raw_importance,
    })
}

/// Fits a class-weighted CART tree by recursive greedy construction. A node
/// becomes a leaf when it is pure, at `max_depth`, below `min_samples_split`,
/// when no feature admits a valid split, or when the best weighted decrease
/// falls below `min_weighted_gain`.
pub fn fit_tree(
    matrix: &DesignMatrix,
    sample_weights: &[f64],
    params: &TreeParams,
    subsampler: Option<&mut FeatureSubsampler>,
) -> Result<DecisionTreeModel> {
    let n_categories = matrix.labels.iter().copied().max().map_or(0, |m| m + 1);
    let fitted = fit_tree_on_rows(
        matrix,
        (0..matrix.n_rows()).collect(),
        &matrix.labels,
        sample_weights,
        n_categories,
        params,
        subsampler,
    )?;
    Ok(DecisionTreeModel {
        root: fitted.root,
        params: *params,
        n_categories,
        column_names: matrix.column_names.clone(),
    })
}
