//! Random forest: bootstrapped, feature-subsampled CART trees with
//! mean-decrease-in-impurity feature importances, plus grid search over
//! `(n_estimators, criterion)` with stratified cross-validation.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{accuracy_scores, f1_scores, PredictionSet};
use crate::preprocess::DesignMatrix;
use crate::sampling::FoldPlan;
use crate::seeding::{child_seed, component_rng};
use crate::tree::{
    fit_tree_on_rows, predict_with, FeatureSubsampler, SplitCriterion, TreeNode, TreeParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub criterion: SplitCriterion,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features searched per node; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    /// Draw each tree's rows with replacement (size n).
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            criterion: SplitCriterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            features_per_split: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    fn tree_params(&self) -> TreeParams {
        TreeParams {
            criterion: self.criterion,
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_weighted_gain: 0.0,
        }
    }

    pub fn resolved_features_per_split(&self, n_features: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub trees: Vec<TreeNode>,
    pub params: ForestParams,
    /// Mean decrease in impurity per feature; sums to 1 when any tree split.
    pub importances: Vec<f64>,
    pub n_categories: usize,
    pub column_names: Vec<String>,
}

impl RandomForestModel {
    /// Unweighted mean of the member trees' leaf distributions.
    pub fn predict_proba_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.column_names.len() {
            return Err(Error::WidthMismatch {
                expected: self.column_names.len(),
                got: row.len(),
            });
        }
        let mut mean = vec![0.0; self.n_categories];
        for tree in &self.trees {
            let mut node = tree;
            loop {
                match node {
                    TreeNode::Leaf { distribution } => {
                        for (m, &p) in mean.iter_mut().zip(distribution) {
                            *m += p;
                        }
                        break;
                    }
                    TreeNode::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        node = if row[*feature] <= *threshold { left } else { right };
                    }
                }
            }
        }
        let scale = 1.0 / self.trees.len() as f64;
        mean.iter_mut().for_each(|m| *m *= scale);
        Ok(mean)
    }

    pub fn predict_proba(&self, matrix: &DesignMatrix) -> Result<Array2<f64>> {
        if matrix.n_columns() != self.column_names.len() {
            return Err(Error::WidthMismatch {
                expected: self.column_names.len(),
                got: matrix.n_columns(),
            });
        }
        let mut sum: Option<Array2<f64>> = None;
        for tree in &self.trees {
            let probs = predict_with(tree, self.column_names.len(), self.n_categories, matrix)?;
            match &mut sum {
                Some(acc) => *acc += &probs,
                None => sum = Some(probs),
            }
        }
        let mut mean = sum.expect("forest has at least one tree");
        mean /= self.trees.len() as f64;
        Ok(mean)
    }
}

/// Mean-decrease-in-impurity importances of a fitted forest. Never-split
/// features have importance exactly zero; an all-leaf forest yields the
/// all-zero vector.
pub fn feature_importances(model: &RandomForestModel) -> &[f64] {
    &model.importances
}

/// Fits `n_estimators` trees. Tree `t` draws its bootstrap rows and feature
/// subsets from seeds derived as `(seed, t)`, so the result is independent of
/// scheduling; trees are fitted in parallel and aggregated in index order.
pub fn fit_forest(
    matrix: &DesignMatrix,
    sample_weights: &[f64],
    params: &ForestParams,
) -> Result<RandomForestModel> {
    if params.n_estimators == 0 {
        return Err(Error::InvalidParam("n_estimators must be >= 1".into()));
    }
    let n = matrix.n_rows();
    if n == 0 {
        return Err(Error::InvalidParam("cannot fit a forest on zero rows".into()));
    }
    let d = matrix.n_columns();
    let per_split = params.resolved_features_per_split(d);
    if let Some(m) = params.features_per_split {
        if m == 0 || m > d {
            return Err(Error::InvalidParam(format!(
                "features_per_split must lie in [1, {d}], got {m}"
            )));
        }
    }
    let n_categories = matrix.labels.iter().copied().max().map_or(0, |m| m + 1);
    let tree_params = params.tree_params();

    let fitted: Result<Vec<_>> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let t = t as u64;
            let rows: Vec<usize> = if params.bootstrap {
                let mut rng = component_rng(params.seed, "bootstrap", t);
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            // With the full feature set every node scans all features anyway;
            // skipping the sampler keeps the fit identical to a plain tree.
            let mut subsampler = (per_split < d).then(|| {
                FeatureSubsampler::new(params.seed, "tree_features", t, d, per_split)
            });
            fit_tree_on_rows(
                matrix,
                rows,
                &matrix.labels,
                sample_weights,
                n_categories,
                &tree_params,
                subsampler.as_mut(),
            )
        })
        .collect();
    let fitted = fitted?;

    let importances = aggregate_importances(fitted.iter().map(|f| f.raw_importance.as_slice()), d);
    Ok(RandomForestModel {
        trees: fitted.into_iter().map(|f| f.root).collect(),
        params: *params,
        importances,
        n_categories,
        column_names: matrix.column_names.clone(),
    })
}

/// Per-tree raw vectors are normalized to sum one, averaged across trees,
/// then renormalized. Trees that never split contribute zero vectors.
fn aggregate_importances<'a>(
    per_tree: impl Iterator<Item = &'a [f64]>,
    n_features: usize,
) -> Vec<f64> {
    let mut mean = vec![0.0; n_features];
    let mut n_trees = 0usize;
    for raw in per_tree {
        n_trees += 1;
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            for (m, &value) in mean.iter_mut().zip(raw) {
                *m += value / total;
            }
        }
    }
    if n_trees > 0 {
        mean.iter_mut().for_each(|m| *m /= n_trees as f64);
    }
    let total: f64 = mean.iter().sum();
    if total > 0.0 {
        mean.iter_mut().for_each(|m| *m /= total);
    }
    mean
}

/// Cross-validation scoring metric for grid search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    Accuracy,
    F1Micro,
    F1Weighted,
}

impl ScoreMetric {
    pub fn parse(token: &str) -> Option<Self> {
        match token.to_ascii_lowercase().as_str() {
            "accuracy" => Some(ScoreMetric::Accuracy),
            "f1_micro" => Some(ScoreMetric::F1Micro),
            "f1_weighted" => Some(ScoreMetric::F1Weighted),
            _ => None,
        }
    }

    fn evaluate(self, pred: &PredictionSet) -> f64 {
        match self {
            ScoreMetric::Accuracy => accuracy_scores(pred).0,
            ScoreMetric::F1Micro => f1_scores(pred).micro,
            ScoreMetric::F1Weighted => f1_scores(pred).weighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_estimators: Vec<usize>,
    pub criteria: Vec<SplitCriterion>,
}

impl GridSpec {
    /// The reference grid: estimators 80..=140 step 20, both criteria.
    pub fn reference() -> Self {
        GridSpec {
            n_estimators: vec![80, 100, 120, 140],
            criteria: vec![SplitCriterion::Gini, SplitCriterion::Entropy],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub n_estimators: usize,
    pub criterion: SplitCriterion,
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    pub score_metric: ScoreMetric,
    pub rows: Vec<GridRow>,
    /// Index into `rows` of the winning configuration.
    pub best: usize,
}

impl GridSearchReport {
    pub fn best_row(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

/// Exhaustive grid search: each configuration is fitted on k-1 folds and
/// scored on the held-out fold. Ties on mean score break to the smaller
/// estimator count, then Gini before Entropy.
pub fn grid_search(
    matrix: &DesignMatrix,
    sample_weights: &[f64],
    grid: &GridSpec,
    base: &ForestParams,
    folds: &FoldPlan,
    score: ScoreMetric,
) -> Result<GridSearchReport> {
    if grid.n_estimators.is_empty() || grid.criteria.is_empty() {
        return Err(Error::InvalidParam("grid must be nonempty".into()));
    }
    if folds.fold_of_row.len() != matrix.n_rows() {
        return Err(Error::InvalidParam(format!(
            "fold plan covers {} rows, matrix has {}",
            folds.fold_of_row.len(),
            matrix.n_rows()
        )));
    }

    let mut rows = Vec::with_capacity(grid.n_estimators.len() * grid.criteria.len());
    let mut config_idx = 0u64;
    for &n_estimators in &grid.n_estimators {
        for &criterion in &grid.criteria {
            let mut fold_scores = Vec::with_capacity(folds.k);
            for fold in 0..folds.k {
                let train_rows = folds.train_rows(fold);
                let val_rows = folds.validation_rows(fold);
                if train_rows.is_empty() || val_rows.is_empty() {
                    fold_scores.push(f64::NAN);
                    continue;
                }
                let sub = submatrix(matrix, &train_rows);
                let sub_weights: Vec<f64> =
                    train_rows.iter().map(|&r| sample_weights[r]).collect();
                let params = ForestParams {
                    n_estimators,
                    criterion,
                    seed: child_seed(base.seed, "gridsearch", config_idx * folds.k as u64 + fold as u64),
                    ..*base
                };
                let forest = fit_forest(&sub, &sub_weights, &params)?;
                let val = submatrix(matrix, &val_rows);
                let probs = forest.predict_proba(&val)?;
                let pred = PredictionSet::new(val.labels.clone(), probs)?;
                fold_scores.push(score.evaluate(&pred));
            }
            let finite: Vec<f64> = fold_scores.iter().copied().filter(|s| s.is_finite()).collect();
            let mean_score = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
            rows.push(GridRow {
                n_estimators,
                criterion,
                fold_scores,
                mean_score,
            });
            config_idx += 1;
        }
    }

    let best = (0..rows.len())
        .min_by(|&a, &b| {
            let (ra, rb) = (&rows[a], &rows[b]);
            rb.mean_score
                .partial_cmp(&ra.mean_score)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ra.n_estimators.cmp(&rb.n_estimators))
                .then(criterion_rank(ra.criterion).cmp(&criterion_rank(rb.criterion)))
        })
        .expect("grid is nonempty");

    Ok(GridSearchReport {
        score_metric: score,
        rows,
        best,
    })
}

fn criterion_rank(criterion: SplitCriterion) -> u8 {
    match criterion {
        SplitCriterion::Gini => 0,
        SplitCriterion::Entropy => 1,
    }
}

/// Row-subset copy of a design matrix.
pub fn submatrix(matrix: &DesignMatrix, rows: &[usize]) -> DesignMatrix {
    let values = matrix.values.select(ndarray::Axis(0), rows);
    DesignMatrix {
        values,
        row_ids: rows.iter().map(|&r| matrix.row_ids[r].clone()).collect(),
        labels: rows.iter().map(|&r| matrix.labels[r]).collect(),
        column_names: matrix.column_names.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stratified_kfold;
    use crate::tree::fit_tree;

    fn blob_matrix(n_per_class: usize, seed: u64) -> DesignMatrix {
        // two well-separated blobs in 3 features
        let mut rng = component_rng(seed, "test_blobs", 0);
        let n = n_per_class * 2;
        let mut values = Array2::zeros((n, 3));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            let center = if class == 0 { 0.2 } else { 0.8 };
            for j in 0..3 {
                values[(i, j)] = center + 0.1 * (rng.gen::<f64>() - 0.5);
            }
            labels.push(class);
        }
        DesignMatrix {
            values,
            row_ids: (0..n).map(|i| format!("r{i}")).collect(),
            labels,
            column_names: vec!["a".into(), "b".into(), "c".into()],
        }
    }

    #[test]
    fn single_tree_forest_reduces_to_decision_tree() {
        let m = blob_matrix(20, 1);
        let w = vec![1.0; m.n_rows()];
        let params = ForestParams {
            n_estimators: 1,
            bootstrap: false,
            features_per_split: Some(3),
            seed: 5,
            ..ForestParams::default()
        };
        let forest = fit_forest(&m, &w, &params).unwrap();
        let tree = fit_tree(&m, &w, &TreeParams::default(), None).unwrap();
        assert_eq!(forest.predict_proba(&m).unwrap(), tree.predict_proba(&m).unwrap());
    }

    #[test]
    fn same_seed_means_identical_forests() {
        let m = blob_matrix(15, 2);
        let w = vec![1.0; m.n_rows()];
        let params = ForestParams {
            n_estimators: 7,
            seed: 99,
            ..ForestParams::default()
        };
        let f1 = fit_forest(&m, &w, &params).unwrap();
        let f2 = fit_forest(&m, &w, &params).unwrap();
        assert_eq!(f1.trees, f2.trees);
        assert_eq!(f1.importances, f2.importances);
    }

    #[test]
    fn mean_of_two_pure_trees() {
        let model = RandomForestModel {
            trees: vec![
                TreeNode::Leaf { distribution: vec![1.0, 0.0] },
                TreeNode::Leaf { distribution: vec![0.0, 1.0] },
            ],
            params: ForestParams::default(),
            importances: vec![0.0],
            n_categories: 2,
            column_names: vec!["x".into()],
        };
        assert_eq!(model.predict_proba_row(&[0.3]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn probabilities_are_normalized_on_random_rows() {
        let m = blob_matrix(25, 3);
        let w = vec![1.0; m.n_rows()];
        let params = ForestParams {
            n_estimators: 12,
            seed: 4,
            ..ForestParams::default()
        };
        let forest = fit_forest(&m, &w, &params).unwrap();
        let mut rng = component_rng(11, "rows", 0);
        for _ in 0..1000 {
            let row = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let probs = forest.predict_proba_row(&row).unwrap();
            assert!(probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn importances_concentrate_on_informative_feature() {
        // only feature 0 carries signal
        let mut rng = component_rng(21, "informative", 0);
        let n = 200;
        let mut values = Array2::zeros((n, 4));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % 2;
            values[(i, 0)] = class as f64 + 0.05 * (rng.gen::<f64>() - 0.5);
            for j in 1..3 {
                values[(i, j)] = rng.gen::<f64>();
            }
            values[(i, 3)] = 0.5; // constant, never splittable
            labels.push(class);
        }
        let m = DesignMatrix {
            values,
            row_ids: (0..n).map(|i| format!("r{i}")).collect(),
            labels,
            column_names: (0..4).map(|i| format!("f{i}")).collect(),
        };
        let w = vec![1.0; n];
        let params = ForestParams {
            n_estimators: 30,
            seed: 8,
            features_per_split: Some(2),
            ..ForestParams::default()
        };
        let forest = fit_forest(&m, &w, &params).unwrap();
        let imp = feature_importances(&forest);
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(imp[0] > 0.9, "informative importance {}", imp[0]);
        assert_eq!(imp[3], 0.0);
    }

    #[test]
    fn all_leaf_forest_has_zero_importances() {
        let m = blob_matrix(10, 6);
        let w = vec![1.0; m.n_rows()];
        let params = ForestParams {
            n_estimators: 3,
            max_depth: Some(0),
            seed: 1,
            ..ForestParams::default()
        };
        let forest = fit_forest(&m, &w, &params).unwrap();
        assert!(forest.importances.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_enumerates_all_configurations() {
        let m = blob_matrix(10, 7);
        let w = vec![1.0; m.n_rows()];
        let folds = stratified_kfold(&m.labels, 2, 3).unwrap();
        let grid = GridSpec {
            n_estimators: vec![2, 3],
            criteria: vec![SplitCriterion::Gini, SplitCriterion::Entropy],
        };
        let base = ForestParams { seed: 13, ..ForestParams::default() };
        let report =
            grid_search(&m, &w, &grid, &base, &folds, ScoreMetric::F1Weighted).unwrap();
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert_eq!(row.fold_scores.len(), 2);
        }
    }

    #[test]
    fn grid_single_configuration_wins() {
        let m = blob_matrix(8, 9);
        let w = vec![1.0; m.n_rows()];
        let folds = stratified_kfold(&m.labels, 2, 3).unwrap();
        let grid = GridSpec {
            n_estimators: vec![3],
            criteria: vec![SplitCriterion::Entropy],
        };
        let base = ForestParams { seed: 13, ..ForestParams::default() };
        let report = grid_search(&m, &w, &grid, &base, &folds, ScoreMetric::Accuracy).unwrap();
        assert_eq!(report.best_row().n_estimators, 3);
        assert_eq!(report.best_row().criterion, SplitCriterion::Entropy);
    }

    #[test]
    fn grid_ties_break_to_smaller_estimators_then_gini() {
        // perfectly separable data scores 1.0 for every configuration
        let n = 24;
        let values = Array2::from_shape_fn((n, 2), |(i, _)| (i % 2) as f64);
        let m = DesignMatrix {
            values,
            row_ids: (0..n).map(|i| format!("r{i}")).collect(),
            labels: (0..n).map(|i| i % 2).collect(),
            column_names: vec!["a".into(), "b".into()],
        };
        let w = vec![1.0; n];
        let folds = stratified_kfold(&m.labels, 3, 1).unwrap();
        let grid = GridSpec {
            n_estimators: vec![5, 2],
            criteria: vec![SplitCriterion::Entropy, SplitCriterion::Gini],
        };
        let base = ForestParams { seed: 17, ..ForestParams::default() };
        let report = grid_search(&m, &w, &grid, &base, &folds, ScoreMetric::Accuracy).unwrap();
        assert!(report.rows.iter().all(|r| r.mean_score == 1.0));
        assert_eq!(report.best_row().n_estimators, 2);
        assert_eq!(report.best_row().criterion, SplitCriterion::Gini);
    }
}
