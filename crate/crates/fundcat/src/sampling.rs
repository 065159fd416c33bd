//! Stratified splitting, k-fold plans, holdout carving and balanced class
//! weights.
//!
//! All functions are pure in `(labels, parameters, seed)`. Per-category
//! shuffles draw from [`crate::seeding::component_rng`] so results do not
//! depend on iteration order or scheduling.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding::component_rng;

/// Disjoint train/test index lists covering all rows exactly once, with the
/// per-category test share within one sample of the requested fraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratifiedSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Per-row fold assignment; within each category fold sizes differ by at
/// most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub fold_of_row: Vec<usize>,
}

impl FoldPlan {
    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] == fold)
            .collect()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of_row.len())
            .filter(|&i| self.fold_of_row[i] != fold)
            .collect()
    }
}

/// Balanced class weights `w_i = n / (C * n_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    /// Weight per category index; categories absent from the labels get 0.
    pub weights: Vec<f64>,
    pub n: usize,
    /// Number of categories actually present.
    pub n_classes: usize,
    pub counts: Vec<usize>,
}

impl ClassWeights {
    /// Expands class weights into one weight per labeled sample.
    pub fn sample_weights(&self, labels: &[usize]) -> Vec<f64> {
        labels.iter().map(|&c| self.weights[c]).collect()
    }
}

fn category_indices(labels: &[usize]) -> Vec<Vec<usize>> {
    let n_categories = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut buckets = vec![Vec::new(); n_categories];
    for (i, &c) in labels.iter().enumerate() {
        buckets[c].push(i);
    }
    buckets
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn carve_stratified(
    labels: &[usize],
    frac: f64,
    seed: u64,
    component: &str,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidParam(format!(
            "fraction must lie in (0, 1), got {frac}"
        )));
    }
    let mut kept = Vec::new();
    let mut carved = Vec::new();
    for (category, mut members) in category_indices(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() == 1 {
            return Err(Error::SingletonCategory(category.to_string()));
        }
        let mut rng = component_rng(seed, component, category as u64);
        members.shuffle(&mut rng);
        // Round half up with a floor of one carved sample, and keep at least
        // one member on the other side so every category stays trainable.
        let n_carved = round_half_up(frac * members.len() as f64)
            .max(1)
            .min(members.len() - 1);
        carved.extend_from_slice(&members[..n_carved]);
        kept.extend_from_slice(&members[n_carved..]);
    }
    kept.sort_unstable();
    carved.sort_unstable();
    Ok((kept, carved))
}

/// Seeded stratified train/test split.
pub fn stratified_split(labels: &[usize], test_frac: f64, seed: u64) -> Result<StratifiedSplit> {
    let (train, test) = carve_stratified(labels, test_frac, seed, "stratified_split")?;
    Ok(StratifiedSplit { train, test, seed })
}

/// Seeded stratified k-fold plan. Within each category members are shuffled
/// then dealt round-robin; categories with fewer than `k` members simply
/// appear in only some folds. The dealing start rotates with the category
/// index so leftover samples do not all land in fold zero.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParam(format!("fold count must be >= 2, got {k}")));
    }
    let mut fold_of_row = vec![0usize; labels.len()];
    for (category, mut members) in category_indices(labels).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let mut rng = component_rng(seed, "stratified_kfold", category as u64);
        members.shuffle(&mut rng);
        for (j, &row) in members.iter().enumerate() {
            fold_of_row[row] = (j + category) % k;
        }
    }
    Ok(FoldPlan { k, fold_of_row })
}

/// Balanced class weights over the observed labels.
pub fn class_weights(labels: &[usize]) -> Result<ClassWeights> {
    if labels.is_empty() {
        return Err(Error::InvalidParam("cannot weight an empty label list".into()));
    }
    let n_categories = labels.iter().copied().max().unwrap() + 1;
    let mut counts = vec![0usize; n_categories];
    for &c in labels {
        counts[c] += 1;
    }
    let n = labels.len();
    let n_classes = counts.iter().filter(|&&c| c > 0).count();
    let weights = counts
        .iter()
        .map(|&n_i| {
            if n_i == 0 {
                0.0
            } else {
                n as f64 / (n_classes as f64 * n_i as f64)
            }
        })
        .collect();
    Ok(ClassWeights {
        weights,
        n,
        n_classes,
        counts,
    })
}

/// Stratified carve-out of `frac` of the given training rows, for validation.
/// Returns `(fit, validation)` index lists (both subsets of `train`, sorted).
pub fn holdout(
    train: &[usize],
    labels: &[usize],
    frac: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let sub_labels: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let (kept, carved) = carve_stratified(&sub_labels, frac, seed, "holdout")?;
    Ok((
        kept.into_iter().map(|i| train[i]).collect(),
        carved.into_iter().map(|i| train[i]).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(spec: &[(usize, usize)]) -> Vec<usize> {
        // (category, count) pairs expanded in order
        let mut out = Vec::new();
        for &(cat, count) in spec {
            out.extend(std::iter::repeat(cat).take(count));
        }
        out
    }

    #[test]
    fn split_respects_per_category_proportions() {
        let y = labels(&[(0, 8), (1, 4)]);
        let split = stratified_split(&y, 0.25, 7).unwrap();
        let test_counts = [
            split.test.iter().filter(|&&i| y[i] == 0).count(),
            split.test.iter().filter(|&&i| y[i] == 1).count(),
        ];
        assert_eq!(test_counts, [2, 1]);
        assert_eq!(split.train.len() + split.test.len(), y.len());
    }

    #[test]
    fn split_is_disjoint_and_covering() {
        let y = labels(&[(0, 30), (1, 12), (2, 5)]);
        let split = stratified_split(&y, 0.25, 99).unwrap();
        let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
    }

    #[test]
    fn different_seeds_same_counts_different_members() {
        let y = labels(&[(0, 20), (1, 10)]);
        let a = stratified_split(&y, 0.25, 1).unwrap();
        let b = stratified_split(&y, 0.25, 2).unwrap();
        assert_eq!(a.test.len(), b.test.len());
        assert_ne!(a.test, b.test);
        // same seed reproduces exactly
        assert_eq!(a, stratified_split(&y, 0.25, 1).unwrap());
    }

    #[test]
    fn split_rejects_singleton_category() {
        let y = labels(&[(0, 5), (1, 1)]);
        let err = stratified_split(&y, 0.25, 0).unwrap_err();
        assert!(matches!(err, Error::SingletonCategory(_)), "{err}");
    }

    #[test]
    fn kfold_exact_division_and_small_categories() {
        let y = labels(&[(0, 10), (1, 3)]);
        let plan = stratified_kfold(&y, 5, 3).unwrap();
        for fold in 0..5 {
            let rows = plan.validation_rows(fold);
            assert_eq!(rows.iter().filter(|&&i| y[i] == 0).count(), 2);
        }
        // the 3-member category appears in exactly 3 folds, once each
        let mut fold_hits = vec![0usize; 5];
        for (i, &c) in y.iter().enumerate() {
            if c == 1 {
                fold_hits[plan.fold_of_row[i]] += 1;
            }
        }
        assert_eq!(fold_hits.iter().filter(|&&h| h == 1).count(), 3);
        assert_eq!(fold_hits.iter().sum::<usize>(), 3);
    }

    #[test]
    fn class_weights_balanced_case_is_all_ones() {
        let y = labels(&[(0, 3), (1, 3), (2, 3)]);
        let w = class_weights(&y).unwrap();
        assert_eq!(w.weights, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn class_weights_formula() {
        let y = labels(&[(0, 6), (1, 4), (2, 2)]);
        let w = class_weights(&y).unwrap();
        assert!((w.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w.weights[1] - 1.0).abs() < 1e-12);
        assert!((w.weights[2] - 2.0).abs() < 1e-12);
        let total: f64 = w
            .counts
            .iter()
            .zip(&w.weights)
            .map(|(&n_i, &w_i)| n_i as f64 * w_i)
            .sum();
        assert!((total - w.n as f64).abs() < 1e-9);
    }

    #[test]
    fn class_weights_near_balance_point() {
        // a category holding n/C members gets weight 1 by construction
        let mut y = vec![0; 202];
        for c in 1..51 {
            y.extend(std::iter::repeat(c).take(198));
        }
        let w = class_weights(&y).unwrap();
        let n = y.len() as f64;
        assert!((w.weights[0] - n / (51.0 * 202.0)).abs() < 1e-12);
        assert!((w.weights[0] - 1.0).abs() < 0.03);
    }

    #[test]
    fn holdout_carves_one_per_category_at_ten_percent() {
        let y: Vec<usize> = (0..10).flat_map(|c| std::iter::repeat(c).take(10)).collect();
        let train: Vec<usize> = (0..100).collect();
        let (fit, val) = holdout(&train, &y, 0.10, 11).unwrap();
        assert_eq!(val.len(), 10);
        assert_eq!(fit.len(), 90);
        for c in 0..10 {
            assert_eq!(val.iter().filter(|&&i| y[i] == c).count(), 1);
        }
        // determinism
        assert_eq!(holdout(&train, &y, 0.10, 11).unwrap(), (fit, val));
    }

    #[test]
    fn holdout_maps_back_to_original_indices() {
        let y = labels(&[(0, 4), (1, 4)]);
        let train = vec![1, 2, 3, 5, 6, 7];
        let (fit, val) = holdout(&train, &y, 0.34, 5).unwrap();
        for &i in fit.iter().chain(&val) {
            assert!(train.contains(&i));
        }
        assert_eq!(fit.len() + val.len(), train.len());
    }
}
