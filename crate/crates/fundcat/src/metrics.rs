//! Evaluation suite for imbalanced multi-class predictions: accuracy and
//! balanced accuracy, the F1 family (micro/macro/weighted), one-vs-rest ROC
//! curves with micro/macro aggregation, row-normalized confusion matrices and
//! top-k accuracy.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground truth plus a probability matrix; `y_pred` is the argmax of each
/// score row with the lowest index winning ties.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub y_true: Vec<usize>,
    pub scores: Array2<f64>,
    pub y_pred: Vec<usize>,
}

impl PredictionSet {
    pub fn new(y_true: Vec<usize>, scores: Array2<f64>) -> Result<Self> {
        if y_true.is_empty() || y_true.len() != scores.nrows() {
            return Err(Error::InvalidParam(format!(
                "scores have {} rows for {} labels",
                scores.nrows(),
                y_true.len()
            )));
        }
        let n_categories = scores.ncols();
        if let Some(&bad) = y_true.iter().find(|&&c| c >= n_categories) {
            return Err(Error::InvalidParam(format!(
                "label {bad} out of range for {n_categories} score columns"
            )));
        }
        for (i, row) in scores.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidParam(format!(
                    "score row {i} sums to {sum}, expected 1"
                )));
            }
        }
        let y_pred = scores.rows().into_iter().map(|row| argmax(&row)).collect();
        Ok(PredictionSet {
            y_true,
            scores,
            y_pred,
        })
    }

    pub fn n(&self) -> usize {
        self.y_true.len()
    }

    pub fn n_categories(&self) -> usize {
        self.scores.ncols()
    }
}

fn argmax(row: &ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Counts `M[i][j]` of true category `i` predicted as `j`, plus the
/// row-normalized form (zero-support rows stay all-zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
    pub normalized: Array2<f64>,
}

pub fn confusion(pred: &PredictionSet) -> ConfusionMatrix {
    let c = pred.n_categories();
    let mut counts = Array2::<u64>::zeros((c, c));
    for (&t, &p) in pred.y_true.iter().zip(&pred.y_pred) {
        counts[(t, p)] += 1;
    }
    let mut normalized = Array2::<f64>::zeros((c, c));
    for i in 0..c {
        let support: u64 = counts.row(i).sum();
        if support > 0 {
            for j in 0..c {
                normalized[(i, j)] = counts[(i, j)] as f64 / support as f64;
            }
        }
    }
    ConfusionMatrix { counts, normalized }
}

/// `(accuracy, balanced_accuracy)`: the plain fraction correct and the
/// unweighted mean of per-category recalls over supported categories.
pub fn accuracy_scores(pred: &PredictionSet) -> (f64, f64) {
    let n = pred.n() as f64;
    let correct = pred
        .y_true
        .iter()
        .zip(&pred.y_pred)
        .filter(|(t, p)| t == p)
        .count() as f64;

    let cm = confusion(pred);
    let mut recall_sum = 0.0;
    let mut supported = 0usize;
    for i in 0..pred.n_categories() {
        let support: u64 = cm.counts.row(i).sum();
        if support > 0 {
            recall_sum += cm.counts[(i, i)] as f64 / support as f64;
            supported += 1;
        }
    }
    let balanced = if supported > 0 { recall_sum / supported as f64 } else { 0.0 };
    (correct / n, balanced)
}

/// One-vs-rest counting stats for a single category. `recall` and `f1` are
/// `None` when the category has no support (excluded from macro means and
/// reported as undefined).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassStats {
    pub category: usize,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub support: u64,
    pub precision: f64,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
    pub weighted: f64,
    pub per_class: Vec<PerClassStats>,
}

/// Micro pools one-vs-rest counts across categories (equal to accuracy for
/// single-label predictions); macro is the unweighted mean of per-category F1
/// over supported categories; weighted is the support-weighted mean.
pub fn f1_scores(pred: &PredictionSet) -> F1Scores {
    let cm = confusion(pred);
    let c = pred.n_categories();

    let mut per_class = Vec::with_capacity(c);
    let (mut tp_pool, mut fp_pool, mut fn_pool) = (0u64, 0u64, 0u64);
    let mut macro_sum = 0.0;
    let mut weighted_sum = 0.0;
    let mut supported = 0u64;
    let mut support_total = 0u64;

    for i in 0..c {
        let tp = cm.counts[(i, i)];
        let support: u64 = cm.counts.row(i).sum();
        let predicted: u64 = cm.counts.column(i).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        tp_pool += tp;
        fp_pool += fp;
        fn_pool += fn_;

        let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let (recall, f1) = if support > 0 {
            let r = tp as f64 / support as f64;
            let f = if precision + r > 0.0 {
                2.0 * precision * r / (precision + r)
            } else {
                0.0
            };
            macro_sum += f;
            weighted_sum += support as f64 * f;
            supported += 1;
            support_total += support;
            (Some(r), Some(f))
        } else {
            (None, None)
        };
        per_class.push(PerClassStats {
            category: i,
            tp,
            fp,
            fn_,
            support,
            precision,
            recall,
            f1,
        });
    }

    let micro_precision = tp_pool as f64 / (tp_pool + fp_pool) as f64;
    let micro_recall = tp_pool as f64 / (tp_pool + fn_pool) as f64;
    let micro = if micro_precision + micro_recall > 0.0 {
        2.0 * micro_precision * micro_recall / (micro_precision + micro_recall)
    } else {
        0.0
    };

    F1Scores {
        micro,
        macro_: if supported > 0 { macro_sum / supported as f64 } else { 0.0 },
        weighted: if support_total > 0 { weighted_sum / support_total as f64 } else { 0.0 },
        per_class,
    }
}

/// One ROC curve: descending thresholds with monotone (fpr, tpr) points
/// anchored at (0,0) and (1,1), and the trapezoidal area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

/// Binary ROC curve. Ties are processed as one block, which makes the
/// trapezoidal area equal the probability of ranking a random positive above
/// a random negative, with half credit for ties.
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<RocCurve> {
    let p = labels.iter().filter(|&&l| l).count();
    let n = labels.len() - p;
    if p == 0 {
        return Err(Error::UndefinedRoc("positive"));
    }
    if n == 0 {
        return Err(Error::UndefinedRoc("negative"));
    }

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        thresholds.push(score);
        fpr.push(fp as f64 / n as f64);
        tpr.push(tp as f64 / p as f64);
    }

    let auc = trapezoid(&fpr, &tpr);
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc,
    })
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    let mut area = 0.0;
    for i in 1..x.len() {
        area += (x[i] - x[i - 1]) * (y[i] + y[i - 1]) * 0.5;
    }
    area
}

/// Micro/macro ROC aggregation over one-vs-rest curves.
#[derive(Debug, Clone)]
pub struct RocAggregate {
    pub auc_micro: f64,
    pub auc_macro: f64,
    pub micro: RocCurve,
    /// Mean TPR interpolated on the union FPR grid; thresholds are NaN
    /// placeholders since no single cutoff exists.
    pub macro_curve: RocCurve,
    /// One curve per category; `None` where the category lacks a positive or
    /// a negative sample.
    pub per_class: Vec<Option<RocCurve>>,
    /// Categories skipped from the macro average.
    pub skipped: Vec<usize>,
}

/// Builds per-category one-vs-rest curves from the score columns, the micro
/// curve from the flattened one-hot truth/score matrices, and the macro
/// average over categories with at least one positive and one negative.
pub fn aggregate_roc(pred: &PredictionSet) -> Result<RocAggregate> {
    let c = pred.n_categories();
    if c < 2 {
        return Err(Error::InvalidParam(
            "ROC aggregation needs at least 2 categories".into(),
        ));
    }

    let mut per_class = Vec::with_capacity(c);
    let mut skipped = Vec::new();
    for class in 0..c {
        let labels: Vec<bool> = pred.y_true.iter().map(|&t| t == class).collect();
        let scores: Vec<f64> = pred.scores.column(class).to_vec();
        match roc_curve(&labels, &scores) {
            Ok(curve) => per_class.push(Some(curve)),
            Err(Error::UndefinedRoc(_)) => {
                per_class.push(None);
                skipped.push(class);
            }
            Err(other) => return Err(other),
        }
    }

    // micro: flatten the n x C one-hot truth and score matrices
    let mut flat_labels = Vec::with_capacity(pred.n() * c);
    let mut flat_scores = Vec::with_capacity(pred.n() * c);
    for (i, row) in pred.scores.rows().into_iter().enumerate() {
        for (class, &score) in row.iter().enumerate() {
            flat_labels.push(pred.y_true[i] == class);
            flat_scores.push(score);
        }
    }
    let micro = roc_curve(&flat_labels, &flat_scores)?;

    let supported: Vec<&RocCurve> = per_class.iter().flatten().collect();
    let auc_macro = if supported.is_empty() {
        f64::NAN
    } else {
        supported.iter().map(|curve| curve.auc).sum::<f64>() / supported.len() as f64
    };
    let macro_curve = macro_mean_curve(&supported);

    Ok(RocAggregate {
        auc_micro: micro.auc,
        auc_macro,
        micro,
        macro_curve,
        per_class,
        skipped,
    })
}

/// Linear interpolation of each curve's TPR on the union FPR grid, averaged.
/// At a grid point where a member curve jumps vertically, the upper TPR is
/// used. The result is a plotting artifact: its own trapezoidal area can
/// differ slightly from the mean of the member AUCs wherever members jump,
/// which is why `auc_macro` is always the mean of per-category AUCs and never
/// read off this curve.
fn macro_mean_curve(curves: &[&RocCurve]) -> RocCurve {
    if curves.is_empty() {
        return RocCurve {
            thresholds: vec![],
            fpr: vec![],
            tpr: vec![],
            auc: f64::NAN,
        };
    }
    let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.fpr.iter().copied()).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite fpr"));
    grid.dedup();

    let mut mean_tpr = vec![0.0; grid.len()];
    for curve in curves {
        // collapse vertical runs: keep the max tpr per distinct fpr
        let mut xs: Vec<f64> = Vec::with_capacity(curve.fpr.len());
        let mut ys: Vec<f64> = Vec::with_capacity(curve.tpr.len());
        for (&x, &y) in curve.fpr.iter().zip(&curve.tpr) {
            if xs.last() == Some(&x) {
                let last = ys.len() - 1;
                ys[last] = ys[last].max(y);
            } else {
                xs.push(x);
                ys.push(y);
            }
        }
        for (slot, &g) in mean_tpr.iter_mut().zip(&grid) {
            *slot += interp(&xs, &ys, g);
        }
    }
    let scale = 1.0 / curves.len() as f64;
    mean_tpr.iter_mut().for_each(|t| *t *= scale);

    let auc = trapezoid(&grid, &mean_tpr);
    RocCurve {
        thresholds: vec![f64::NAN; grid.len()],
        fpr: grid,
        tpr: mean_tpr,
        auc,
    }
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    match xs.binary_search_by(|probe| probe.partial_cmp(&x).expect("finite fpr")) {
        Ok(i) => ys[i],
        Err(0) => ys[0],
        Err(i) if i == xs.len() => ys[xs.len() - 1],
        Err(i) => {
            let (x0, x1) = (xs[i - 1], xs[i]);
            let (y0, y1) = (ys[i - 1], ys[i]);
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

/// Fraction of rows whose true category is among the `k` highest scores,
/// with ties broken toward the lowest category index.
pub fn top_k_accuracy(pred: &PredictionSet, k: usize) -> Result<f64> {
    let c = pred.n_categories();
    if k < 1 || k > c {
        return Err(Error::InvalidParam(format!(
            "k must lie in [1, {c}], got {k}"
        )));
    }
    let mut hits = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(c);
    for (i, row) in pred.scores.rows().into_iter().enumerate() {
        order.clear();
        order.extend(0..c);
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        if order[..k].contains(&pred.y_true[i]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / pred.n() as f64)
}

/// All scalar metrics plus the structures behind them, for one evaluation
/// run.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub f1_weighted: f64,
    pub auc_micro: f64,
    pub auc_macro: f64,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<PerClassStats>,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    pub roc: RocAggregate,
}

impl MetricsReport {
    /// Computes the full suite. `top_ks` values above the category count are
    /// dropped.
    pub fn compute(pred: &PredictionSet, top_ks: &[usize]) -> Result<MetricsReport> {
        let (accuracy, balanced_accuracy) = accuracy_scores(pred);
        let f1 = f1_scores(pred);
        let roc = aggregate_roc(pred)?;
        let mut top_k = BTreeMap::new();
        for &k in top_ks {
            if (1..=pred.n_categories()).contains(&k) {
                top_k.insert(k, top_k_accuracy(pred, k)?);
            }
        }
        Ok(MetricsReport {
            accuracy,
            balanced_accuracy,
            f1_micro: f1.micro,
            f1_macro: f1.macro_,
            f1_weighted: f1.weighted,
            auc_micro: roc.auc_micro,
            auc_macro: roc.auc_macro,
            confusion: confusion(pred),
            per_class: f1.per_class,
            top_k_accuracy: top_k,
            roc,
        })
    }
}
