//! Evaluation-report emission: `metrics.json`, `confusion.csv`, per-class and
//! ROC CSVs, feature importances and optional SVG figures.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::artifact::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::{MetricsReport, RocCurve};
use crate::neural::EpochStats;
use crate::preprocess::OutputColumn;
use crate::svg;

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    n_rows: usize,
    n_categories: usize,
    accuracy: f64,
    balanced_accuracy: f64,
    f1_micro: f64,
    f1_macro: f64,
    f1_weighted: f64,
    auc_micro: Option<f64>,
    auc_macro: Option<f64>,
    top_k_accuracy: std::collections::BTreeMap<String, f64>,
    roc_skipped_categories: &'a [usize],
}

/// Writes the scalar metrics file and returns its path.
pub fn write_metrics_json(dir: &Path, report: &MetricsReport, n_rows: usize) -> Result<PathBuf> {
    let body = MetricsJson {
        n_rows,
        n_categories: report.per_class.len(),
        accuracy: report.accuracy,
        balanced_accuracy: report.balanced_accuracy,
        f1_micro: report.f1_micro,
        f1_macro: report.f1_macro,
        f1_weighted: report.f1_weighted,
        auc_micro: finite(report.auc_micro),
        auc_macro: finite(report.auc_macro),
        top_k_accuracy: report
            .top_k_accuracy
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        roc_skipped_categories: &report.roc.skipped,
    };
    let path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&body).map_err(|e| Error::ArtifactInvalid(e.to_string()))?;
    write_atomic(&path, json.as_bytes())?;
    Ok(path)
}

/// Confusion matrix CSV holding both raw counts and row-normalized values,
/// one block per `kind`.
pub fn write_confusion_csv(
    dir: &Path,
    report: &MetricsReport,
    categories: &[String],
) -> Result<PathBuf> {
    let path = dir.join("confusion.csv");
    let mut out = String::from("kind,true_category");
    for name in categories {
        out.push(',');
        out.push_str(&csv_quote(name));
    }
    out.push('\n');
    let c = categories.len();
    for i in 0..c {
        out.push_str("counts,");
        out.push_str(&csv_quote(&categories[i]));
        for j in 0..c {
            out.push_str(&format!(",{}", report.confusion.counts[(i, j)]));
        }
        out.push('\n');
    }
    for i in 0..c {
        out.push_str("normalized,");
        out.push_str(&csv_quote(&categories[i]));
        for j in 0..c {
            out.push_str(&format!(",{}", report.confusion.normalized[(i, j)]));
        }
        out.push('\n');
    }
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

pub fn write_per_class_csv(
    dir: &Path,
    report: &MetricsReport,
    categories: &[String],
) -> Result<PathBuf> {
    let path = dir.join("per_class.csv");
    let mut out = String::from("category,tp,fp,fn,support,precision,recall,f1\n");
    for stats in &report.per_class {
        let optional = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            csv_quote(&categories[stats.category]),
            stats.tp,
            stats.fp,
            stats.fn_,
            stats.support,
            stats.precision,
            optional(stats.recall),
            optional(stats.f1),
        ));
    }
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

fn write_roc_csv(path: &Path, curve: &RocCurve) -> Result<()> {
    let mut out = String::from("fpr,tpr,threshold\n");
    for i in 0..curve.fpr.len() {
        let threshold = curve
            .thresholds
            .get(i)
            .filter(|t| t.is_finite())
            .map(|t| t.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", curve.fpr[i], curve.tpr[i], threshold));
    }
    write_atomic(path, out.as_bytes())
}

/// Writes `roc_micro.csv`, `roc_macro.csv` and one `roc_class_<i>.csv` per
/// supported category.
pub fn write_roc_csvs(dir: &Path, report: &MetricsReport) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let micro = dir.join("roc_micro.csv");
    write_roc_csv(&micro, &report.roc.micro)?;
    written.push(micro);
    let macro_path = dir.join("roc_macro.csv");
    write_roc_csv(&macro_path, &report.roc.macro_curve)?;
    written.push(macro_path);
    for (i, curve) in report.roc.per_class.iter().enumerate() {
        if let Some(curve) = curve {
            let path = dir.join(format!("roc_class_{i}.csv"));
            write_roc_csv(&path, curve)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Per-column feature importances with their source group, descending.
pub fn write_importance_csv(
    dir: &Path,
    columns: &[OutputColumn],
    importances: &[f64],
) -> Result<PathBuf> {
    let path = dir.join("importance.csv");
    let mut rows: Vec<(String, String, f64)> = columns
        .iter()
        .zip(importances)
        .map(|(c, &imp)| (c.name(), c.group_name().to_string(), imp))
        .collect();
    rows.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then_with(|| a.0.cmp(&b.0)));
    let mut out = String::from("column,group,importance\n");
    for (name, group, importance) in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            csv_quote(&name),
            csv_quote(&group),
            importance
        ));
    }
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// Per-epoch training history for the network.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// ROC and confusion-heatmap figures as standalone SVG files.
pub fn write_svgs(
    dir: &Path,
    report: &MetricsReport,
    categories: &[String],
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();

    let curves: Vec<(String, &RocCurve)> = vec![
        (format!("micro (AUC {:.3})", report.auc_micro), &report.roc.micro),
        (format!("macro (AUC {:.3})", report.auc_macro), &report.roc.macro_curve),
    ];
    let roc_path = dir.join("roc.svg");
    write_atomic(&roc_path, svg::roc_plot(&curves).as_bytes())?;
    written.push(roc_path);

    let per_class: Vec<(String, &RocCurve)> = report
        .roc
        .per_class
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            c.as_ref()
                .map(|curve| (format!("{} ({:.3})", categories[i], curve.auc), curve))
        })
        .collect();
    if !per_class.is_empty() {
        let path = dir.join("roc_classes.svg");
        write_atomic(&path, svg::roc_plot(&per_class).as_bytes())?;
        written.push(path);
    }

    let heat = dir.join("confusion.svg");
    write_atomic(
        &heat,
        svg::confusion_heatmap(&report.confusion.normalized, categories).as_bytes(),
    )?;
    written.push(heat);
    Ok(written)
}

/// Minimal CSV quoting for names that may carry commas or quotes.
fn csv_quote(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::PredictionSet;
    use ndarray::array;

    fn sample_report() -> (MetricsReport, Vec<String>) {
        let scores = array![
            [0.7, 0.2, 0.1],
            [0.1, 0.8, 0.1],
            [0.3, 0.3, 0.4],
            [0.5, 0.4, 0.1]
        ];
        let pred = PredictionSet::new(vec![0, 1, 2, 1], scores).unwrap();
        let report = MetricsReport::compute(&pred, &[1, 3]).unwrap();
        let names = vec!["A".into(), "B,with comma".into(), "C".into()];
        (report, names)
    }

    #[test]
    fn writes_all_files() {
        let (report, names) = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let metrics = write_metrics_json(dir.path(), &report, 4).unwrap();
        let confusion = write_confusion_csv(dir.path(), &report, &names).unwrap();
        let per_class = write_per_class_csv(dir.path(), &report, &names).unwrap();
        let rocs = write_roc_csvs(dir.path(), &report).unwrap();
        let svgs = write_svgs(dir.path(), &report, &names).unwrap();
        for path in [metrics, confusion, per_class]
            .iter()
            .chain(&rocs)
            .chain(&svgs)
        {
            assert!(path.exists(), "{path:?} missing");
            assert!(std::fs::metadata(path).unwrap().len() > 0);
        }

        let metrics_text = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&metrics_text).unwrap();
        assert!(parsed["accuracy"].is_number());
        assert_eq!(parsed["n_rows"], 4);
    }

    #[test]
    fn quoting_protects_commas() {
        assert_eq!(csv_quote("plain"), "plain");
        assert_eq!(csv_quote("a,b"), "\"a,b\"");
        assert_eq!(csv_quote("say \"hi\""), "\"say \"\"hi\"\"\"");
    }
}
