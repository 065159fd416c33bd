//! End-to-end command flows shared by the CLI binary, the examples and the
//! integration tests: generate, train, gridsearch, evaluate, report and
//! predict.
//!
//! Reproducibility contract: every flow takes one user seed and derives
//! component seeds from it by name, records the input-file fingerprint, and
//! writes a run manifest next to its primary output. `evaluate` rebuilds the
//! exact train/test split from the artifact metadata, so evaluating a saved
//! model and evaluating in-process give identical reports.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::artifact::{
    self, file_fingerprint, save_model, ArtifactMetadata, ModelArtifact, ModelKind, ModelPayload,
    RunManifest,
};
use crate::error::{Error, Result};
use crate::forest::{self, ForestParams, GridSearchReport, GridSpec, ScoreMetric};
use crate::metrics::{MetricsReport, PredictionSet};
use crate::neural::{self, TrainConfig};
use crate::preprocess::{
    self, impute_and_round, transform, DesignMatrix, FitOptions, FittedPreprocessor, RawRows,
    MISSING_TOKEN,
};
use crate::sampling::{self, StratifiedSplit};
use crate::schema::{default_schema, FeatureValue, FundType, FundUniverse, GroupKind};
use crate::seeding::child_seed;
use crate::synth::{generate_universe, GeneratorConfig};
use crate::tree::{self, SplitCriterion, TreeParams};

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

// ---------------------------------------------------------------------------
// generate

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub preset: Option<String>,
    pub out: PathBuf,
    pub seed: u64,
    pub n_funds: Option<usize>,
    pub n_categories: Option<usize>,
    pub separability: Option<f64>,
    pub sparsity: Option<f64>,
    pub imbalance: Option<f64>,
    pub benchmark_noise: Option<f64>,
    pub benchmark_missing_rate: Option<f64>,
    pub confusable: Vec<(usize, usize)>,
    pub argv: Vec<String>,
}

#[derive(Debug)]
pub struct GenerateOutcome {
    pub out: PathBuf,
    pub manifest: PathBuf,
    pub summary: Vec<(String, usize)>,
    pub n_funds: usize,
    pub n_categories: usize,
}

pub fn resolve_generator_config(opts: &GenerateOptions) -> Result<GeneratorConfig> {
    let mut config = match &opts.preset {
        Some(name) => GeneratorConfig::preset(name, opts.seed).ok_or_else(|| {
            Error::InvalidParam(format!(
                "unknown preset `{name}` (available: paper-shape, tiny)"
            ))
        })?,
        None => GeneratorConfig {
            seed: opts.seed,
            ..GeneratorConfig::default()
        },
    };
    config.seed = opts.seed;
    if let Some(n) = opts.n_funds {
        config.n_funds = n;
    }
    if let Some(c) = opts.n_categories {
        config.n_categories = c;
    }
    if let Some(s) = opts.separability {
        config.separability = s;
    }
    if let Some(s) = opts.sparsity {
        config.sparsity = s;
    }
    if let Some(i) = opts.imbalance {
        config.imbalance = i;
    }
    if let Some(b) = opts.benchmark_noise {
        config.benchmark_noise = b;
    }
    if let Some(b) = opts.benchmark_missing_rate {
        config.benchmark_missing_rate = b;
    }
    config.confusable_pairs = opts.confusable.clone();
    Ok(config)
}

pub fn run_generate(opts: &GenerateOptions) -> Result<GenerateOutcome> {
    let config = resolve_generator_config(opts)?;
    let universe = generate_universe(&config)?;
    universe.save_csv(&opts.out)?;

    let manifest = RunManifest {
        command: "generate".into(),
        argv: opts.argv.clone(),
        resolved: serde_json::json!({
            "preset": opts.preset,
            "n_funds": config.n_funds,
            "n_categories": config.n_categories,
            "separability": config.separability,
            "sparsity": config.sparsity,
            "imbalance": config.imbalance,
            "benchmark_noise": config.benchmark_noise,
            "benchmark_missing_rate": config.benchmark_missing_rate,
            "confusable_pairs": config.confusable_pairs,
        }),
        seed: opts.seed,
        input_fingerprint: None,
        outputs: vec![opts.out.display().to_string()],
        created_at_unix: artifact::unix_now(),
    }
    .write(&parent_dir(&opts.out))?;

    Ok(GenerateOutcome {
        out: opts.out.clone(),
        manifest,
        summary: universe.summary(),
        n_funds: universe.n_records(),
        n_categories: universe.vocab.len(),
    })
}

// ---------------------------------------------------------------------------
// shared data preparation

pub struct PreparedData {
    /// Filtered and imputed universe.
    pub universe: FundUniverse,
    pub labels: Vec<usize>,
    pub fingerprint: String,
}

pub fn prepare_data(path: &Path, min_count: usize) -> Result<PreparedData> {
    let fingerprint = file_fingerprint(path)?;
    let raw = FundUniverse::load_csv(path, &default_schema())?;
    let filtered = raw.filter_min_category_count(min_count)?;
    let universe = impute_and_round(&filtered);
    let labels = universe.labels();
    Ok(PreparedData {
        universe,
        labels,
        fingerprint,
    })
}

/// The canonical train/test split for a given user seed.
pub fn train_test_split(labels: &[usize], test_frac: f64, seed: u64) -> Result<StratifiedSplit> {
    sampling::stratified_split(labels, test_frac, child_seed(seed, "train_test_split", 0))
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub data: PathBuf,
    pub model: ModelKind,
    pub out: PathBuf,
    pub seed: u64,
    pub test_frac: f64,
    pub min_count: usize,
    pub scale_on_all: bool,
    pub include_fund_type: bool,
    pub criterion: SplitCriterion,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub n_estimators: usize,
    pub bootstrap: bool,
    pub features_per_split: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub holdout: f64,
    pub class_weighted_loss: bool,
    pub dump_matrix: Option<PathBuf>,
    pub history_out: Option<PathBuf>,
    pub argv: Vec<String>,
}

impl TrainOptions {
    pub fn new(data: PathBuf, model: ModelKind, out: PathBuf, seed: u64) -> Self {
        TrainOptions {
            data,
            model,
            out,
            seed,
            test_frac: 0.25,
            min_count: 3,
            scale_on_all: false,
            include_fund_type: false,
            criterion: SplitCriterion::Gini,
            max_depth: None,
            min_samples_split: 2,
            n_estimators: 100,
            bootstrap: true,
            features_per_split: None,
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            patience: 10,
            holdout: 0.10,
            class_weighted_loss: false,
            dump_matrix: None,
            history_out: None,
            argv: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub artifact_path: PathBuf,
    pub manifest_path: PathBuf,
    pub checksum: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_features: usize,
    pub n_categories: usize,
}

pub fn run_train(opts: &TrainOptions) -> Result<TrainOutcome> {
    let prepared = prepare_data(&opts.data, opts.min_count)?;
    let split = train_test_split(&prepared.labels, opts.test_frac, opts.seed)?;

    let fit_rows: Vec<usize> = if opts.scale_on_all {
        (0..prepared.universe.n_records()).collect()
    } else {
        split.train.clone()
    };
    let fit_options = FitOptions {
        include_fund_type: opts.include_fund_type,
    };
    let prep = preprocess::fit_preprocessor(&prepared.universe, &fit_rows, &fit_options)?;
    let train_matrix = transform(&prep, &prepared.universe, &split.train)?;

    if let Some(dump) = &opts.dump_matrix {
        dump_design_matrix(dump, &train_matrix)?;
    }

    let weights = sampling::class_weights(&train_matrix.labels)?;
    let sample_weights = weights.sample_weights(&train_matrix.labels);
    let vocab = prepared.universe.vocab.names().to_vec();

    let (artifact, params_json) = match opts.model {
        ModelKind::Dt => {
            let params = TreeParams {
                criterion: opts.criterion,
                max_depth: opts.max_depth,
                min_samples_split: opts.min_samples_split,
                min_weighted_gain: 0.0,
            };
            let model = tree::fit_tree(&train_matrix, &sample_weights, &params, None)?;
            let params_json = serde_json::json!({
                "criterion": opts.criterion.token(),
                "max_depth": opts.max_depth,
                "min_samples_split": opts.min_samples_split,
                "class_weighted": true,
            });
            (
                ModelArtifact::from_tree(&model, prep, vocab, metadata(opts, &prepared, &params_json)),
                params_json,
            )
        }
        ModelKind::Rf => {
            let params = ForestParams {
                n_estimators: opts.n_estimators,
                criterion: opts.criterion,
                max_depth: opts.max_depth,
                min_samples_split: opts.min_samples_split,
                features_per_split: opts.features_per_split,
                bootstrap: opts.bootstrap,
                seed: child_seed(opts.seed, "forest", 0),
            };
            let model = forest::fit_forest(&train_matrix, &sample_weights, &params)?;
            let params_json = serde_json::json!({
                "n_estimators": opts.n_estimators,
                "criterion": opts.criterion.token(),
                "max_depth": opts.max_depth,
                "min_samples_split": opts.min_samples_split,
                "features_per_split": params.resolved_features_per_split(train_matrix.n_columns()),
                "bootstrap": opts.bootstrap,
                "class_weighted": true,
            });
            (
                ModelArtifact::from_forest(&model, prep, vocab, metadata(opts, &prepared, &params_json)),
                params_json,
            )
        }
        ModelKind::Mlp => {
            let config = TrainConfig {
                epochs: opts.epochs,
                batch_size: opts.batch_size,
                lr: opts.lr,
                patience: opts.patience,
                seed: child_seed(opts.seed, "mlp", 0),
                class_weights: opts
                    .class_weighted_loss
                    .then(|| weights.weights.clone()),
                ..TrainConfig::default()
            };
            let model = neural::fit_mlp(&train_matrix, &config, opts.holdout)?;
            if let Some(history_path) = &opts.history_out {
                crate::report::write_history_csv(history_path, &model.history)?;
            }
            let params_json = serde_json::json!({
                "hidden_dims": model.arch.hidden_dims,
                "epochs": opts.epochs,
                "batch_size": opts.batch_size,
                "lr": opts.lr,
                "patience": opts.patience,
                "holdout": opts.holdout,
                "class_weighted_loss": opts.class_weighted_loss,
                "best_epoch": model.best_epoch,
            });
            (
                ModelArtifact::from_mlp(&model, prep, vocab, metadata(opts, &prepared, &params_json)),
                params_json,
            )
        }
    };

    save_model(&artifact, &opts.out)?;
    let checksum = artifact.content_checksum();

    let mut outputs = vec![opts.out.display().to_string()];
    if let Some(h) = &opts.history_out {
        outputs.push(h.display().to_string());
    }
    let manifest_path = RunManifest {
        command: "train".into(),
        argv: opts.argv.clone(),
        resolved: serde_json::json!({
            "data": opts.data.display().to_string(),
            "model": opts.model.token(),
            "test_frac": opts.test_frac,
            "min_count": opts.min_count,
            "scale_on_all": opts.scale_on_all,
            "include_fund_type": opts.include_fund_type,
            "params": params_json,
        }),
        seed: opts.seed,
        input_fingerprint: Some(prepared.fingerprint.clone()),
        outputs,
        created_at_unix: artifact::unix_now(),
    }
    .write(&parent_dir(&opts.out))?;

    Ok(TrainOutcome {
        artifact_path: opts.out.clone(),
        manifest_path,
        checksum,
        n_train: split.train.len(),
        n_test: split.test.len(),
        n_features: artifact.preprocessor.n_output_columns(),
        n_categories: artifact.n_categories(),
    })
}

fn metadata(
    opts: &TrainOptions,
    prepared: &PreparedData,
    params_json: &serde_json::Value,
) -> ArtifactMetadata {
    ArtifactMetadata {
        seed: opts.seed,
        test_frac: opts.test_frac,
        min_category_count: opts.min_count,
        scale_on_all: opts.scale_on_all,
        data_fingerprint: prepared.fingerprint.clone(),
        params: params_json.clone(),
    }
}

fn dump_design_matrix(path: &Path, matrix: &DesignMatrix) -> Result<()> {
    let mut out = String::from("row_id,label");
    for name in &matrix.column_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, id) in matrix.row_ids.iter().enumerate() {
        out.push_str(&format!("{id},{}", matrix.labels[i]));
        for value in matrix.values.row(i) {
            out.push_str(&format!(",{value}"));
        }
        out.push('\n');
    }
    artifact::write_atomic(path, out.as_bytes())
}

// ---------------------------------------------------------------------------
// evaluate / report

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Train,
    Test,
    All,
}

impl EvalSplit {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "train" => Some(EvalSplit::Train),
            "test" => Some(EvalSplit::Test),
            "all" => Some(EvalSplit::All),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub model: PathBuf,
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub split: EvalSplit,
    pub top_ks: Vec<usize>,
    pub svg: bool,
    pub argv: Vec<String>,
}

impl EvaluateOptions {
    pub fn new(model: PathBuf, data: PathBuf, out_dir: PathBuf) -> Self {
        EvaluateOptions {
            model,
            data,
            out_dir,
            split: EvalSplit::Test,
            top_ks: vec![1, 3, 5],
            svg: false,
            argv: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct EvaluateOutcome {
    pub report: MetricsReport,
    pub files: Vec<PathBuf>,
    pub n_rows: usize,
    pub category_names: Vec<String>,
}

/// Rebuilds the artifact's evaluation rows from a data file, verifying the
/// fingerprint and vocabulary match the training run.
pub fn evaluation_matrix(
    model: &ModelArtifact,
    data: &Path,
    split: EvalSplit,
) -> Result<DesignMatrix> {
    let prepared = prepare_data(data, model.metadata.min_category_count)?;
    if prepared.fingerprint != model.metadata.data_fingerprint {
        return Err(Error::DataMismatch(format!(
            "data fingerprint {} differs from the artifact's training data {}",
            &prepared.fingerprint[..12.min(prepared.fingerprint.len())],
            &model.metadata.data_fingerprint[..12.min(model.metadata.data_fingerprint.len())]
        )));
    }
    if prepared.universe.vocab.names() != model.category_vocab.as_slice() {
        return Err(Error::DataMismatch(
            "category vocabulary differs from the artifact".into(),
        ));
    }
    let rows = match split {
        EvalSplit::All => (0..prepared.universe.n_records()).collect(),
        _ => {
            let s = train_test_split(
                &prepared.labels,
                model.metadata.test_frac,
                model.metadata.seed,
            )?;
            match split {
                EvalSplit::Train => s.train,
                _ => s.test,
            }
        }
    };
    transform(&model.preprocessor, &prepared.universe, &rows)
}

/// Scores the artifact on the requested rows and computes the full report.
pub fn evaluate_model(
    model: &ModelArtifact,
    matrix: &DesignMatrix,
    top_ks: &[usize],
) -> Result<(MetricsReport, usize)> {
    let probs = model.predict_proba(matrix.values.view())?;
    let pred = PredictionSet::new(matrix.labels.clone(), probs)?;
    let report = MetricsReport::compute(&pred, top_ks)?;
    Ok((report, matrix.n_rows()))
}

fn emit_evaluation(
    out_dir: &Path,
    report: &MetricsReport,
    names: &[String],
    n_rows: usize,
    svg: bool,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut files = vec![
        crate::report::write_metrics_json(out_dir, report, n_rows)?,
        crate::report::write_confusion_csv(out_dir, report, names)?,
        crate::report::write_per_class_csv(out_dir, report, names)?,
    ];
    files.extend(crate::report::write_roc_csvs(out_dir, report)?);
    if svg {
        files.extend(crate::report::write_svgs(out_dir, report, names)?);
    }
    Ok(files)
}

fn run_evaluation_command(opts: &EvaluateOptions, command: &str) -> Result<EvaluateOutcome> {
    let model = artifact::load_model(&opts.model)?;
    let matrix = evaluation_matrix(&model, &opts.data, opts.split)?;
    let (report, n_rows) = evaluate_model(&model, &matrix, &opts.top_ks)?;
    let names = model.category_vocab.clone();
    let mut files = emit_evaluation(&opts.out_dir, &report, &names, n_rows, opts.svg)?;

    if command == "report" {
        if let Some(importances) = model.importances() {
            files.push(crate::report::write_importance_csv(
                &opts.out_dir,
                &model.preprocessor.columns,
                importances,
            )?);
        }
        if let ModelPayload::Mlp { history, .. } = &model.payload {
            let path = opts.out_dir.join("history.csv");
            crate::report::write_history_csv(&path, history)?;
            files.push(path);
        }
    }

    let manifest = RunManifest {
        command: command.into(),
        argv: opts.argv.clone(),
        resolved: serde_json::json!({
            "model": opts.model.display().to_string(),
            "data": opts.data.display().to_string(),
            "split": format!("{:?}", opts.split).to_lowercase(),
            "top_ks": opts.top_ks,
            "svg": opts.svg,
        }),
        seed: model.metadata.seed,
        input_fingerprint: Some(model.metadata.data_fingerprint.clone()),
        outputs: files.iter().map(|p| p.display().to_string()).collect(),
        created_at_unix: artifact::unix_now(),
    }
    .write(&opts.out_dir)?;
    files.push(manifest);

    Ok(EvaluateOutcome {
        report,
        files,
        n_rows,
        category_names: names,
    })
}

pub fn run_evaluate(opts: &EvaluateOptions) -> Result<EvaluateOutcome> {
    run_evaluation_command(opts, "evaluate")
}

/// `evaluate` plus feature importances (forest artifacts), training history
/// (network artifacts) and the optional SVG figures.
pub fn run_report(opts: &EvaluateOptions) -> Result<EvaluateOutcome> {
    run_evaluation_command(opts, "report")
}

// ---------------------------------------------------------------------------
// gridsearch

#[derive(Debug, Clone)]
pub struct GridSearchOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub estimators: Vec<usize>,
    pub criteria: Vec<SplitCriterion>,
    pub score: ScoreMetric,
    pub folds: usize,
    pub test_frac: f64,
    pub min_count: usize,
    pub max_depth: Option<usize>,
    pub features_per_split: Option<usize>,
    pub bootstrap: bool,
    pub argv: Vec<String>,
}

impl GridSearchOptions {
    pub fn new(data: PathBuf, out: PathBuf, seed: u64) -> Self {
        let reference = GridSpec::reference();
        GridSearchOptions {
            data,
            out,
            seed,
            estimators: reference.n_estimators,
            criteria: reference.criteria,
            score: ScoreMetric::F1Weighted,
            folds: 5,
            test_frac: 0.25,
            min_count: 3,
            max_depth: None,
            features_per_split: None,
            bootstrap: true,
            argv: Vec::new(),
        }
    }
}

#[derive(Debug)]
pub struct GridSearchOutcome {
    pub report: GridSearchReport,
    pub out: PathBuf,
    pub manifest: PathBuf,
}

pub fn run_gridsearch(opts: &GridSearchOptions) -> Result<GridSearchOutcome> {
    let prepared = prepare_data(&opts.data, opts.min_count)?;
    let split = train_test_split(&prepared.labels, opts.test_frac, opts.seed)?;

    let prep = preprocess::fit_preprocessor(&prepared.universe, &split.train, &FitOptions::default())?;
    let train_matrix = transform(&prep, &prepared.universe, &split.train)?;
    let weights = sampling::class_weights(&train_matrix.labels)?;
    let sample_weights = weights.sample_weights(&train_matrix.labels);

    let folds = sampling::stratified_kfold(
        &train_matrix.labels,
        opts.folds,
        child_seed(opts.seed, "cv_folds", 0),
    )?;
    let grid = GridSpec {
        n_estimators: opts.estimators.clone(),
        criteria: opts.criteria.clone(),
    };
    let base = ForestParams {
        max_depth: opts.max_depth,
        features_per_split: opts.features_per_split,
        bootstrap: opts.bootstrap,
        seed: opts.seed,
        ..ForestParams::default()
    };
    let report = forest::grid_search(&train_matrix, &sample_weights, &grid, &base, &folds, opts.score)?;

    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::ArtifactInvalid(e.to_string()))?;
    artifact::write_atomic(&opts.out, json.as_bytes())?;

    let manifest = RunManifest {
        command: "gridsearch".into(),
        argv: opts.argv.clone(),
        resolved: serde_json::json!({
            "data": opts.data.display().to_string(),
            "estimators": opts.estimators,
            "criteria": opts.criteria.iter().map(|c| c.token()).collect::<Vec<_>>(),
            "score": opts.score,
            "folds": opts.folds,
            "test_frac": opts.test_frac,
            "min_count": opts.min_count,
        }),
        seed: opts.seed,
        input_fingerprint: Some(prepared.fingerprint),
        outputs: vec![opts.out.display().to_string()],
        created_at_unix: artifact::unix_now(),
    }
    .write(&parent_dir(&opts.out))?;

    Ok(GridSearchOutcome {
        report,
        out: opts.out.clone(),
        manifest,
    })
}

// ---------------------------------------------------------------------------
// predict

#[derive(Debug, Clone)]
pub struct PredictOptions {
    pub model: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
    pub k: usize,
    pub argv: Vec<String>,
}

#[derive(Debug)]
pub struct PredictOutcome {
    pub out: PathBuf,
    pub manifest: PathBuf,
    pub n_rows: usize,
    /// Per fund: (fund_id, ranked (category, probability) pairs).
    pub rankings: Vec<(String, Vec<(String, f64)>)>,
}

/// Parses a prediction CSV: the ingest contract minus the label column (a
/// `global_category` column, if present, is ignored). Cells are typed by the
/// artifact's preprocessor; unknown feature columns are an error.
fn load_prediction_rows(path: &Path, prep: &FittedPreprocessor) -> Result<RawRows> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::ArtifactInvalid(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::HeaderMismatch(e.to_string()))?
        .clone();
    if header.len() < 2 || &header[0] != "fund_id" || &header[1] != "fund_type" {
        return Err(Error::HeaderMismatch(
            "prediction input must start with fund_id,fund_type".into(),
        ));
    }
    let mut label_column = None;
    let mut feature_start = 2;
    if header.len() > 2 && &header[2] == "global_category" {
        label_column = Some(2);
        feature_start = 3;
    }
    let columns: Vec<String> = header.iter().skip(feature_start).map(String::from).collect();
    let kinds = preprocess::input_column_kinds(prep, &columns)?;

    let mut fund_ids = Vec::new();
    let mut fund_types = Vec::new();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::HeaderMismatch(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::MalformedRow {
                row: line,
                expected: header.len(),
                found: record.len(),
            });
        }
        fund_ids.push(record[0].to_string());
        fund_types.push(FundType::parse(&record[1]).ok_or_else(|| Error::BadCell {
            row: line,
            column: "fund_type".into(),
            token: record[1].to_string(),
            expected: "one of ETF, MM, OE",
        })?);
        let mut values = Vec::with_capacity(columns.len());
        for (offset, cell) in record.iter().skip(feature_start).enumerate() {
            let kind = kinds[offset];
            let value = if cell.is_empty() {
                match kind {
                    GroupKind::Categorical => FeatureValue::Text(MISSING_TOKEN.to_string()),
                    _ => FeatureValue::Number(0.0),
                }
            } else {
                match kind {
                    GroupKind::Categorical => FeatureValue::Text(cell.to_string()),
                    _ => {
                        let x: f64 = cell.parse().map_err(|_| Error::BadCell {
                            row: line,
                            column: columns[offset].clone(),
                            token: cell.to_string(),
                            expected: "a numeric value",
                        })?;
                        FeatureValue::Number(preprocess::round4(x))
                    }
                }
            };
            values.push(value);
        }
        rows.push(values);
        let _ = label_column;
    }
    Ok(RawRows {
        columns,
        fund_ids,
        fund_types,
        rows,
    })
}

/// Ranks the top-k categories per row: probabilities descending, lowest
/// category index on ties.
pub fn rank_top_k(
    probs: &Array2<f64>,
    category_names: &[String],
    k: usize,
) -> Vec<Vec<(String, f64)>> {
    let c = category_names.len();
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| {
                row[b]
                    .partial_cmp(&row[a])
                    .expect("finite probabilities")
                    .then(a.cmp(&b))
            });
            order
                .into_iter()
                .take(k)
                .map(|i| (category_names[i].clone(), row[i]))
                .collect()
        })
        .collect()
}

pub fn run_predict(opts: &PredictOptions) -> Result<PredictOutcome> {
    let model = artifact::load_model(&opts.model)?;
    let c = model.n_categories();
    if opts.k < 1 || opts.k > c {
        return Err(Error::InvalidParam(format!(
            "k must lie in [1, {c}], got {}",
            opts.k
        )));
    }
    let raw = load_prediction_rows(&opts.input, &model.preprocessor)?;
    let values = preprocess::transform_rows(&model.preprocessor, &raw)?;
    let probs = model.predict_proba(values.view())?;
    let rankings: Vec<(String, Vec<(String, f64)>)> = raw
        .fund_ids
        .iter()
        .cloned()
        .zip(rank_top_k(&probs, &model.category_vocab, opts.k))
        .collect();

    let mut out = String::from("fund_id");
    for r in 1..=opts.k {
        out.push_str(&format!(",category_{r},probability_{r}"));
    }
    out.push('\n');
    for (fund_id, ranked) in &rankings {
        out.push_str(fund_id);
        for (name, p) in ranked {
            out.push_str(&format!(",{name},{p}"));
        }
        out.push('\n');
    }
    artifact::write_atomic(&opts.out, out.as_bytes())?;

    let manifest = RunManifest {
        command: "predict".into(),
        argv: opts.argv.clone(),
        resolved: serde_json::json!({
            "model": opts.model.display().to_string(),
            "input": opts.input.display().to_string(),
            "k": opts.k,
        }),
        seed: model.metadata.seed,
        input_fingerprint: Some(file_fingerprint(&opts.input)?),
        outputs: vec![opts.out.display().to_string()],
        created_at_unix: artifact::unix_now(),
    }
    .write(&parent_dir(&opts.out))?;

    Ok(PredictOutcome {
        out: opts.out.clone(),
        manifest,
        n_rows: raw.fund_ids.len(),
        rankings,
    })
}
