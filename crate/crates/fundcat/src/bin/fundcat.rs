//! Command-line front end for the fund categorization pipeline. All logic
//! lives in the library; this binary only parses flags, dispatches, and
//! formats output.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fundcat::artifact::ModelKind;
use fundcat::forest::ScoreMetric;
use fundcat::pipeline::{
    self, EvalSplit, EvaluateOptions, GenerateOptions, GridSearchOptions, PredictOptions,
    TrainOptions,
};
use fundcat::tree::SplitCriterion;
use fundcat::Error;

#[derive(Parser)]
#[command(
    name = "fundcat",
    version,
    about = "Fund categorization pipeline: synthetic universes, tree/forest/network training, evaluation and prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled fund universe CSV
    Generate(GenerateArgs),
    /// Train a classifier and save the model artifact
    Train(TrainArgs),
    /// Cross-validated grid search over forest configurations
    Gridsearch(GridArgs),
    /// Evaluate a saved model and emit metric reports
    Evaluate(EvalArgs),
    /// Evaluate plus feature importances, history and optional figures
    Report(EvalArgs),
    /// Top-k category predictions for unlabeled funds
    Predict(PredictArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Named preset: paper-shape (5,000 funds / 20 categories) or tiny
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, default_value = "universe.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    n_funds: Option<usize>,
    #[arg(long)]
    n_categories: Option<usize>,
    #[arg(long)]
    separability: Option<f64>,
    #[arg(long)]
    sparsity: Option<f64>,
    #[arg(long)]
    imbalance: Option<f64>,
    #[arg(long)]
    benchmark_noise: Option<f64>,
    #[arg(long)]
    benchmark_missing_rate: Option<f64>,
    /// Category index pair sharing archetypes with masked benchmarks, e.g. 3:7 (repeatable)
    #[arg(long, value_parser = parse_pair)]
    confusable: Vec<(usize, usize)>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// dt (decision tree), rf (random forest) or mlp (feed-forward network)
    #[arg(long, value_parser = parse_model)]
    model: ModelKind,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    #[arg(long, default_value_t = 3)]
    min_count: usize,
    /// Fit scaling statistics on all rows instead of the training split
    #[arg(long)]
    scale_on_all: bool,
    /// Include fund_type as a one-hot feature
    #[arg(long)]
    include_fund_type: bool,
    #[arg(long, value_parser = parse_criterion, default_value = "gini")]
    criterion: SplitCriterion,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long, default_value_t = 2)]
    min_samples_split: usize,
    #[arg(long, default_value_t = 100)]
    n_estimators: usize,
    /// Disable bootstrap row sampling in the forest
    #[arg(long)]
    no_bootstrap: bool,
    #[arg(long)]
    features_per_split: Option<usize>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Validation fraction carved from the training split (network)
    #[arg(long, default_value_t = 0.10)]
    holdout: f64,
    /// Weight the network loss by balanced class weights
    #[arg(long)]
    class_weighted_loss: bool,
    /// Debug dump of the transformed training matrix
    #[arg(long)]
    dump_matrix: Option<PathBuf>,
    /// Training history CSV (network)
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "gridsearch.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated estimator counts
    #[arg(long, value_delimiter = ',', default_values_t = [80usize, 100, 120, 140])]
    estimators: Vec<usize>,
    /// Comma-separated criteria (gini, entropy)
    #[arg(long, value_delimiter = ',', value_parser = parse_criterion,
          default_values = ["gini", "entropy"])]
    criteria: Vec<SplitCriterion>,
    #[arg(long, value_parser = parse_score, default_value = "f1_weighted")]
    score: ScoreMetric,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    #[arg(long, default_value_t = 3)]
    min_count: usize,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    features_per_split: Option<usize>,
    #[arg(long)]
    no_bootstrap: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
    /// Rows to score: test (default), train or all
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: EvalSplit,
    /// Comma-separated k values for top-k accuracy
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 3, 5])]
    top_k: Vec<usize>,
    /// Render ROC curves and the confusion heatmap as SVG
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Ingest-contract CSV without the label column
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "predictions.csv")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    k: usize,
}

fn parse_pair(token: &str) -> Result<(usize, usize), String> {
    let (a, b) = token
        .split_once(':')
        .ok_or_else(|| format!("`{token}` is not of the form A:B"))?;
    Ok((
        a.parse().map_err(|e| format!("{e}"))?,
        b.parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_model(token: &str) -> Result<ModelKind, String> {
    ModelKind::parse(token).ok_or_else(|| format!("unknown model `{token}` (dt, rf, mlp)"))
}

fn parse_criterion(token: &str) -> Result<SplitCriterion, String> {
    SplitCriterion::parse(token)
        .ok_or_else(|| format!("unknown criterion `{token}` (gini, entropy)"))
}

fn parse_score(token: &str) -> Result<ScoreMetric, String> {
    ScoreMetric::parse(token)
        .ok_or_else(|| format!("unknown score `{token}` (accuracy, f1_micro, f1_weighted)"))
}

fn parse_split(token: &str) -> Result<EvalSplit, String> {
    EvalSplit::parse(token).ok_or_else(|| format!("unknown split `{token}` (train, test, all)"))
}

fn configure_threads() {
    if let Ok(raw) = std::env::var("FUNDCAT_THREADS") {
        if let Ok(n) = raw.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Error> {
    match cli.command {
        Command::Generate(args) => {
            let outcome = pipeline::run_generate(&GenerateOptions {
                preset: args.preset,
                out: args.out,
                seed: args.seed,
                n_funds: args.n_funds,
                n_categories: args.n_categories,
                separability: args.separability,
                sparsity: args.sparsity,
                imbalance: args.imbalance,
                benchmark_noise: args.benchmark_noise,
                benchmark_missing_rate: args.benchmark_missing_rate,
                confusable: args.confusable,
                argv,
            })?;
            println!(
                "wrote {} funds in {} categories to {}",
                outcome.n_funds,
                outcome.n_categories,
                outcome.out.display()
            );
            for (name, count) in outcome.summary.iter().take(10) {
                println!("  {name:<24} {count}");
            }
            if outcome.summary.len() > 10 {
                println!("  ... {} more categories", outcome.summary.len() - 10);
            }
            Ok(())
        }
        Command::Train(args) => {
            let mut opts = TrainOptions::new(args.data, args.model, args.out, args.seed);
            opts.test_frac = args.test_frac;
            opts.min_count = args.min_count;
            opts.scale_on_all = args.scale_on_all;
            opts.include_fund_type = args.include_fund_type;
            opts.criterion = args.criterion;
            opts.max_depth = args.max_depth;
            opts.min_samples_split = args.min_samples_split;
            opts.n_estimators = args.n_estimators;
            opts.bootstrap = !args.no_bootstrap;
            opts.features_per_split = args.features_per_split;
            opts.epochs = args.epochs;
            opts.batch_size = args.batch_size;
            opts.lr = args.lr;
            opts.patience = args.patience;
            opts.holdout = args.holdout;
            opts.class_weighted_loss = args.class_weighted_loss;
            opts.dump_matrix = args.dump_matrix;
            opts.history_out = args.history;
            opts.argv = argv;
            let outcome = pipeline::run_train(&opts)?;
            println!(
                "trained {} on {} rows ({} features, {} categories), tested against {} held-out rows",
                opts.model.token(),
                outcome.n_train,
                outcome.n_features,
                outcome.n_categories,
                outcome.n_test
            );
            println!("artifact: {}", outcome.artifact_path.display());
            println!("checksum: {}", outcome.checksum);
            Ok(())
        }
        Command::Gridsearch(args) => {
            let mut opts = GridSearchOptions::new(args.data, args.out, args.seed);
            opts.estimators = args.estimators;
            opts.criteria = args.criteria;
            opts.score = args.score;
            opts.folds = args.folds;
            opts.test_frac = args.test_frac;
            opts.min_count = args.min_count;
            opts.max_depth = args.max_depth;
            opts.features_per_split = args.features_per_split;
            opts.bootstrap = !args.no_bootstrap;
            opts.argv = argv;
            let outcome = pipeline::run_gridsearch(&opts)?;
            println!("{:<12} {:<9} {:>10}  folds", "estimators", "criterion", "mean");
            for row in &outcome.report.rows {
                let folds: Vec<String> =
                    row.fold_scores.iter().map(|s| format!("{s:.4}")).collect();
                println!(
                    "{:<12} {:<9} {:>10.4}  [{}]",
                    row.n_estimators,
                    row.criterion.token(),
                    row.mean_score,
                    folds.join(", ")
                );
            }
            let best = outcome.report.best_row();
            println!(
                "best: {} estimators, {} ({:.4})",
                best.n_estimators,
                best.criterion.token(),
                best.mean_score
            );
            println!("report: {}", outcome.out.display());
            Ok(())
        }
        Command::Evaluate(args) => {
            let outcome = pipeline::run_evaluate(&eval_options(args, argv))?;
            print_metrics(&outcome);
            Ok(())
        }
        Command::Report(args) => {
            let outcome = pipeline::run_report(&eval_options(args, argv))?;
            print_metrics(&outcome);
            Ok(())
        }
        Command::Predict(args) => {
            let outcome = pipeline::run_predict(&PredictOptions {
                model: args.model,
                input: args.input,
                out: args.out,
                k: args.k,
                argv,
            })?;
            println!(
                "wrote top-{} predictions for {} funds to {}",
                args.k,
                outcome.n_rows,
                outcome.out.display()
            );
            Ok(())
        }
    }
}

fn eval_options(args: EvalArgs, argv: Vec<String>) -> EvaluateOptions {
    let mut opts = EvaluateOptions::new(args.model, args.data, args.out_dir);
    opts.split = args.split;
    opts.top_ks = args.top_k;
    opts.svg = args.svg;
    opts.argv = argv;
    opts
}

fn print_metrics(outcome: &pipeline::EvaluateOutcome) {
    let r = &outcome.report;
    println!("rows evaluated:     {}", outcome.n_rows);
    println!("accuracy:           {:.4}", r.accuracy);
    println!("balanced accuracy:  {:.4}", r.balanced_accuracy);
    println!("F1 micro:           {:.4}", r.f1_micro);
    println!("F1 macro:           {:.4}", r.f1_macro);
    println!("F1 weighted:        {:.4}", r.f1_weighted);
    println!("AUC micro:          {:.4}", r.auc_micro);
    println!("AUC macro:          {:.4}", r.auc_macro);
    for (k, v) in &r.top_k_accuracy {
        println!("top-{k} accuracy:    {v:.4}");
    }
    if let Some(path) = outcome.files.first() {
        if let Some(dir) = path.parent() {
            println!("reports in {}", dir.display());
        }
    }
}
