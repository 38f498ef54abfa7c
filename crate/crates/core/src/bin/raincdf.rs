//! `raincdf` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use raincdf::ensemble::{fit_voting_weights, VotingWeights, DEFAULT_OUTLIER_MM};
use raincdf::harness::{
    infer_bin_proportion, infer_histogram, probes_to_csv, run_benchmark_with, sweep_k,
    sweep_size, train_and_predict, BenchmarkConfig, PredictorKind, SweepResult,
};
use raincdf::ingest::{
    derive_dataset, generate_synthetic, parse_dataset, read_labels, split, split_raw,
    write_derived, write_raw, Dataset, MissingDataPolicy, SyntheticConfig, Table,
};
use raincdf::knn::{KdTree, KnnPredictor, Standardizer, DEFAULT_K, DEFAULT_LEAF_CAPACITY};
use raincdf::logistic::{fit_logistic, LogisticModel, TrainConfig};
use raincdf::scoring::{read_predictions, score_parallel, write_predictions, CdfPrediction};
use raincdf::{ErrorKind, Predictor};

#[derive(Parser)]
#[command(name = "raincdf", version, about = "Hourly rainfall CDF prediction from radar features")]
struct Cli {
    /// Seed for synthetic data and random splits.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic raw radar table.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Derive per-series mean features from a raw table.
    Derive {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Retain RR2 and RR3 instead of dropping them.
        #[arg(long)]
        keep_rr23: bool,
    },
    /// Fit a model and save it.
    Train {
        #[arg(long, value_enum)]
        model: TrainModel,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Write CDF predictions for a test table.
    Predict {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Saved voting or logistic model (JSON) instead of training.
        #[arg(long)]
        model_file: Option<PathBuf>,
        /// Saved k-d tree instead of building one from --train.
        #[arg(long)]
        tree: Option<PathBuf>,
        #[command(flatten)]
        hyper: Hyper,
    },
    /// Score a prediction file against labels.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Validation score of k-NN for each k.
    SweepK {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 15, 50, 150, 500, 5000])]
        k_values: Vec<usize>,
        #[command(flatten)]
        hyper: Hyper,
        /// Output stem; writes `<stem>.csv` and `<stem>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation score of k-NN for nested training subsets.
    SweepSize {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score several predictors on the same split.
    Benchmark {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_delimiter = ',', default_value = "norain,sigmoid,histogram,simpleavg,voting,logistic,knn")]
        predictors: Vec<String>,
        #[command(flatten)]
        hyper: Hyper,
        #[arg(long)]
        out: PathBuf,
        /// Also write each predictor's predictions to `<dir>/<name>.csv`.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
    },
    /// Recover label-bin proportions from probe submission scores.
    InferHistogram {
        /// Labels to probe against (every bin is probed).
        #[arg(long, conflicts_with_all = ["score_ones", "score_zeroed"])]
        labels: Option<PathBuf>,
        #[arg(long, requires = "score_zeroed")]
        score_ones: Option<f64>,
        #[arg(long, requires = "score_ones")]
        score_zeroed: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainModel {
    Voting,
    Logistic,
    Knn,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Norain,
    Sigmoid,
    Histogram,
    Simpleavg,
    Voting,
    Logistic,
    Knn,
}

impl ModelArg {
    fn kind(self) -> PredictorKind {
        match self {
            ModelArg::Norain => PredictorKind::NoRain,
            ModelArg::Sigmoid => PredictorKind::Sigmoid,
            ModelArg::Histogram => PredictorKind::Histogram,
            ModelArg::Simpleavg => PredictorKind::SimpleAvg,
            ModelArg::Voting => PredictorKind::Voting,
            ModelArg::Logistic => PredictorKind::Logistic,
            ModelArg::Knn => PredictorKind::Knn,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long, requires = "val_or_test")]
    train: Option<PathBuf>,
    #[arg(long, alias = "test", group = "val_or_test")]
    val: Option<PathBuf>,
    /// Single table to split into train and validation sets.
    #[arg(long, conflicts_with_all = ["train", "val"], requires_all = ["n_train", "n_val"])]
    data: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
}

#[derive(Args)]
struct Hyper {
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Order of the l_p neighbour distance; `inf` for max-coordinate.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = DEFAULT_LEAF_CAPACITY)]
    leaf: usize,
    /// Standardize features before nearest neighbour search.
    #[arg(long)]
    standardize: bool,
    #[arg(long, default_value_t = DEFAULT_OUTLIER_MM)]
    outlier_mm: f64,
    /// Add an intercept column to the voting fit.
    #[arg(long)]
    with_bias: bool,
    /// Sigmoid: normalise RR1 by the full hour rather than radar coverage.
    #[arg(long)]
    normalize_full_hour: bool,
    #[arg(long, default_value_t = TrainConfig::default().max_iters)]
    iters: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    l1: f64,
    #[arg(long, default_value_t = TrainConfig::default().tolerance)]
    tol: f64,
}

impl Hyper {
    fn config(&self) -> BenchmarkConfig {
        BenchmarkConfig {
            k: self.k,
            p: self.p,
            leaf_capacity: self.leaf,
            standardize: self.standardize,
            outlier_mm: self.outlier_mm,
            with_bias: self.with_bias,
            normalize_full_hour: self.normalize_full_hour,
            logistic: TrainConfig {
                max_iters: self.iters,
                learning_rate: self.lr,
                tolerance: self.tol,
                l1_lambda: self.l1,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", render(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Joins the cause chain, skipping causes already quoted by their parent.
fn render(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<raincdf::Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            };
        }
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
    }
    3
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn load_pair(args: &DataArgs, seed: u64) -> anyhow::Result<(Table, Table)> {
    if let (Some(train), Some(val)) = (&args.train, &args.val) {
        return Ok((Table::load(train)?, Table::load(val)?));
    }
    let (Some(path), Some(n_train), Some(n_val)) = (&args.data, args.n_train, args.n_val) else {
        return Err(usage("give --train and --val, or --data with --n-train and --n-val"));
    };
    Ok(match Table::load(path)? {
        Table::Raw(raw) => {
            let (a, b) = split_raw(&raw, n_train, n_val, seed)?;
            (Table::Raw(a), Table::Raw(b))
        }
        Table::Derived(data) => {
            let (a, b) = split(&data, n_train, n_val, seed)?;
            (Table::Derived(a), Table::Derived(b))
        }
    })
}

fn knn_features(train: &Table, val: &Table, standardize: bool) -> (Dataset, Dataset) {
    let policy = MissingDataPolicy::default();
    let (train, val) = (train.features(&policy), val.features(&policy));
    if standardize {
        let s = Standardizer::fit(&train);
        (s.apply(&train), s.apply(&val))
    } else {
        (train, val)
    }
}

fn write_sweep(out: &Path, result: &SweepResult) -> anyhow::Result<()> {
    write_file(&with_ext(out, "csv"), &result.to_csv())?;
    write_file(&with_ext(out, "json"), &result.to_json()?)
}

fn require_train(train: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    train
        .clone()
        .ok_or_else(|| usage(format!("--train is required for {what}")))
}

fn predict_rows<P: Predictor>(model: &P, data: &Dataset) -> Vec<CdfPrediction> {
    data.rows.iter().map(|r| model.predict(&r.values)).collect()
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Generate { config, out } => {
            let config = SyntheticConfig::from_file(&config)?;
            let data = generate_synthetic(&config, seed)?;
            write_raw(&out, &data)?;
        }
        Command::Derive {
            input,
            out,
            keep_rr23,
        } => {
            let policy = if keep_rr23 {
                MissingDataPolicy::keep_all()
            } else {
                MissingDataPolicy::default()
            };
            let has_labels = read_labels(&input).is_ok();
            let raw = parse_dataset(&input, has_labels)?;
            write_derived(&out, &derive_dataset(&raw, &policy))?;
        }
        Command::Train {
            model,
            train,
            out,
            hyper,
        } => {
            let table = Table::load(&train)?;
            match model {
                TrainModel::Voting => {
                    let data = table.features(&PredictorKind::Voting.policy());
                    let w = fit_voting_weights(&data, hyper.outlier_mm, hyper.with_bias)?;
                    write_file(&out, &serde_json::to_string_pretty(&w)?)?;
                }
                TrainModel::Logistic => {
                    let data = table.features(&MissingDataPolicy::default());
                    let model = fit_logistic(&data, &hyper.config().logistic)?;
                    write_file(&out, &model.to_json()?)?;
                }
                TrainModel::Knn => {
                    if hyper.standardize {
                        return Err(usage("--standardize is not stored in tree files"));
                    }
                    let data = table.features(&MissingDataPolicy::default());
                    KdTree::from_dataset(&data, hyper.leaf)?.save(&out)?;
                }
            }
        }
        Command::Predict {
            model,
            train,
            test,
            out,
            model_file,
            tree,
            hyper,
        } => {
            let kind = model.kind();
            let config = hyper.config();
            let test_x = Table::load(&test)?.features(&kind.policy());
            let preds = match (kind, &model_file, &tree) {
                (PredictorKind::Voting, Some(path), _) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let w: VotingWeights = serde_json::from_str(&text).map_err(raincdf::Error::from)?;
                    predict_rows(&w.bind(&test_x.schema)?, &test_x)
                }
                (PredictorKind::Logistic, Some(path), _) => {
                    let text = std::fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    let m = LogisticModel::from_json(&text)?;
                    m.check_schema(&test_x.schema)?;
                    predict_rows(&m, &test_x)
                }
                (PredictorKind::Knn, _, Some(path)) => {
                    let tree = KdTree::load(path)?;
                    if tree.dim() != test_x.dim() {
                        return Err(raincdf::Error::Schema(format!(
                            "tree has {} features, test data has {}",
                            tree.dim(),
                            test_x.dim()
                        ))
                        .into());
                    }
                    KnnPredictor::new(tree, config.k, config.p)?.predict_dataset(&test_x)?
                }
                (PredictorKind::NoRain | PredictorKind::Sigmoid | PredictorKind::SimpleAvg, _, _) => {
                    train_and_predict(kind, &test_x, &test_x, &config)?
                }
                _ => {
                    let train = require_train(&train, kind.name())?;
                    let train_x = Table::load(&train)?.features(&kind.policy());
                    train_and_predict(kind, &train_x, &test_x, &config)?
                }
            };
            write_predictions(&out, &preds)?;
        }
        Command::Score {
            pred,
            labels,
            report,
        } => {
            let preds = read_predictions(&pred)?;
            let labels = read_labels(&labels)?;
            let r = score_parallel(&preds, &labels)?;
            write_file(&report, &serde_json::to_string_pretty(&r)?)?;
        }
        Command::SweepK {
            data,
            k_values,
            hyper,
            out,
        } => {
            let (train, val) = load_pair(&data, seed)?;
            let (train, val) = knn_features(&train, &val, hyper.standardize);
            let mut result = sweep_k(&train, &val, &k_values, hyper.p, hyper.leaf)?;
            result.config.seed = Some(seed);
            write_sweep(&out, &result)?;
        }
        Command::SweepSize {
            data,
            sizes,
            hyper,
            out,
        } => {
            let (train, val) = load_pair(&data, seed)?;
            let (train, val) = knn_features(&train, &val, hyper.standardize);
            let result = sweep_size(&train, &val, &sizes, hyper.k, hyper.p, seed, hyper.leaf)?;
            write_sweep(&out, &result)?;
        }
        Command::Benchmark {
            data,
            predictors,
            hyper,
            out,
            pred_dir,
        } => {
            let kinds = predictors
                .iter()
                .map(|s| s.trim().parse::<PredictorKind>())
                .collect::<Result<Vec<_>, _>>()?;
            let (train, test) = load_pair(&data, seed)?;
            if let Some(dir) = &pred_dir {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
            }
            let table = run_benchmark_with(&train, &test, &kinds, &hyper.config(), |kind, preds| {
                match &pred_dir {
                    Some(dir) => write_predictions(&dir.join(format!("{kind}.csv")), preds),
                    None => Ok(()),
                }
            })?;
            write_file(&with_ext(&out, "csv"), &table.to_csv())?;
            write_file(&with_ext(&out, "json"), &table.to_json()?)?;
        }
        Command::InferHistogram {
            labels,
            score_ones,
            score_zeroed,
            out,
        } => {
            let text = match (labels, score_ones, score_zeroed) {
                (Some(path), _, _) => probes_to_csv(&infer_histogram(&read_labels(&path)?)?),
                (None, Some(ones), Some(zeroed)) => {
                    format!("{}\n", infer_bin_proportion(ones, zeroed, raincdf::N_BINS)?)
                }
                _ => bail!(UsageError(
                    "give --labels, or --score-ones with --score-zeroed".into()
                )),
            };
            match out {
                Some(path) => write_file(&path, &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
