//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backtest::{backtest_scores, oracle_scores, score_matrix, MetricsReport};
use crate::diffcore::checkpoint;
use crate::error::{Error, Result};
use crate::marketdata::{
    fractional_split, chronological_split, relations_json, synth_market, write_prices, Dataset, DatasetSplit,
    SynthConfig, N_FEATURES,
};
use crate::ranker::{
    check_model_gradients, grid_search, train, validate, GridSpec, ModelMode, RankModel, RankModelConfig,
    ToyScale, TrainHistory, GRADCHECK_EPS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const SEED_ENV: &str = "RELRANK_SEED";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => EXIT_USAGE,
        Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::Json(_) | Error::Checkpoint(_) => EXIT_DATA,
        Error::NonFinite { .. } | Error::ShapeMismatch { .. } => EXIT_NUMERICAL,
    }
}

#[derive(Parser, Debug)]
#[command(name = "relrank", version, about = "Relational stock ranking: train, grid-search and back-test")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-factor synthetic market.
    Synth(SynthArgs),
    /// Train one configuration and write a checkpoint and manifest.
    Train(TrainArgs),
    /// Train every configuration of the config's grid and keep the best.
    Gridsearch(GridArgs),
    /// Trade the test split with a trained model.
    Backtest(BacktestArgs),
    /// Finite-difference check of the full model in every mode.
    Gradcheck(GradcheckArgs),
    /// Validation and test metrics of a trained model.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub stocks: u64,
    #[arg(long, default_value_t = 120, value_parser = clap::value_parser!(u64).range(1..))]
    pub days: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub factors: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability of a random `noise` relation per stock pair.
    #[arg(long, default_value_t = 0.02)]
    pub density: f64,
    /// Idiosyncratic daily volatility.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// AR(1) coefficient of factor returns.
    #[arg(long, default_value_t = 0.8)]
    pub persistence: f64,
    #[arg(long, default_value_t = 0.01)]
    pub factor_vol: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Parallel training runs.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,
}

#[derive(Args, Debug)]
pub struct BacktestArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of top-ranked stocks bought each day.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Replace model scores with the realized returns.
    #[arg(long)]
    pub oracle: bool,
    /// Output directory; defaults to the checkpoint's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataOverride,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataOverride,
}

#[derive(Args, Debug, Default)]
pub struct DataOverride {
    /// Price directory; defaults to the one recorded in the manifest.
    #[arg(long)]
    pub prices: Option<PathBuf>,
    /// Relation file; defaults to the one recorded in the manifest.
    #[arg(long)]
    pub relations: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds per mode.
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub seeds: u64,
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..))]
    pub stocks: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: u64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub hidden: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub types: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = GRADCHECK_EPS)]
    pub eps: f64,
    /// Perturb one analytic gradient entry (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

/// Chronological split of the labeled days: explicit boundaries or fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default)]
    pub train_end: Option<usize>,
    #[serde(default)]
    pub val_end: Option<usize>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_train_fraction() -> f64 {
    0.6
}

fn default_val_fraction() -> f64 {
    0.2
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_end: None,
            val_end: None,
            train_fraction: default_train_fraction(),
            val_fraction: default_val_fraction(),
        }
    }
}

impl SplitSpec {
    pub fn resolve(&self, n_days: usize) -> Result<DatasetSplit> {
        let split = match (self.train_end, self.val_end) {
            (Some(b1), Some(b2)) => chronological_split(n_days, b1, b2),
            (None, None) => fractional_split(n_days, self.train_fraction, self.val_fraction),
            _ => return Err(Error::Config("train_end and val_end must be given together".into())),
        };
        split.map_err(|e| Error::Config(format!("split over {n_days} labeled days: {e}")))
    }
}

/// Run configuration file (JSON).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    /// Directory of `<SYMBOL>.csv` price files.
    pub prices: PathBuf,
    #[serde(default)]
    pub relations: Option<PathBuf>,
    pub output: PathBuf,
    /// Overrides `model.seed` when present.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub split: SplitSpec,
    pub model: RankModelConfig,
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

impl RunConfigFile {
    /// Reads the file, resolves relative paths against its directory and
    /// applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.prices = base.join(&cfg.prices);
        cfg.relations = cfg.relations.map(|r| base.join(r));
        cfg.output = base.join(&cfg.output);
        if let Some(seed) = cfg.seed {
            cfg.model.seed = seed;
        }
        if let Some(seed) = seed_from_env()? {
            cfg.model.seed = seed;
        }
        cfg.seed = Some(cfg.model.seed);
        cfg.model.validate()?;
        Ok(cfg)
    }

    /// Fails before any computation if inputs are missing or the mode
    /// needs relations that were not given.
    pub fn check_paths(&self) -> Result<()> {
        if !self.prices.is_dir() {
            return Err(Error::Data(format!("price directory {} not found", self.prices.display())));
        }
        match &self.relations {
            Some(r) if !r.is_file() => {
                return Err(Error::Data(format!("relation file {} not found", r.display())));
            }
            None if self.model.mode.needs_relations() => {
                return Err(Error::Config(format!("mode {} requires a relation file", self.model.mode)));
            }
            _ => {}
        }
        if self.output.exists() && !self.output.is_dir() {
            return Err(Error::Data(format!("output {} is not a directory", self.output.display())));
        }
        Ok(())
    }
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Everything needed to reload and evaluate a trained model. Contains no
/// timestamps, so identical runs write identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config: RankModelConfig,
    pub seed: u64,
    pub prices: PathBuf,
    pub relations: Option<PathBuf>,
    pub symbols: Vec<String>,
    pub relation_types: Vec<String>,
    pub input_dim: usize,
    pub split: DatasetSplit,
    /// How the kept parameters were chosen.
    pub selection: String,
    pub history: TrainHistory,
    pub validation: MetricsReport,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn to_json<S: Serialize>(value: &S) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn load_dataset(prices: &Path, relations: Option<&Path>) -> Result<Dataset> {
    let (ds, report) = Dataset::load(prices, relations)?;
    if report.skipped_unknown > 0 {
        eprintln!(
            "warning: skipped {} relation edges with symbols outside the price universe",
            report.skipped_unknown
        );
    }
    Ok(ds)
}

fn write_run(
    cfg: &RunConfigFile,
    dataset: &Dataset,
    split: &DatasetSplit,
    model: &RankModel<f64>,
    history: TrainHistory,
    selection: &str,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        config: model.config().clone(),
        seed: model.config().seed,
        prices: cfg.prices.clone(),
        relations: cfg.relations.clone(),
        symbols: dataset.symbols().to_vec(),
        relation_types: dataset
            .relations()
            .map(|r| r.type_names().into_iter().map(str::to_owned).collect())
            .unwrap_or_default(),
        input_dim: model.input_dim(),
        split: split.clone(),
        selection: selection.into(),
        validation: history.selected().validation,
        history,
    };
    checkpoint::save(model.params(), &cfg.output.join(CHECKPOINT_FILE))?;
    write_file(&cfg.output.join(MANIFEST_FILE), to_json(&manifest)?)?;
    Ok(manifest)
}

fn prepare_run(config: &Path) -> Result<(RunConfigFile, Dataset, DatasetSplit)> {
    let cfg = RunConfigFile::load(config)?;
    cfg.check_paths()?;
    create_dir(&cfg.output)?;
    let dataset = load_dataset(&cfg.prices, cfg.relations.as_deref())?;
    let split = cfg.split.resolve(dataset.n_days())?;
    Ok((cfg, dataset, split))
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    if args.out.exists() && !args.force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; pass --force to overwrite",
            args.out.display()
        )));
    }
    let cfg = SynthConfig {
        n_stocks: args.stocks as usize,
        n_days: args.days as usize,
        n_factors: args.factors as usize,
        relation_density: args.density,
        noise_scale: args.noise,
        seed: args.seed,
        persistence: args.persistence,
        factor_vol: args.factor_vol,
    };
    let market = synth_market(&cfg)?;
    let prices_dir = args.out.join("prices");
    if prices_dir.is_dir() {
        for entry in fs::read_dir(&prices_dir).map_err(|e| Error::io(&prices_dir, e))? {
            let path = entry.map_err(|e| Error::io(&prices_dir, e))?.path();
            if path.extension().is_some_and(|x| x == "csv") {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    create_dir(&prices_dir)?;
    write_prices(&prices_dir, &market.prices)?;
    let mut rel = relations_json(&market.relations, &market.symbols())?;
    rel.push('\n');
    write_file(&args.out.join("relations.json"), rel)?;
    write_file(&args.out.join("factors.json"), to_json(&market.factors)?)?;
    println!(
        "wrote {} stocks x {} days, {} relation edges to {}",
        cfg.n_stocks,
        cfg.n_days,
        market.relations.n_edges(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let (cfg, dataset, split) = prepare_run(&args.config)?;
    let (model, history) = train(&dataset, &split, &cfg.model)?;
    let manifest = write_run(&cfg, &dataset, &split, &model, history, "per-epoch validation IRR")?;
    let v = manifest.validation;
    println!(
        "{}: selected epoch {} of {}, validation mse {:.6e} mrr {:.4} irr {:.4}",
        manifest.config.mode,
        manifest.history.selected_epoch,
        manifest.history.epochs.len(),
        v.mse,
        v.mrr,
        v.irr
    );
    Ok(())
}

#[derive(Serialize)]
struct GridRow<'a> {
    config: &'a RankModelConfig,
    selected_epoch: usize,
    validation: &'a MetricsReport,
}

fn cmd_gridsearch(args: &GridArgs) -> Result<()> {
    let (cfg, dataset, split) = prepare_run(&args.config)?;
    let grid = cfg
        .grid
        .clone()
        .ok_or_else(|| Error::Config("config has no \"grid\" section".into()))?;
    let outcome = grid_search(&dataset, &split, &cfg.model, &grid, args.jobs as usize)?;
    let rows: Vec<GridRow> = outcome
        .cells
        .iter()
        .map(|c| GridRow {
            config: &c.config,
            selected_epoch: c.history.selected_epoch,
            validation: c.validation(),
        })
        .collect();
    write_file(&cfg.output.join("grid.json"), to_json(&rows)?)?;
    let best = outcome.cells[outcome.best].clone();
    let manifest = write_run(
        &cfg,
        &dataset,
        &split,
        &outcome.model,
        best.history,
        "per-epoch validation IRR within each cell, then validation IRR across cells",
    )?;
    println!(
        "{} configurations; best window {} hidden {} alpha {} lambda {}: validation irr {:.4}",
        outcome.cells.len(),
        manifest.config.window,
        manifest.config.hidden,
        manifest.config.alpha,
        manifest.config.lambda,
        manifest.validation.irr
    );
    Ok(())
}

fn load_trained(checkpoint_path: &Path, data: &DataOverride) -> Result<(RunManifest, Dataset, RankModel<f64>)> {
    let manifest_path = checkpoint_path.with_file_name(MANIFEST_FILE);
    if !checkpoint_path.is_file() {
        return Err(Error::Data(format!("checkpoint {} not found", checkpoint_path.display())));
    }
    let manifest = RunManifest::load(&manifest_path)?;
    let prices = data.prices.clone().unwrap_or_else(|| manifest.prices.clone());
    let relations = data.relations.clone().or_else(|| manifest.relations.clone());
    if manifest.config.mode.needs_relations() && relations.is_none() {
        return Err(Error::Config(format!("mode {} requires a relation file", manifest.config.mode)));
    }
    let dataset = load_dataset(&prices, relations.as_deref())?;
    if dataset.symbols() != manifest.symbols.as_slice() {
        return Err(Error::Data("price universe differs from the one the model was trained on".into()));
    }
    if manifest.split.n_days() != dataset.n_days() {
        return Err(Error::Data(format!(
            "dataset has {} labeled days, the model's split covers {}",
            dataset.n_days(),
            manifest.split.n_days()
        )));
    }
    let params = checkpoint::load(checkpoint_path)?;
    let model = RankModel::from_params(&manifest.config, manifest.input_dim, dataset.relations(), params)?;
    Ok((manifest, dataset, model))
}

fn cmd_backtest(args: &BacktestArgs) -> Result<()> {
    let (manifest, dataset, model) = load_trained(&args.checkpoint, &args.data)?;
    let days = manifest.split.test.clone();
    let k = args.k as usize;
    let scores = if args.oracle {
        oracle_scores(&dataset, days.clone())?
    } else {
        score_matrix(&model, &dataset, days.clone())?
    };
    let (ledger, report) = backtest_scores(&dataset, days, &scores, k)?;
    let out = match &args.out {
        Some(dir) => dir.clone(),
        None => args.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    create_dir(&out)?;
    let tag = if args.oracle { format!("oracle_top{k}") } else { format!("top{k}") };
    write_file(&out.join(format!("ledger_{tag}.csv")), ledger.to_csv(dataset.symbols()))?;
    write_file(&out.join(format!("curve_{tag}.csv")), ledger.curve_csv())?;
    write_file(&out.join(format!("report_{tag}.json")), to_json(&report)?)?;
    println!(
        "{tag}: {} test days, mse {:.6e} mrr {:.4} irr {:.4}",
        ledger.days.len(),
        report.mse,
        report.mrr,
        report.irr
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    validation: MetricsReport,
    test: MetricsReport,
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (manifest, dataset, model) = load_trained(&args.checkpoint, &args.data)?;
    let validation = validate(&model, &dataset, &manifest.split)?;
    let days = manifest.split.test.clone();
    let scores = score_matrix(&model, &dataset, days.clone())?;
    let (_, test) = backtest_scores(&dataset, days, &scores, 1)?;
    print!("{}", to_json(&EvalReport { validation, test })?);
    Ok(())
}

/// Returns the report text and whether every mode passed.
pub fn gradcheck_report(args: &GradcheckArgs) -> Result<(String, bool)> {
    let scale = ToyScale {
        stocks: args.stocks as usize,
        window: args.window as usize,
        hidden: args.hidden as usize,
        types: args.types as usize,
        features: N_FEATURES,
    };
    let mut text = String::new();
    let mut all_pass = true;
    for mode in ModelMode::ALL {
        let mut worst = 0.0f64;
        let mut worst_param = String::new();
        for seed in args.seed..args.seed + args.seeds {
            let report = check_model_gradients(mode, scale, seed, args.eps, args.corrupt_gradient)?;
            for (name, err) in report.per_param {
                if err > worst || worst_param.is_empty() {
                    worst = worst.max(err);
                    worst_param = name;
                }
            }
        }
        let pass = worst < args.tolerance;
        all_pass &= pass;
        text.push_str(&format!(
            "{:<10} worst rel err {:.3e} ({}) {}\n",
            mode.name(),
            worst,
            worst_param,
            if pass { "PASS" } else { "FAIL" }
        ));
    }
    Ok((text, all_pass))
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let (text, pass) = gradcheck_report(args)?;
    print!("{text}");
    std::io::stdout().flush().ok();
    Ok(pass)
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Gridsearch(a) => cmd_gridsearch(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: gradient check failed");
                return EXIT_NUMERICAL;
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
