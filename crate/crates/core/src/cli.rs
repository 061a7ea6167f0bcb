//! The `hbgnn` command line: train, evaluate, transfer, export and predict.
//!
//! Settings resolve in three layers: built-in defaults (full size, or the
//! reduced dimensions with `--reduced`), then a flat `key=value` config
//! file, then flags.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{fold_split, load, temporal_split, Dataset, DatasetKind, RatingExample, Split};
use crate::model::{ModelConfig, ModelKind, Variant};
use crate::optim::OptimizerState;
use crate::train::{evaluate, export_embeddings, train_with_state, transfer, Checkpoint, TrainRunConfig};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "hbgnn", version, about = "Hierarchical bigraph rating recommender")]
struct Cli {
    /// Log progress to standard error (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write a checkpoint and a per-epoch history.
    Train(TrainArgs),
    /// Print the test-split RMSE of a checkpoint.
    Eval(EvalArgs),
    /// Re-target a checkpoint to another dataset and fine-tune it.
    Transfer(TransferArgs),
    /// Write predictions and user place states for test-split ratings.
    ExportEmbeddings(ExportArgs),
    /// Print the predicted rating for one user and movie.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitKind {
    /// A predefined ML-100K fold, chosen with --fold.
    Fold,
    /// Earliest ratings train, the rest test.
    Temporal,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, default_value = "ml100k")]
    dataset_kind: DatasetKind,
    /// Defaults to `fold` for ml100k and `temporal` otherwise.
    #[arg(long, value_enum)]
    split: Option<SplitKind>,
    #[arg(long, default_value_t = 1)]
    fold: usize,
    /// Share of ratings in the training part of a temporal split.
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Keep this many ratings, sampled uniformly with the run seed.
    #[arg(long)]
    subsample: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat `key=value` file of model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Test RMSE every N epochs; 0 evaluates only after the last epoch.
    #[arg(long)]
    eval_every: Option<usize>,
    /// Per-epoch history file; defaults to the checkpoint path with a
    /// `.history.tsv` extension.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Start from the small dimensions instead of the full-size defaults.
    #[arg(long)]
    reduced: bool,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    attention: bool,
    #[arg(long)]
    model: Option<ModelKind>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed of the subsample, when --subsample is given.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TransferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Source checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Fine-tuned checkpoint to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Export only the first N test ratings.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    user_id: String,
    #[arg(long)]
    age: u32,
    #[arg(long)]
    gender: String,
    #[arg(long)]
    occupation: String,
    #[arg(long)]
    zip: String,
    #[arg(long)]
    movie_id: String,
    /// Comma-separated genre names.
    #[arg(long, value_delimiter = ',', required = true)]
    genres: Vec<String>,
    /// Clamp the prediction to the rating scale [1, 5].
    #[arg(long)]
    clamp: bool,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status. Failures print one line to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let rendered = e.to_string();
            eprintln!("{}", rendered.lines().next().unwrap_or("error: invalid arguments"));
            return 2;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Transfer(a) => cmd_transfer(a),
        Command::ExportEmbeddings(a) => cmd_export(a),
        Command::Predict(a) => cmd_predict(a),
    }
}

/// Loads the dataset, applies the subsample and computes the split.
fn prepare(data: &DataArgs, seed: u64) -> Result<(Dataset, Split)> {
    let full = load(data.dataset_kind, &data.data_dir)?;
    let kind = data.split.unwrap_or(match data.dataset_kind {
        DatasetKind::Ml100k => SplitKind::Fold,
        DatasetKind::Ml1m => SplitKind::Temporal,
    });
    match (kind, data.subsample) {
        (SplitKind::Fold, None) => {
            let split = fold_split(&full, data.fold)?;
            Ok((full, split))
        }
        (SplitKind::Fold, Some(n)) => {
            let split = fold_split(&full, data.fold)?;
            let keep = full.subsample_indices(n, seed)?;
            let test: HashSet<usize> = split.test.into_iter().collect();
            let (mut train, mut held) = (Vec::new(), Vec::new());
            for (j, i) in keep.iter().enumerate() {
                if test.contains(i) {
                    held.push(j);
                } else {
                    train.push(j);
                }
            }
            Ok((full.restrict(&keep)?, Split { train, test: held }))
        }
        (SplitKind::Temporal, n) => {
            let ds = match n {
                Some(n) => full.subsample(n, seed)?,
                None => full,
            };
            let split = temporal_split(&ds, data.train_fraction)?;
            Ok((ds, split))
        }
    }
}

/// Parses a flat `key=value` file; `#` starts a comment line.
fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            file: path.to_path_buf(),
            line: n + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Applies config-file and `--set` pairs, then the dedicated flags. With
/// `model` absent, model keys are rejected.
fn resolve(run: &RunArgs, mut model: Option<&mut ModelConfig>, train: &mut TrainRunConfig) -> Result<()> {
    let mut pairs = match &run.config {
        Some(path) => read_config_file(path)?,
        None => Vec::new(),
    };
    for s in &run.overrides {
        pairs.push(parse_override(s)?);
    }
    for (k, v) in &pairs {
        let used = match model.as_deref_mut() {
            Some(m) => m.set(k, v)? || train.set(k, v)?,
            None => train.set(k, v)?,
        };
        if !used {
            return Err(Error::Config(format!("unknown setting `{k}`")));
        }
    }
    if let Some(seed) = run.seed {
        train.shuffle_seed = seed;
        if let Some(m) = model {
            m.seed = seed;
        }
    }
    if let Some(e) = run.epochs {
        train.epochs = e;
    }
    if let Some(b) = run.batch_size {
        train.batch_size = b;
    }
    if let Some(lr) = run.lr {
        train.optimizer.lr = lr;
    }
    if let Some(e) = run.eval_every {
        train.eval_every = e;
    }
    train.validate()
}

fn history_path(run: &RunArgs, out: &Path) -> PathBuf {
    run.history.clone().unwrap_or_else(|| out.with_extension("history.tsv"))
}

fn fit_and_save(
    mut model: crate::model::Model<f32>,
    dataset: &Dataset,
    split: &Split,
    cfg: &TrainRunConfig,
    out: &Path,
    history: &Path,
) -> Result<()> {
    let mut state = OptimizerState::new(cfg.optimizer, model.params())?;
    let record = train_with_state(&mut model, dataset, split, cfg, &mut state)?;
    record.write(history)?;
    model.checkpoint(Some(&state)).save(out)?;
    if let Some(last) = record.last() {
        log::info!("finished epoch {} with train rmse {:.4}", last.epoch, last.train_rmse);
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut model_cfg = if a.reduced { ModelConfig::reduced() } else { ModelConfig::default() };
    let mut train_cfg = TrainRunConfig::default();
    resolve(&a.run, Some(&mut model_cfg), &mut train_cfg)?;
    if let Some(v) = a.variant {
        model_cfg.variant = v;
    }
    if a.attention {
        model_cfg.attention = true;
    }
    if let Some(k) = a.model {
        model_cfg.kind = k;
    }
    model_cfg.validate()?;
    let (dataset, split) = prepare(&a.data, model_cfg.seed)?;
    log::info!("{} train and {} test ratings", split.train.len(), split.test.len());
    let vocabs = crate::data::build_vocabs(&dataset)?;
    let model = crate::model::Model::<f32>::build(model_cfg, vocabs)?;
    fit_and_save(model, &dataset, &split, &train_cfg, &a.out, &history_path(&a.run, &a.out))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.to_model()?;
    let (dataset, split) = prepare(&a.data, a.seed)?;
    println!("{:.6}", evaluate(&model, &dataset, &split.test)?);
    Ok(())
}

fn cmd_transfer(a: TransferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let mut train_cfg = TrainRunConfig {
        epochs: 5,
        ..TrainRunConfig::default()
    };
    resolve(&a.run, None, &mut train_cfg)?;
    let seed = a.run.seed.unwrap_or(ckpt.config.seed);
    let (dataset, split) = prepare(&a.data, seed)?;
    let model = transfer(&ckpt, &dataset, seed)?;
    fit_and_save(model, &dataset, &split, &train_cfg, &a.out, &history_path(&a.run, &a.out))
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.to_model()?;
    let (dataset, split) = prepare(&a.data, a.seed)?;
    let mut indices = split.test;
    if let Some(n) = a.limit {
        indices.truncate(n);
    }
    let rows = export_embeddings(&model, &dataset, &indices, &a.out)?;
    log::info!("wrote {rows} rows to {}", a.out.display());
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.to_model()?;
    let example = RatingExample {
        user_id: &a.user_id,
        age: a.age,
        gender: &a.gender,
        occupation: &a.occupation,
        zip: &a.zip,
        movie_id: &a.movie_id,
        genres: &a.genres,
        rating: 0.0,
        timestamp: 0,
    };
    let encoded = model.vocabs().encode(&example)?;
    let mut rating = model.predict(&[encoded], 1)?[0];
    if a.clamp {
        rating = rating.clamp(1.0, 5.0);
    }
    println!("{rating:.6}");
    Ok(())
}
