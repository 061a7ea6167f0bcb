//! Mini-batch training, evaluation and transfer between datasets.

mod checkpoint;
mod export;

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::autodiff::{Real, Rng, Tape};
use crate::data::{build_vocabs, Dataset, EncodedExample, Split};
use crate::model::{is_dataset_specific, targets, Model};
use crate::optim::{rmse, rmse_values, AmsGradConfig, OptimizerState};
use crate::{Error, Result};

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use export::export_embeddings;

const EVAL_BATCH: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub optimizer: AmsGradConfig,
    /// Test RMSE is computed every `eval_every` epochs and after the last
    /// one; 0 disables it.
    pub eval_every: usize,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            epochs: 75,
            batch_size: 256,
            shuffle_seed: 0,
            optimizer: AmsGradConfig::default(),
            eval_every: 1,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }

    pub const KEYS: [&'static str; 9] = [
        "epochs",
        "batch_size",
        "shuffle_seed",
        "lr",
        "beta1",
        "beta2",
        "eps",
        "weight_decay",
        "eval_every",
    ];

    /// Sets one field from its `key=value` form. Returns `false` for keys
    /// that are not training settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        let o = &mut self.optimizer;
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "shuffle_seed" => self.shuffle_seed = num(key, value)?,
            "lr" => o.lr = num(key, value)?,
            "beta1" => o.beta1 = num(key, value)?,
            "beta2" => o.beta2 = num(key, value)?,
            "eps" => o.eps = num(key, value)?,
            "weight_decay" => o.weight_decay = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the epoch's batch RMSEs; NaN when there were no batches.
    pub train_rmse: f64,
    pub test_rmse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Tab-separated `epoch, train_rmse, test_rmse` with a header row. A
    /// skipped test evaluation is an empty field.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_rmse\ttest_rmse\n");
        for r in &self.epochs {
            let test = r.test_rmse.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!("{}\t{}\t{}\n", r.epoch, r.train_rmse, test));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Writes to a temporary file beside `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.flush().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn check_vocabs<F: Real>(model: &Model<F>, dataset: &Dataset) -> Result<()> {
    let vocabs = build_vocabs(dataset)?;
    for (ours, theirs) in model.vocabs().iter().zip(vocabs.iter()) {
        if ours != theirs {
            return Err(Error::Contract(format!(
                "vocabulary `{}` of the model ({} tokens) differs from the dataset's ({} tokens)",
                ours.name(),
                ours.len(),
                theirs.len()
            )));
        }
    }
    Ok(())
}

fn check_indices(split: &Split, n: usize) -> Result<()> {
    if let Some(&bad) = split.train.iter().chain(&split.test).find(|&&i| i >= n) {
        return Err(Error::Domain(format!("rating index {bad} out of range for {n} ratings")));
    }
    Ok(())
}

/// Trains with a fresh optimizer and returns the per-epoch history.
pub fn train<F: Real>(model: &mut Model<F>, dataset: &Dataset, split: &Split, cfg: &TrainRunConfig) -> Result<History> {
    let mut state = OptimizerState::new(cfg.optimizer, model.params())?;
    train_with_state(model, dataset, split, cfg, &mut state)
}

/// Trains, continuing from `state`.
pub fn train_with_state<F: Real>(
    model: &mut Model<F>,
    dataset: &Dataset,
    split: &Split,
    cfg: &TrainRunConfig,
    state: &mut OptimizerState<F>,
) -> Result<History> {
    cfg.validate()?;
    check_vocabs(model, dataset)?;
    check_indices(split, dataset.len())?;
    state.config = cfg.optimizer;
    let encoded = dataset.encode(model.vocabs())?;
    let mut rng = Rng::derived(cfg.shuffle_seed, "shuffle");
    let mut order = split.train.clone();
    let mut history = History::default();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EncodedExample> = chunk.iter().map(|&i| &encoded[i]).collect();
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let fwd = model.forward(&mut tape, &bound, &batch)?;
            let y = tape.constant(targets(&batch)?);
            let loss = rmse(&mut tape, fwd.prediction, y)?;
            let value = tape.value(loss).item()?;
            if !value.is_finite() {
                return Err(Error::Domain(format!("non-finite loss in epoch {epoch}")));
            }
            let grads = bound.gradients(&tape.backward(loss)?);
            drop(tape);
            state.step(model.params_mut(), &grads)?;
            total += value.to_f64().expect("finite");
            batches += 1;
        }
        let train_rmse = if batches == 0 { f64::NAN } else { total / batches as f64 };
        let due = cfg.eval_every > 0 && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs);
        let test_rmse = match due && !split.test.is_empty() {
            true => Some(evaluate_encoded(model, &encoded, &split.test)?),
            false => None,
        };
        log::info!(
            "epoch {epoch}: train {train_rmse:.4}{}",
            test_rmse.map(|t| format!(", test {t:.4}")).unwrap_or_default()
        );
        history.epochs.push(EpochRecord {
            epoch,
            train_rmse,
            test_rmse,
        });
    }
    Ok(history)
}

/// RMSE of the unclamped predictions over `indices`.
pub fn evaluate<F: Real>(model: &Model<F>, dataset: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Domain("evaluation over an empty index set".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Domain(format!("rating index {bad} out of range")));
    }
    let encoded = indices
        .iter()
        .map(|&i| model.vocabs().encode(&dataset.example(i)))
        .collect::<Result<Vec<_>>>()?;
    let all: Vec<usize> = (0..encoded.len()).collect();
    evaluate_encoded(model, &encoded, &all)
}

fn evaluate_encoded<F: Real>(model: &Model<F>, encoded: &[EncodedExample], indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Domain("evaluation over an empty index set".into()));
    }
    let subset: Vec<EncodedExample> = indices.iter().map(|&i| encoded[i].clone()).collect();
    let predictions: Vec<f64> = model
        .predict(&subset, EVAL_BATCH)?
        .into_iter()
        .map(|p| p.to_f64().expect("real"))
        .collect();
    let truth: Vec<f64> = subset.iter().map(|ex| f64::from(ex.rating)).collect();
    rmse_values(&predictions, &truth)
}

/// Prepares a checkpointed model for fine-tuning on `target`.
///
/// The user-ID, movie-ID and zip tables are rebuilt at the target's
/// vocabulary sizes from `seed`; every other tensor is copied unchanged.
pub fn transfer(ckpt: &Checkpoint, target: &Dataset, seed: u64) -> Result<Model<f32>> {
    let vocabs = build_vocabs(target)?;
    if vocabs.genre != ckpt.vocabs.genre {
        return Err(Error::Contract("genre vocabularies differ".into()));
    }
    let mut config = ckpt.config.clone();
    config.seed = seed;
    let mut model = Model::<f32>::build(config, vocabs)?;
    let mut problems = Vec::new();
    for (name, fresh) in model.params_mut().iter_mut() {
        if is_dataset_specific(name) {
            continue;
        }
        match ckpt.params.get(name) {
            None => problems.push(format!("{name}: missing from checkpoint")),
            Some(src) if src.shape() != fresh.shape() => problems.push(format!(
                "{name}: checkpoint {:?}, target {:?}",
                src.shape(),
                fresh.shape()
            )),
            Some(src) => *fresh = src.clone(),
        }
    }
    if !problems.is_empty() {
        return Err(Error::Contract(format!("cannot transfer: {}", problems.join("; "))));
    }
    Ok(model)
}
