//! Training, evaluation and prediction drivers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{self, SamplePair};
use crate::error::{Error, Result};
use crate::kv;
use crate::losses::{combined_loss, LossWeights};
use crate::metrics::{self, MetricsReport, DEFAULT_THRESHOLD};
use crate::model::{build_model, Checkpoint, ModelConfig, Network};
use crate::nn::{Adam, Graph, ParameterStore, Tensor};

/// Optimisation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops after this many Adam updates when set.
    pub max_steps: Option<usize>,
    /// Seeds batch shuffling and the dataset split.
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// `best.ckpt` (and `last.ckpt`) are written here when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Logs the training loss every this many steps; 0 disables.
    pub log_every: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 2,
            epochs: 100,
            max_steps: None,
            seed: 0,
            loss_weights: LossWeights::default(),
            checkpoint_dir: None,
            log_every: 10,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be at least 1"));
        }
        let w = self.loss_weights;
        if !(w.dice >= 0.0 && w.bce >= 0.0) || w.dice + w.bce == 0.0 {
            return Err(Error::config("loss_dice_weight", "weights must be non-negative and not both zero"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Sets one field from its text form. Returns `false` for unknown keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = kv::parse_num(key, value)?,
            "batch_size" => self.batch_size = kv::parse_num(key, value)?,
            "epochs" => self.epochs = kv::parse_num(key, value)?,
            "max_steps" => {
                self.max_steps = match value {
                    "" | "none" => None,
                    v => Some(kv::parse_num(key, v)?),
                }
            }
            "seed" => self.seed = kv::parse_num(key, value)?,
            "loss_dice_weight" => self.loss_weights.dice = kv::parse_num(key, value)?,
            "loss_bce_weight" => self.loss_weights.bce = kv::parse_num(key, value)?,
            "checkpoint_dir" => {
                self.checkpoint_dir = (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
            }
            "log_every" => self.log_every = kv::parse_num(key, value)?,
            "threshold" => self.threshold = kv::parse_num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> Vec<(String, String)> {
        [
            ("lr", format!("{:?}", self.lr)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", self.max_steps.map_or("none".into(), |s| s.to_string())),
            ("seed", self.seed.to_string()),
            ("loss_dice_weight", format!("{:?}", self.loss_weights.dice)),
            ("loss_bce_weight", format!("{:?}", self.loss_weights.bce)),
            (
                "checkpoint_dir",
                self.checkpoint_dir
                    .as_ref()
                    .map_or("none".into(), |p| p.display().to_string()),
            ),
            ("log_every", self.log_every.to_string()),
            ("threshold", format!("{:?}", self.threshold)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when there is no validation set.
    pub val_dice: Option<f64>,
    pub val_iou: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl History {
    /// `epoch,train_loss,val_dice,val_iou`; missing validation values are empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_dice,val_iou\n");
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.6},{},{}", e.epoch, e.train_loss, opt(e.val_dice), opt(e.val_iou));
        }
        s
    }

    /// `step,epoch,loss` with full precision.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,epoch,loss\n");
        for r in &self.steps {
            let _ = writeln!(s, "{},{},{:?}", r.step, r.epoch, r.loss);
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|r| r.loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation dice, or the final ones without a
    /// validation set.
    pub best: Checkpoint,
    /// Final parameters with optimizer state.
    pub last: Checkpoint,
    pub history: History,
}

fn check_sizes(config: &ModelConfig, pairs: &[SamplePair]) -> Result<()> {
    for p in pairs {
        let s = p.image.shape();
        if (s.h, s.w) != config.input_size || s.c != config.input_channels {
            return Err(Error::Dataset(format!(
                "`{}` is {}x{}x{}, model expects {}x{}x{}",
                p.id, s.c, s.h, s.w, config.input_channels, config.input_size.0, config.input_size.1
            )));
        }
    }
    Ok(())
}

/// One forward/backward/Adam update on a batch; returns the loss.
pub fn train_step(
    network: &Network,
    store: &mut ParameterStore<f32>,
    adam: &Adam,
    weights: LossWeights,
    images: &Tensor,
    masks: &Tensor,
) -> Result<f64> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = g.input(images.clone());
    let t = g.input(masks.clone());
    let pass = network.forward(&mut g, &p, x)?;
    let terms = combined_loss(&mut g, pass.prob, t, weights)?;
    let loss = g.value(terms.total).data()[0] as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step: store.step() as usize + 1,
            epoch: 0,
            detail: format!(
                "dice term {}, bce term {}",
                g.value(terms.dice).data()[0],
                g.value(terms.bce).data()[0]
            ),
        });
    }
    let grads = g.backward(terms.total)?;
    store.accumulate_grads(&grads, &p)?;
    adam.step(store)?;
    Ok(loss)
}

/// Trains a freshly built model. `val` may be empty, in which case the final
/// parameters are reported as best.
pub fn train(
    model_config: &ModelConfig,
    config: &TrainConfig,
    train_set: &[SamplePair],
    val: &[SamplePair],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Dataset("empty training set".into()));
    }
    check_sizes(model_config, train_set)?;
    check_sizes(model_config, val)?;
    let (network, mut store) = build_model::<f32>(model_config)?;
    let adam = Adam::with_lr(config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut history = History::default();
    let mut best: Option<(f64, ParameterStore<f32>)> = None;
    let started = Instant::now();
    'epochs: for epoch in 1..=config.epochs {
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for idx in data::batch_indices(train_set.len(), config.batch_size, Some(&mut rng)) {
            if config.max_steps.is_some_and(|m| history.steps.len() >= m) {
                break;
            }
            let items: Vec<&SamplePair> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = data::make_batch(&items)?;
            let loss = train_step(&network, &mut store, &adam, config.loss_weights, &batch.images, &batch.masks)
                .map_err(|e| match e {
                    Error::NonFinite { step, detail, .. } => Error::NonFinite { step, epoch, detail },
                    e => e,
                })?;
            let step = history.steps.len() + 1;
            history.steps.push(StepRecord { step, epoch, loss });
            epoch_loss += loss;
            batches += 1;
            if config.log_every > 0 && step % config.log_every == 0 {
                log::info!(
                    "epoch {epoch} step {step} loss {loss:.4} ({:.1}s)",
                    started.elapsed().as_secs_f64()
                );
            }
        }
        if batches == 0 {
            break 'epochs;
        }
        let (val_dice, val_iou) = if val.is_empty() {
            (None, None)
        } else {
            let report = evaluate_model(&network, &store, val, config.threshold)?;
            (Some(report.aggregate.dice), Some(report.aggregate.iou))
        };
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_dice,
            val_iou,
        });
        if let Some(dice) = val_dice {
            log::info!("epoch {epoch}: val dice {dice:.4}");
            if best.as_ref().is_none_or(|(d, _)| dice > *d) {
                best = Some((dice, store.clone()));
                if let Some(dir) = &config.checkpoint_dir {
                    Checkpoint::new(model_config.clone(), store.clone(), true).save(dir.join("best.ckpt"))?;
                }
            }
        }
    }

    let last = Checkpoint::new(model_config.clone(), store, true);
    let best = match best {
        Some((_, params)) => Checkpoint::new(model_config.clone(), params, true),
        None => last.clone(),
    };
    if let Some(dir) = &config.checkpoint_dir {
        last.save(dir.join("last.ckpt"))?;
        if val.is_empty() {
            best.save(dir.join("best.ckpt"))?;
        }
    }
    Ok(TrainOutcome { best, last, history })
}

/// Per-image metrics for `pairs`. Parameters are not modified.
pub fn evaluate_model(
    network: &Network,
    store: &ParameterStore<f32>,
    pairs: &[SamplePair],
    threshold: f64,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty subset".into()));
    }
    check_sizes(network.config(), pairs)?;
    let mut per_image = Vec::with_capacity(pairs.len());
    for p in pairs {
        let prob = network.predict(store, &p.image)?;
        per_image.extend(metrics::evaluate(&prob, &p.mask, threshold, std::slice::from_ref(&p.id))?);
    }
    MetricsReport::new(threshold, per_image)
}

pub fn evaluate_checkpoint(checkpoint: &Checkpoint, pairs: &[SamplePair], threshold: f64) -> Result<MetricsReport> {
    let (network, _) = build_model::<f32>(&checkpoint.config)?;
    evaluate_model(&network, &checkpoint.params, pairs, threshold)
}

/// Outcome of [`predict_dir`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictSummary {
    pub written: Vec<PathBuf>,
    /// Inputs that could not be read or did not fit the model, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Writes a 0/255 mask PNG for every `*.png` in `images_dir`, same stem.
pub fn predict_dir(
    checkpoint: &Checkpoint,
    images_dir: &Path,
    out_dir: &Path,
    threshold: f64,
) -> Result<PredictSummary> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::config("threshold", "must lie in (0, 1)"));
    }
    let (network, _) = build_model::<f32>(&checkpoint.config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut entries: Vec<PathBuf> = std::fs::read_dir(images_dir)
        .map_err(|e| Error::io(images_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    entries.sort();
    let mut summary = PredictSummary::default();
    for path in entries {
        let result = data::read_image(&path).and_then(|img| network.predict(&checkpoint.params, &img));
        match result {
            Ok(prob) => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mask");
                let out = out_dir.join(format!("{stem}.png"));
                data::write_mask_png(&out, &prob, threshold)?;
                summary.written.push(out);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                summary.skipped.push((path, e.to_string()));
            }
        }
    }
    Ok(summary)
}
