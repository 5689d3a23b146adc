use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::confound::{ConfoundEncoder, Mode};
use super::config::{Task, TrainConfig};
use super::corruption::{apply_plan, MppCorruption};
use super::loss::{mae, mpp_loss, mpp_loss_value};
use super::optim::{Optimizer, Schedule};
use super::parallel::{batch_gradients, parallel_map};
use crate::autodiff::{Array, Checkpoint};
use crate::data::{derive_seed, Dataset, Example, NormStats};
use crate::error::{Error, Result};
use crate::model::{Session, SiTConfig, SiTModel};

/// File name of the best checkpoint inside an output directory.
pub const BEST_CHECKPOINT: &str = "best.sitckpt";
/// File name of the per-epoch metric log.
pub const METRICS_FILE: &str = "metrics.csv";

// Stream tags for derived seeds.
const INIT: u64 = 1;
const SHUFFLE: u64 = 2;
const EXAMPLE: u64 = 3;
const VAL_MASK: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Regression,
    Mpp,
}

impl Objective {
    fn as_str(self) -> &'static str {
        match self {
            Objective::Regression => "regression",
            Objective::Mpp => "mpp",
        }
    }
}

/// Everything besides the weights needed to use a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMetadata {
    pub objective: Objective,
    pub task: Task,
    /// Regression targets are standardized with these before training.
    pub target_mean: f64,
    pub target_std: f64,
    pub confound: Option<ConfoundEncoder>,
    pub norm: NormStats,
    pub high_order: u32,
    pub patch_order: u32,
}

impl TrainMetadata {
    pub fn to_record(&self) -> Vec<(String, String)> {
        let (m, s) = self.norm.to_record();
        let mut r = vec![
            ("objective".to_owned(), self.objective.as_str().to_owned()),
            ("task".to_owned(), self.task.to_string()),
            ("target_mean".to_owned(), self.target_mean.to_string()),
            ("target_std".to_owned(), self.target_std.to_string()),
            ("norm_mean".to_owned(), m),
            ("norm_std".to_owned(), s),
            ("high_order".to_owned(), self.high_order.to_string()),
            ("patch_order".to_owned(), self.patch_order.to_string()),
        ];
        if let Some(c) = &self.confound {
            r.extend(c.to_record());
        }
        r
    }

    pub fn from_record(record: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| {
            record
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{k}`")))
        };
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Data(format!("checkpoint `{k}` has bad value {v:?}")))
        }
        let objective = match get("objective")? {
            "regression" => Objective::Regression,
            "mpp" => Objective::Mpp,
            other => return Err(Error::Data(format!("unknown objective {other:?}"))),
        };
        let confound = if record.iter().any(|(k, _)| k == "confound_mean") {
            Some(ConfoundEncoder::from_record(record)?)
        } else {
            None
        };
        Ok(TrainMetadata {
            objective,
            task: get("task")?.parse().map_err(|e: Error| Error::Data(e.to_string()))?,
            target_mean: num("target_mean", get("target_mean")?)?,
            target_std: num("target_std", get("target_std")?)?,
            confound,
            norm: NormStats::from_record(get("norm_mean")?, get("norm_std")?)?,
            high_order: num("high_order", get("high_order")?)?,
            patch_order: num("patch_order", get("patch_order")?)?,
        })
    }
}

/// Model weights plus metadata in one checkpoint.
pub fn checkpoint_with_metadata(model: &SiTModel<f32>, meta: &TrainMetadata) -> Checkpoint {
    let mut ck = model.to_checkpoint();
    ck.config.extend(meta.to_record());
    ck
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation MAE in label units, or validation reconstruction loss when
    /// pretraining.
    pub val_metric: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Receives the best checkpoint, the metric log and the resolved config.
    pub out_dir: Option<PathBuf>,
    /// Stops after the epoch during which this much wall time has elapsed.
    pub time_limit: Option<Duration>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Weights from the epoch with the best validation metric.
    pub model: SiTModel<f32>,
    pub metadata: TrainMetadata,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// `false` when the time limit cut training short.
    pub completed: bool,
}

impl TrainResult {
    pub fn checkpoint(&self) -> Checkpoint {
        checkpoint_with_metadata(&self.model, &self.metadata)
    }

    /// First epoch whose validation metric is at or below `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        self.log.iter().find(|e| e.val_metric <= target).map(|e| e.epoch)
    }
}

fn target_of(task: Task, ex: &Example) -> f64 {
    match task {
        Task::ScanAge => ex.labels.scan_age,
        Task::BirthAge => ex.labels.birth_age,
    }
}

fn check_dataset(dataset: &Dataset) -> Result<()> {
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and val splits, got {} and {}",
            dataset.train.len(),
            dataset.val.len()
        )));
    }
    if let Some(ex) = dataset.train.iter().chain(&dataset.val).find(|e| !e.is_normalized()) {
        return Err(Error::State(format!("example {} is not normalized", ex.id())));
    }
    Ok(())
}

/// Architecture for `cfg` on the dataset's token shape.
pub fn model_config(cfg: &TrainConfig, dataset: &Dataset) -> Result<SiTConfig> {
    let first = &dataset.train.first().ok_or_else(|| Error::Config("empty training split".into()))?.sequence;
    let mut mc = SiTConfig::variant(&cfg.variant, first.token_len(), first.patch_count())?;
    mc.dropout = cfg.dropout;
    mc.confound = cfg.deconfound;
    Ok(mc)
}

/// Fresh model for `cfg`, optionally initialized from matching tensors of a
/// checkpoint with the same backbone.
pub fn build_model(cfg: &TrainConfig, dataset: &Dataset, init: Option<&Checkpoint>) -> Result<SiTModel<f32>> {
    let mc = model_config(cfg, dataset)?;
    let mut model = SiTModel::new(mc.clone(), derive_seed(&[cfg.seed, INIT]))?;
    if let Some(ck) = init {
        let other = SiTConfig::from_record(&ck.config)?;
        let same = (other.layers, other.heads, other.hidden, other.mlp_size, other.patch_dim, other.seq_len)
            == (mc.layers, mc.heads, mc.hidden, mc.mlp_size, mc.patch_dim, mc.seq_len);
        if !same {
            return Err(Error::Config(format!(
                "initial checkpoint is a {} model with {} layers, width {} and {}x{} tokens; config asks for {} ({} layers, width {}, {}x{} tokens)",
                other.variant, other.layers, other.hidden, other.seq_len, other.patch_dim,
                mc.variant, mc.layers, mc.hidden, mc.seq_len, mc.patch_dim
            )));
        }
        let loaded = model.load_matching(ck);
        log::info!("initialized {} tensors from checkpoint", loaded.len());
    }
    Ok(model)
}

struct MetricLog {
    out: Option<BufWriter<File>>,
}

impl MetricLog {
    fn open(dir: Option<&Path>, metric: &str) -> Result<Self> {
        let Some(dir) = dir else { return Ok(MetricLog { out: None }) };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "epoch,train_loss,{metric},lr,wall_seconds").map_err(|e| Error::io(&path, e))?;
        Ok(MetricLog { out: Some(out) })
    }

    fn push(&mut self, e: &EpochLog) -> Result<()> {
        if let Some(out) = self.out.as_mut() {
            let io = |err| Error::io(METRICS_FILE, err);
            writeln!(out, "{},{},{},{},{:.3}", e.epoch, e.train_loss, e.val_metric, e.lr, e.wall_seconds).map_err(io)?;
            out.flush().map_err(io)?;
        }
        Ok(())
    }
}

fn finish(opts: &TrainOptions, cfg: &TrainConfig, result: &TrainResult) -> Result<()> {
    if let Some(dir) = &opts.out_dir {
        result.checkpoint().save(dir.join(BEST_CHECKPOINT))?;
        crate::format::write_file(&dir.join("resolved.cfg"), cfg.to_text().as_bytes())?;
    }
    Ok(())
}

/// Supervised regression of the configured task. Targets are standardized
/// with training statistics; validation MAE is reported in label units and
/// selects the returned weights.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, init: Option<&Checkpoint>, opts: &TrainOptions) -> Result<TrainResult> {
    cfg.validate()?;
    check_dataset(dataset)?;
    let mut model = build_model(cfg, dataset, init)?;
    if cfg.freeze_backbone {
        model.freeze_backbone();
    }
    let task = cfg.task;
    let targets: Vec<f64> = dataset.train.iter().map(|e| target_of(task, e)).collect();
    let n = targets.len() as f64;
    let target_mean = targets.iter().sum::<f64>() / n;
    let spread = (targets.iter().map(|t| (t - target_mean).powi(2)).sum::<f64>() / n).sqrt();
    let target_std = if spread > 1e-8 { spread } else { 1.0 };
    let mut meta = TrainMetadata {
        objective: Objective::Regression,
        task,
        target_mean,
        target_std,
        confound: cfg.deconfound.then(ConfoundEncoder::default),
        norm: dataset.norm.clone(),
        high_order: dataset.high_order,
        patch_order: dataset.patch_order,
    };

    let o = &cfg.optimizer;
    let steps_per_epoch = dataset.train.len().div_ceil(o.batch_size);
    let schedule = Schedule::new(o, steps_per_epoch);
    let mut optimizer = Optimizer::new(o.kind);
    let mut log = MetricLog::open(opts.out_dir.as_deref(), "val_mae")?;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut result = TrainResult {
        model: model.clone(),
        metadata: meta.clone(),
        log: Vec::new(),
        best_epoch: 0,
        best_metric: f64::INFINITY,
        completed: true,
    };
    let mut step = 0;
    for epoch in 1..=o.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, SHUFFLE, epoch as u64])));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut lr = 0.0;
        for (b, batch) in order.chunks(o.batch_size).enumerate() {
            lr = schedule.lr(step);
            let confound: Vec<f64> = match meta.confound.as_mut() {
                Some(enc) => {
                    let ages: Vec<f64> = batch.iter().map(|&i| dataset.train[i].labels.scan_age).collect();
                    enc.normalize(&ages, Mode::Train)?
                }
                None => Vec::new(),
            };
            let model_ref = &model;
            let (mut grads, loss, used) = batch_gradients(model_ref, batch.len(), cfg.threads, |k| {
                let ex = &dataset.train[batch[k]];
                let seed = derive_seed(&[cfg.seed, EXAMPLE, epoch as u64, (b * o.batch_size + k) as u64]);
                let mut s = Session::new(model_ref, true, seed);
                let extras = match confound.get(k) {
                    Some(&z) => vec![s.confound_token(z)?],
                    None => Vec::new(),
                };
                let pred = s.forward_regress(&ex.sequence.tokens, &extras)?;
                let y = ((target_of(task, ex) - target_mean) / target_std) as f32;
                let loss = s.tape.mse(pred, &Array::scalar(y), None)?;
                Ok(Some((s, loss)))
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    tensor: "loss".into(),
                    detail: format!("epoch {epoch}, batch {b}"),
                });
            }
            grads.scale(1.0 / used as f32);
            optimizer.step(&mut model.params, &grads, lr)?;
            step += 1;
            loss_sum += loss;
            seen += used;
        }
        let preds = predict_examples(&model, &meta, &dataset.val, cfg.threads)?;
        let truth: Vec<f64> = dataset.val.iter().map(|e| target_of(task, e)).collect();
        let val_mae = mae(&preds, &truth)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_metric: val_mae,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: train_loss {:.5} val_mae {:.4} lr {:.2e}", entry.train_loss, val_mae, lr);
        log.push(&entry)?;
        result.log.push(entry);
        if val_mae < result.best_metric {
            result.best_metric = val_mae;
            result.best_epoch = epoch;
            result.model = model.clone();
            result.metadata = meta.clone();
        }
        if opts.time_limit.is_some_and(|t| start.elapsed() >= t) && epoch < o.epochs {
            log::warn!("time limit reached after epoch {epoch} of {}", o.epochs);
            result.completed = false;
            break;
        }
    }
    result.model.unfreeze_all();
    finish(opts, cfg, &result)?;
    Ok(result)
}

/// Masked-patch-prediction pretraining. The returned weights have the lowest
/// validation reconstruction loss, measured on a fixed corruption of every
/// validation example.
pub fn pretrain_mpp(dataset: &Dataset, cfg: &TrainConfig, init: Option<&Checkpoint>, opts: &TrainOptions) -> Result<TrainResult> {
    cfg.validate()?;
    check_dataset(dataset)?;
    if cfg.mask_prob <= 0.0 {
        return Err(Error::Config("pretraining needs mask_prob > 0".into()));
    }
    let mut plain = cfg.clone();
    plain.deconfound = false;
    let mut model = build_model(&plain, dataset, init)?;
    let meta = TrainMetadata {
        objective: Objective::Mpp,
        task: cfg.task,
        target_mean: 0.0,
        target_std: 1.0,
        confound: None,
        norm: dataset.norm.clone(),
        high_order: dataset.high_order,
        patch_order: dataset.patch_order,
    };
    let corruption = MppCorruption::with_mask_prob(cfg.mask_prob);
    corruption.validate()?;
    let o = &cfg.optimizer;
    let steps_per_epoch = dataset.train.len().div_ceil(o.batch_size);
    let schedule = Schedule::new(o, steps_per_epoch);
    let mut optimizer = Optimizer::new(o.kind);
    let mut log = MetricLog::open(opts.out_dir.as_deref(), "val_loss")?;
    let start = Instant::now();
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut result = TrainResult {
        model: model.clone(),
        metadata: meta.clone(),
        log: Vec::new(),
        best_epoch: 0,
        best_metric: f64::INFINITY,
        completed: true,
    };
    let mut step = 0;
    for epoch in 1..=o.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, SHUFFLE, epoch as u64])));
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut lr = 0.0;
        for (b, batch) in order.chunks(o.batch_size).enumerate() {
            lr = schedule.lr(step);
            let model_ref = &model;
            let (mut grads, loss, used) = batch_gradients(model_ref, batch.len(), cfg.threads, |k| {
                let ex = &dataset.train[batch[k]];
                let seed = derive_seed(&[cfg.seed, EXAMPLE, epoch as u64, (b * o.batch_size + k) as u64]);
                let plan = corruption.plan(ex.sequence.patch_count(), &mut ChaCha8Rng::seed_from_u64(seed));
                if plan.corrupted() == 0 {
                    return Ok(None);
                }
                let mut s = Session::new(model_ref, true, seed ^ 1);
                let tokens = &ex.sequence.tokens;
                let projected = s.project_patches(tokens)?;
                let token = s.param(model_ref.ids().mask_token);
                let corrupted = apply_plan(&mut s.tape, projected, token, &plan)?;
                let recon = s.forward_mpp(corrupted)?;
                let loss = mpp_loss(&mut s.tape, recon, tokens, &plan.mask())?;
                Ok(Some((s, loss)))
            })?;
            if used == 0 {
                step += 1;
                continue;
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    tensor: "loss".into(),
                    detail: format!("epoch {epoch}, batch {b}"),
                });
            }
            grads.scale(1.0 / used as f32);
            optimizer.step(&mut model.params, &grads, lr)?;
            step += 1;
            loss_sum += loss;
            seen += used;
        }
        let val_loss = mpp_validation_loss(&model, &dataset.val, &corruption, cfg.seed, cfg.threads)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            val_metric: val_loss,
            lr,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: train_loss {:.5} val_loss {:.5} lr {:.2e}", entry.train_loss, val_loss, lr);
        log.push(&entry)?;
        result.log.push(entry);
        if val_loss < result.best_metric {
            result.best_metric = val_loss;
            result.best_epoch = epoch;
            result.model = model.clone();
        }
        if opts.time_limit.is_some_and(|t| start.elapsed() >= t) && epoch < o.epochs {
            log::warn!("time limit reached after epoch {epoch} of {}", o.epochs);
            result.completed = false;
            break;
        }
    }
    finish(opts, cfg, &result)?;
    Ok(result)
}

/// Mean masked reconstruction loss over `examples`, each corrupted with a
/// plan that depends only on `seed` and its position.
pub fn mpp_validation_loss(
    model: &SiTModel<f32>,
    examples: &[Example],
    corruption: &MppCorruption,
    seed: u64,
    threads: usize,
) -> Result<f64> {
    let losses = parallel_map(examples.len(), threads, |i| {
        let ex = &examples[i];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, VAL_MASK, i as u64]));
        let plan = corruption.plan(ex.sequence.patch_count(), &mut rng);
        if plan.corrupted() == 0 {
            return Ok(None);
        }
        let mut s = Session::new(model, false, 0);
        let projected = s.project_patches(&ex.sequence.tokens)?;
        let token = s.param(model.ids().mask_token);
        let corrupted = apply_plan(&mut s.tape, projected, token, &plan)?;
        let recon = s.forward_mpp(corrupted)?;
        Ok(Some(mpp_loss_value(s.value(recon), &ex.sequence.tokens, &plan.mask())?))
    })?;
    let used: Vec<f64> = losses.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::Data("no validation example was corrupted".into()));
    }
    Ok(used.iter().sum::<f64>() / used.len() as f64)
}

/// Eval-mode predictions in label units.
pub fn predict_examples(
    model: &SiTModel<f32>,
    meta: &TrainMetadata,
    examples: &[Example],
    threads: usize,
) -> Result<Vec<f64>> {
    parallel_map(examples.len(), threads, |i| {
        let ex = &examples[i];
        let confound = match &meta.confound {
            Some(enc) => Some(enc.clone().normalize(&[ex.labels.scan_age], Mode::Eval)?[0]),
            None => None,
        };
        let y = crate::model::predict(model, &ex.sequence.tokens, confound)?;
        if !y.is_finite() {
            return Err(Error::NonFinite {
                tensor: "prediction".into(),
                detail: format!("example {}", ex.id()),
            });
        }
        Ok(y * meta.target_std + meta.target_mean)
    })
}

/// MAE of always predicting the training-split mean target.
pub fn mean_baseline_mae(dataset: &Dataset, task: Task, split: crate::data::Split) -> Result<f64> {
    let train: Vec<f64> = dataset.train.iter().map(|e| target_of(task, e)).collect();
    if train.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let mean = train.iter().sum::<f64>() / train.len() as f64;
    let truth: Vec<f64> = dataset.split(split).iter().map(|e| target_of(task, e)).collect();
    mae(&vec![mean; truth.len()], &truth)
}
