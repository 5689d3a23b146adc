use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Splits flat `key=value` text into pairs. Blank lines and `#` comments are
/// skipped; repeated keys are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", n + 1)));
        }
        if pairs.iter().any(|(p, _)| p == k) {
            return Err(Error::Config(format!("line {}: key `{k}` given twice", n + 1)));
        }
        pairs.push((k.to_owned(), v.to_owned()));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Postmenstrual age at scan.
    ScanAge,
    /// Gestational age at birth.
    BirthAge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheduler {
    Constant,
    Cosine,
}

macro_rules! keyword_enum {
    ($t:ty, $what:literal, $($name:literal => $v:expr),+) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($v),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                let name = match self {
                    $(x if *x == $v => $name,)+
                    _ => unreachable!(),
                };
                f.write_str(name)
            }
        }
    };
}

keyword_enum!(Task, "task", "pma" => Task::ScanAge, "ga" => Task::BirthAge);
keyword_enum!(OptimizerKind, "optimizer", "sgd" => OptimizerKind::Sgd, "adam" => OptimizerKind::Adam);
keyword_enum!(Scheduler, "scheduler", "none" => Scheduler::Constant, "cosine" => Scheduler::Cosine);

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub scheduler: Scheduler,
    pub batch_size: usize,
    pub epochs: usize,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }
}

/// Every accepted config key with a description, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("task", "pma (scan age) | ga (birth age)"),
    ("variant", "tiny | small | base | mini | micro"),
    ("optimizer", "sgd | adam (task default: pma sgd, ga adam)"),
    ("lr", "peak learning rate (task and variant default)"),
    ("warmup_epochs", "linear warm-up length in epochs (50 from scratch, 0 fine-tuning)"),
    ("scheduler", "none | cosine decay after warm-up"),
    ("batch_size", "examples per optimizer step (256 tiny, 128 small, 64 base)"),
    ("epochs", "passes over the training split (2000 from scratch, 1000 fine-tuning)"),
    ("seed", "master seed for init, shuffling, dropout and corruption"),
    ("mask_prob", "fraction of patches corrupted for pretraining (0.5)"),
    ("deconfound", "true | false: append the scan-age token (ga only)"),
    ("freeze_backbone", "true | false: train only the regression head"),
    ("manifest", "dataset manifest csv; relative signal paths resolve against its directory"),
    ("out_dir", "directory for checkpoints, logs and the resolved config (out)"),
    ("patch_order", "icosphere order whose faces define the patches (2)"),
    ("dropout", "dropout probability inside the encoder (0)"),
    ("threads", "worker threads per batch (available cores)"),
];

/// Resolved training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub variant: String,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub mask_prob: f64,
    pub deconfound: bool,
    pub freeze_backbone: bool,
    pub manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub patch_order: u32,
    pub dropout: f64,
    pub threads: usize,
    explicit: BTreeSet<String>,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, usize::from)
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects true or false, got {v:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}` has invalid value {v:?}")))
}

impl TrainConfig {
    /// Defaults for a task and variant trained from scratch.
    pub fn defaults(task: Task, variant: &str) -> TrainConfig {
        let (kind, lr) = match (task, variant) {
            (Task::ScanAge, _) => (OptimizerKind::Sgd, 1e-4),
            (Task::BirthAge, "base") => (OptimizerKind::Adam, 1e-4),
            (Task::BirthAge, _) => (OptimizerKind::Adam, 5e-4),
        };
        let warmup = if task == Task::BirthAge && variant == "base" { 0 } else { 50 };
        let batch_size = match variant {
            "small" => 128,
            "base" => 64,
            _ => 256,
        };
        TrainConfig {
            task,
            variant: variant.to_owned(),
            optimizer: OptimizerConfig {
                kind,
                lr,
                warmup_epochs: warmup,
                scheduler: Scheduler::Constant,
                batch_size,
                epochs: 2000,
            },
            seed: 0,
            mask_prob: 0.5,
            deconfound: false,
            freeze_backbone: false,
            manifest: None,
            out_dir: PathBuf::from("out"),
            patch_order: 2,
            dropout: 0.0,
            threads: default_threads(),
            explicit: BTreeSet::new(),
        }
    }

    /// Parses `key=value` text over the defaults of its `task` and `variant`
    /// keys. Unknown keys are configuration errors.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let pairs = parse_pairs(text)?;
        let lookup = |k: &str| pairs.iter().find(|(p, _)| p == k).map(|(_, v)| v.as_str());
        let task: Task = lookup("task").map_or(Ok(Task::ScanAge), str::parse)?;
        let variant = lookup("variant").unwrap_or("tiny");
        let mut cfg = TrainConfig::defaults(task, variant);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "task" => self.task = v.parse()?,
            "variant" => {
                if !crate::model::VARIANTS.iter().any(|x| x.0 == v) {
                    return Err(Error::Config(format!("unknown variant {v:?}")));
                }
                self.variant = v.to_owned()
            }
            "optimizer" => self.optimizer.kind = v.parse()?,
            "lr" => self.optimizer.lr = parse_num(key, v)?,
            "warmup_epochs" => self.optimizer.warmup_epochs = parse_num(key, v)?,
            "scheduler" => self.optimizer.scheduler = v.parse()?,
            "batch_size" => self.optimizer.batch_size = parse_num(key, v)?,
            "epochs" => self.optimizer.epochs = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "mask_prob" => self.mask_prob = parse_num(key, v)?,
            "deconfound" => self.deconfound = parse_bool(key, v)?,
            "freeze_backbone" => self.freeze_backbone = parse_bool(key, v)?,
            "manifest" => self.manifest = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "patch_order" => self.patch_order = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            other => {
                let known: Vec<&str> = CONFIG_KEYS.iter().map(|k| k.0).collect();
                return Err(Error::Config(format!(
                    "unknown config key `{other}` (accepted: {})",
                    known.join(", ")
                )));
            }
        }
        self.explicit.insert(key.to_owned());
        Ok(())
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    /// Switches defaults that were not set explicitly to their fine-tuning
    /// values.
    pub fn use_finetune_defaults(&mut self) {
        let lr = match (self.task, self.variant.as_str()) {
            (Task::ScanAge, _) => 1e-5,
            (Task::BirthAge, "base") => 5e-4,
            (Task::BirthAge, _) => 3e-4,
        };
        if !self.is_explicit("lr") {
            self.optimizer.lr = lr;
        }
        if !self.is_explicit("warmup_epochs") {
            self.optimizer.warmup_epochs = 0;
        }
        if !self.is_explicit("epochs") {
            self.optimizer.epochs = 1000;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!("mask_prob {} not in [0, 1]", self.mask_prob)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.deconfound && self.task != Task::BirthAge {
            return Err(Error::Config("deconfound applies to the ga task only".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key=value` per line.
    pub fn to_text(&self) -> String {
        let o = &self.optimizer;
        let values = [
            self.task.to_string(),
            self.variant.clone(),
            o.kind.to_string(),
            o.lr.to_string(),
            o.warmup_epochs.to_string(),
            o.scheduler.to_string(),
            o.batch_size.to_string(),
            o.epochs.to_string(),
            self.seed.to_string(),
            self.mask_prob.to_string(),
            self.deconfound.to_string(),
            self.freeze_backbone.to_string(),
            self.manifest
                .as_ref()
                .map_or_else(|| "none".into(), |p| p.display().to_string()),
            self.out_dir.display().to_string(),
            self.patch_order.to_string(),
            self.dropout.to_string(),
            self.threads.to_string(),
        ];
        CONFIG_KEYS
            .iter()
            .zip(values)
            .filter(|((k, _), v)| !(*k == "manifest" && v == "none"))
            .map(|((k, _), v)| format!("{k}={v}\n"))
            .collect()
    }
}
