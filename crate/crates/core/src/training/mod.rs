//! Optimizers, losses, masked-patch corruption and the training loops.

mod config;
mod confound;
mod corruption;
mod loss;
mod optim;
mod parallel;
mod trainer;

pub use config::{parse_pairs, OptimizerConfig, OptimizerKind, Scheduler, Task, TrainConfig, CONFIG_KEYS};
pub use confound::{encode_confound, ConfoundEncoder, Mode};
pub use corruption::{apply_plan, corrupt_sequence, Action, CorruptionPlan, MppCorruption};
pub use loss::{mae, mpp_loss, mpp_loss_value, regression_loss};
pub use parallel::parallel_map;
pub use optim::{learning_rate, Optimizer, Schedule, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use trainer::{
    build_model, checkpoint_with_metadata, mean_baseline_mae, model_config, mpp_validation_loss,
    predict_examples, pretrain_mpp, train, EpochLog, Objective, TrainMetadata, TrainOptions,
    TrainResult, BEST_CHECKPOINT, METRICS_FILE,
};
