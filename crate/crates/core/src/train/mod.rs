//! Loss, optimizer, the mini-batch training loop, evaluation metrics and
//! random-search tuning.

mod adam;
mod loss;
mod metrics;
mod search;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{cross_entropy, one_hot, PROB_FLOOR};
pub use metrics::{confusion_matrix, metrics_report, AveragedMetrics, ClassMetrics, ConfusionMatrix, MetricsReport};
pub use search::{random_search, trials_table, ParamRange, SearchSpace, Trial};
pub use trainer::{curves_csv, evaluate, train, train_with, EpochRecord, Evaluation, TrainConfig, Trainer, CURVES_HEADER};
