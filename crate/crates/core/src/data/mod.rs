//! Datasets, generators, CSV, losses, metrics and the training loop.

pub mod dataset;
pub mod generate;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod train;

pub use dataset::{epoch_batches, Dataset, NormStats, Split, Targets};
pub use generate::{alignment_fn, gen_alignment_target, gen_blobs, BlobConfig};
pub use io::{load_csv, read_csv, save_csv, write_csv, CsvSchema};
pub use loss::{argmax_rows, cross_entropy, mse_loss, LossKind};
pub use metrics::{metrics, Metrics};
pub use train::{build_optimizer, evaluate, train, train_with, EvalReport, ScheduleConfig, StepRecord, TrainConfig, TrainingLog};
