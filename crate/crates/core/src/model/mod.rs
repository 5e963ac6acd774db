//! The assembled classifier, its loss, optimizer, training and
//! evaluation loops, and checkpoints.

mod checkpoint;
mod config;
mod loss;
mod metrics;
mod net;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Config, DataConfig, DatasetSource, ModelConfig, TrainConfig, KEYS};
pub use loss::cross_entropy;
pub use metrics::{Confusion, Evaluation};
pub use net::{argmax_rows, canonical_order, ForwardOutput, GbnetModel, NORMALIZATION_TOL};
pub use optim::{cosine_lr, Sgd};
pub use train::{evaluate, EpochRecord, EpochStats, Trainer};
