//! The classifier: architecture, weighted loss, augmentation, training and
//! checkpoints.

mod augment;
pub(crate) mod checkpoint;
mod loss;
mod network;
mod train;

pub use augment::{apply_op, apply_ops, augment, sample_ops, AugmentConfig, AugmentOp};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use loss::{weighted_ce, weighted_ce_batch, weighted_ce_logit_grad, PROB_FLOOR};
pub use network::{build_network, predict, ClassProbs, ForwardTrace, Mode, Network, NetworkConfig};
pub use train::{
    accuracy, evaluate_loss, train, train_with_validator, EpochRecord, LabeledImage, PlateauScheduler,
    TrainConfig, TrainHistory,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("input shape {got:?} does not match network input {expected:?}")]
    InputShape { expected: (usize, usize, usize), got: (usize, usize, usize) },
    #[error("probabilities {0:?} are not a distribution")]
    InvalidProbs([f64; 3]),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
