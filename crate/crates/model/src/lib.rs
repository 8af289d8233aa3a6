//! Multimodal shot captioning network: a pluggable visual backbone, token
//! refinement, fusion with player and shuttle tracks, a Transformer caption
//! decoder with semantic feedback, and the joint training objective. All
//! gradients come from a small reverse-mode tape over `f64` matrices.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod modules;
pub mod nn;
pub mod tape;
pub mod train;

pub use backbone::{DeskBackbone, VisualBackbone};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use config::{ModalitySwitches, ModelConfig, SfPooling};
pub use eval::{evaluate, micro_f1, semantic_f1, Evaluation, GeneratedCaption};
pub use gradcheck::{check_gradients, jitter_params, random_input, TensorCheck};
pub use model::{argmax, CaptionModel, ForwardPass, Losses, ModelInput};
pub use tape::{Grads, Mat, ParamId, ParamStore, Tape, Var};
pub use train::{fit, train_step, AdamW, AdamWConfig, StepRecord, TrainConfig, TrainOutcome};

use shotcap_core::metrics::MetricError;
use shotcap_core::pipeline::PipelineError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of {len} tokens exceeds the limit of {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("no non-pad caption positions")]
    AllPadded,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss or gradient at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
