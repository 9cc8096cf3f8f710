//! Minimal dense-tensor engine: tape-recorded forward passes, reverse-mode
//! gradients, the layers the recommender needs, optimizers and checkpoints.

mod checkpoint;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Manifest, SectionEntry, TensorEntry};
pub use layers::{
    attention, attention_forward, gcn, gcn_forward, linear, linear_forward, positional_embed, positional_embed_forward,
    Activation, GcnAdjacency,
};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use params::{ParamId, ParamStore};
pub use tape::{sigmoid, Gradients, OpTag, SparseMatrix, Tape, Var};
pub use tensor::{dot, Tensor2};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("non-finite values in parameter or gradient {0:?}")]
    NonFinite(String),
    #[error("backward called before any forward pass was recorded")]
    BackwardWithoutForward,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
