//! Simulated users: a logistic-matrix-factorization click model and the
//! episode loop that turns recommendations into feedback and rewards.

mod episode;
mod lmf;

pub use episode::{
    write_trace_jsonl, EnvConfig, Environment, Episode, EpisodeState, Feedback, StepOutcome, TraceRecord, Transition,
};
pub use lmf::{auc, fit_lmf, LmfConfig, LmfFit, LmfModel};

use crate::data::DataError;
use crate::kg::KgError;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("LMF training diverged at epoch {epoch} (loss is not finite); try a learning rate below {lr}")]
    Diverged { epoch: usize, lr: f64 },
    #[error("user {0} has no relevant training items to start an episode from")]
    NoRelevantItems(usize),
    #[error("episode is over")]
    EpisodeOver,
    #[error("item {0} is not a candidate")]
    InvalidAction(usize),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
