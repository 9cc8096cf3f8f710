//! DDPG training with a replay buffer and target networks, and the
//! per-user local knowledge network trainer it calls after every critic
//! update.

mod buffer;
mod ddpg;
mod lkg;
mod run;

pub use buffer::ReplayBuffer;
pub use ddpg::{soft_update, DdpgConfig, DdpgTrainer, GraphSource, UpdateKind};
pub use lkg::{depth_budget, lkg_loss, train_lkg, LkgConfig, LkgOutcome, LkgTrainer, PREDICTION_CLAMP};
pub use run::{train_ddpg, train_ddpg_with, EpisodeRecord, KnowledgeNetworks, StepRecord, TrainConfig, TrainLog};

use crate::agent::AgentError;
use crate::env::EnvError;
use crate::eval::EvalError;
use crate::kg::KgError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
