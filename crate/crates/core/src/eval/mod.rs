//! Top-K metrics, policy evaluation against held-out relevance, ablation
//! runs and the local-versus-global search benchmark.

mod bench;
mod evaluate;
mod metrics;

pub use bench::{bench_graph, bench_search, log_log_slope, write_bench_csv, BenchConfig, BenchRecord, SearchMode};
pub use evaluate::{
    candidates, evaluate, random_precision, rank_user, summarize, MeanStd, MetricReport, Policy, ReportSummary,
    UserMetrics,
};
pub use metrics::{ndcg_at_k, precision_at_k, recall_at_k, RankedList};

use crate::agent::AgentError;
use crate::env::EnvError;
use crate::kg::KgError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no user has relevant items in the evaluated split")]
    NoEvaluableUsers,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
