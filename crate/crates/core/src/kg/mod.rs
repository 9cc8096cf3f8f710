//! Knowledge graph, per-user weighted item graphs, local subgraphs, shortest
//! paths and the path-based reward.

mod graph;
mod io;
mod reward;
mod search;
mod subgraph;
mod user_graph;

pub use graph::{relation_score, KnowledgeGraph};
pub use io::{read_edge_list, write_edge_list, EdgeListHeader};
pub use reward::{graph_reward, DEFAULT_EPSILON, DEFAULT_R_MAX};
pub use search::{shortest_path, shortest_path_with_stats, GraphView, PathResult, SearchStats};
pub use subgraph::LocalSubgraph;
pub use user_graph::{build_user_graph, LazyUserGraph, NeighbourSource, Normalization, UserSpecificGraph};

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ratio normalization needs non-negative scores; item {item} has score {score} toward {neighbour}")]
    NegativeScore { item: usize, neighbour: usize, score: f64 },
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
