//! Interaction logs, relation triples, preprocessing and splits.

mod io;
mod preprocess;
mod synth;

use serde::{Deserialize, Serialize};

pub use io::{load_dataset, load_dataset_dir, load_triples_into, save_dataset_dir, write_ratings, SourceFormat};
pub use preprocess::{preprocess, split, DEFAULT_MIN_INTERACTIONS, DEFAULT_RELEVANCE_THRESHOLD};
pub use synth::{generate_synthetic, PlantedModel, SyntheticData, PLANTED_RANK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "validation" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub timestamp: i64,
    /// `rating > relevance_threshold`, set by [`preprocess`].
    pub relevant: bool,
    pub split: Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// Interactions and relation triples over contiguous indices, with the maps
/// back to the original identifiers.
///
/// Items occupy entity indices `0..n_items`; entities that are not items
/// follow them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub interactions: Vec<Interaction>,
    pub triples: Vec<RelationTriple>,
    pub n_users: usize,
    pub n_items: usize,
    pub n_relations: usize,
    pub n_entities: usize,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub relation_ids: Vec<String>,
    /// Original ids of the non-item entities `n_items..n_entities`.
    pub extra_entity_ids: Vec<String>,
    /// Original rating range, recorded once ratings are rescaled.
    pub original_rating_range: Option<(f64, f64)>,
    pub split_seed: Option<u64>,
}

impl Dataset {
    pub fn empty() -> Self {
        Self {
            interactions: Vec::new(),
            triples: Vec::new(),
            n_users: 0,
            n_items: 0,
            n_relations: 0,
            n_entities: 0,
            user_ids: Vec::new(),
            item_ids: Vec::new(),
            relation_ids: Vec::new(),
            extra_entity_ids: Vec::new(),
            original_rating_range: None,
            split_seed: None,
        }
    }

    /// Interactions of every user, grouped by user index, each group in
    /// timestamp order (ties by item index).
    pub fn by_user(&self) -> Vec<Vec<&Interaction>> {
        let mut groups: Vec<Vec<&Interaction>> = vec![Vec::new(); self.n_users];
        for it in &self.interactions {
            groups[it.user].push(it);
        }
        for g in &mut groups {
            g.sort_by_key(|it| (it.timestamp, it.item));
        }
        groups
    }

    /// Relevant items of `user` in `split`, oldest first.
    pub fn relevant_items(&self, user: usize, split: Split) -> Vec<usize> {
        let mut its: Vec<&Interaction> =
            self.interactions.iter().filter(|it| it.user == user && it.split == split && it.relevant).collect();
        its.sort_by_key(|it| (it.timestamp, it.item));
        its.into_iter().map(|it| it.item).collect()
    }

    pub fn split_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for it in &self.interactions {
            c[it.split as usize] += 1;
        }
        c
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for (k, it) in self.interactions.iter().enumerate() {
            if it.user >= self.n_users || it.item >= self.n_items {
                return Err(DataError::Invalid(format!("interaction {} references out-of-range ids", k)));
            }
            if !it.rating.is_finite() {
                return Err(DataError::Invalid(format!("interaction {} has non-finite rating", k)));
            }
        }
        for (k, t) in self.triples.iter().enumerate() {
            if t.head == t.tail {
                return Err(DataError::Invalid(format!("triple {} is a self-loop", k)));
            }
            if t.head >= self.n_entities || t.tail >= self.n_entities || t.relation >= self.n_relations {
                return Err(DataError::Invalid(format!("triple {} references out-of-range ids", k)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: u64, message: String },
    #[error("{0}: file contains no records")]
    EmptyFile(String),
    #[error("empty dataset after filtering")]
    EmptyAfterFiltering,
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
