use crate::data::Dataset;
use crate::nn::{dot, Tensor2};

use super::KgError;

/// Global entity/relation store.
///
/// Links are undirected: a triple `(h, r, t)` is listed under both `h` and
/// `t`. Items are entities `0..n_items`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    n_entities: usize,
    n_items: usize,
    n_relations: usize,
    adjacency: Vec<Vec<(usize, usize)>>,
    relation_embeddings: Vec<Vec<f64>>,
}

impl KnowledgeGraph {
    /// Builds the adjacency from `(head, relation, tail)` triples. Duplicate
    /// triples collapse; self-loops are rejected.
    pub fn from_triples(
        n_entities: usize,
        n_items: usize,
        n_relations: usize,
        triples: impl IntoIterator<Item = (usize, usize, usize)>,
    ) -> Result<Self, KgError> {
        if n_items > n_entities {
            return Err(KgError::InvalidArgument(format!("{} items but only {} entities", n_items, n_entities)));
        }
        let mut adjacency = vec![Vec::new(); n_entities];
        for (h, r, t) in triples {
            if h >= n_entities || t >= n_entities {
                return Err(KgError::UnknownNode(h.max(t)));
            }
            if r >= n_relations {
                return Err(KgError::InvalidArgument(format!("relation {} out of range {}", r, n_relations)));
            }
            if h == t {
                return Err(KgError::InvalidArgument(format!("self-loop on entity {}", h)));
            }
            adjacency[h].push((t, r));
            adjacency[t].push((h, r));
        }
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
        }
        Ok(Self { n_entities, n_items, n_relations, adjacency, relation_embeddings: vec![Vec::new(); n_relations] })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self, KgError> {
        Self::from_triples(
            ds.n_entities,
            ds.n_items,
            ds.n_relations,
            ds.triples.iter().map(|t| (t.head, t.relation, t.tail)),
        )
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    /// `(neighbour, relation)` pairs of `entity`, sorted.
    pub fn links(&self, entity: usize) -> &[(usize, usize)] {
        &self.adjacency[entity]
    }

    pub fn n_links(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn relation_embedding(&self, relation: usize) -> &[f64] {
        &self.relation_embeddings[relation]
    }

    /// Embedding dimension; 0 until embeddings are set.
    pub fn embedding_dim(&self) -> usize {
        self.relation_embeddings.first().map_or(0, Vec::len)
    }

    pub fn set_relation_embeddings(&mut self, embeddings: Vec<Vec<f64>>) -> Result<(), KgError> {
        if embeddings.len() != self.n_relations {
            return Err(KgError::DimensionMismatch { expected: self.n_relations, found: embeddings.len() });
        }
        let d = embeddings.first().map_or(0, Vec::len);
        for e in &embeddings {
            if e.len() != d {
                return Err(KgError::DimensionMismatch { expected: d, found: e.len() });
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(KgError::InvalidArgument("non-finite relation embedding".into()));
            }
        }
        self.relation_embeddings = embeddings;
        Ok(())
    }

    /// Places each relation at the mean midpoint `(y_h + y_t) / 2` of the
    /// item pairs it links, using one row of `item_factors` per item.
    /// Relations without an item-item link get the zero vector.
    pub fn derive_relation_embeddings(&mut self, item_factors: &Tensor2) -> Result<(), KgError> {
        if item_factors.rows() != self.n_items {
            return Err(KgError::DimensionMismatch { expected: self.n_items, found: item_factors.rows() });
        }
        let d = item_factors.cols();
        let mut sums = vec![vec![0.0; d]; self.n_relations];
        let mut counts = vec![0usize; self.n_relations];
        for i in 0..self.n_items {
            for &(j, r) in &self.adjacency[i] {
                if j < self.n_items && i < j {
                    for ((s, a), b) in sums[r].iter_mut().zip(item_factors.row(i)).zip(item_factors.row(j)) {
                        *s += 0.5 * (a + b);
                    }
                    counts[r] += 1;
                }
            }
        }
        for (s, &c) in sums.iter_mut().zip(&counts) {
            if c > 0 {
                s.iter_mut().for_each(|x| *x /= c as f64);
            }
        }
        self.set_relation_embeddings(sums)
    }
}

/// `g(u, r) = ⟨u, r⟩`.
pub fn relation_score(user_vec: &[f64], relation_vec: &[f64]) -> Result<f64, KgError> {
    if user_vec.len() != relation_vec.len() {
        return Err(KgError::DimensionMismatch { expected: user_vec.len(), found: relation_vec.len() });
    }
    Ok(dot(user_vec, relation_vec))
}
