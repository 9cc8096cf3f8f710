use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{relation_score, KgError, KnowledgeGraph};

/// How raw relation scores over a neighbourhood become edge weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `exp(f_ij) / Σ_k exp(f_ik)`; defined for any real scores.
    #[default]
    Softmax,
    /// `f_ij / Σ_k f_ik`; needs non-negative scores with a positive sum.
    Ratio,
}

/// Normalized weights of the item-item links of `item`, restricted to
/// neighbours accepted by `keep`. When several relations join the same pair
/// the highest-scoring one counts.
fn normalized_row(
    kg: &KnowledgeGraph,
    user_vec: &[f64],
    item: usize,
    normalization: Normalization,
    keep: impl Fn(usize) -> bool,
) -> Result<Vec<(usize, f64)>, KgError> {
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for &(j, r) in kg.links(item) {
        if j >= kg.n_items() || !keep(j) {
            continue;
        }
        let s = relation_score(user_vec, kg.relation_embedding(r))?;
        match scored.last_mut() {
            Some(last) if last.0 == j => last.1 = last.1.max(s),
            _ => scored.push((j, s)),
        }
    }
    if scored.is_empty() {
        return Ok(scored);
    }
    match normalization {
        Normalization::Softmax => {
            let m = scored.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (_, s) in &mut scored {
                *s = (*s - m).exp();
                total += *s;
            }
            scored.iter_mut().for_each(|(_, s)| *s /= total);
        }
        Normalization::Ratio => {
            if let Some(&(j, s)) = scored.iter().find(|&&(_, s)| s < 0.0) {
                return Err(KgError::NegativeScore { item, neighbour: j, score: s });
            }
            let total: f64 = scored.iter().map(|&(_, s)| s).sum();
            if total <= 0.0 {
                return Err(KgError::InvalidArgument(format!("ratio normalization of item {} divides by zero", item)));
            }
            scored.iter_mut().for_each(|(_, s)| *s /= total);
        }
    }
    Ok(scored)
}

/// Per-user item graph with normalized edge weights `w(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSpecificGraph {
    owner: usize,
    present: Vec<bool>,
    nodes: Vec<usize>,
    rows: Vec<Vec<(usize, f64)>>,
}

/// Builds the graph of `owner` over `items` (all items when `None`).
pub fn build_user_graph(
    kg: &KnowledgeGraph,
    owner: usize,
    user_vec: &[f64],
    items: Option<&[usize]>,
    normalization: Normalization,
) -> Result<UserSpecificGraph, KgError> {
    if user_vec.len() != kg.embedding_dim() {
        return Err(KgError::DimensionMismatch { expected: kg.embedding_dim(), found: user_vec.len() });
    }
    let n = kg.n_items();
    let mut present = vec![items.is_none(); n];
    if let Some(items) = items {
        for &i in items {
            if i >= n {
                return Err(KgError::UnknownNode(i));
            }
            present[i] = true;
        }
    }
    let mut rows = vec![Vec::new(); n];
    for (i, row) in rows.iter_mut().enumerate() {
        if present[i] {
            *row = normalized_row(kg, user_vec, i, normalization, |j| present[j])?;
        }
    }
    let nodes = (0..n).filter(|&i| present[i]).collect();
    Ok(UserSpecificGraph { owner, present, nodes, rows })
}

impl UserSpecificGraph {
    /// Assembles a graph from already-normalized rows, checking the weight
    /// invariants.
    pub fn from_rows(
        owner: usize,
        n_items: usize,
        nodes: &[usize],
        rows: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self, KgError> {
        if rows.len() != n_items {
            return Err(KgError::DimensionMismatch { expected: n_items, found: rows.len() });
        }
        let mut present = vec![false; n_items];
        for &i in nodes {
            *present.get_mut(i).ok_or(KgError::UnknownNode(i))? = true;
        }
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                continue;
            }
            if !present[i] {
                return Err(KgError::UnknownNode(i));
            }
            let mut total = 0.0;
            for &(j, w) in row {
                if j >= n_items || !present[j] || j == i {
                    return Err(KgError::InvalidArgument(format!("edge {} -> {} leaves the node set", i, j)));
                }
                if !(0.0..=1.0).contains(&w) {
                    return Err(KgError::InvalidArgument(format!("weight {} on {} -> {} outside [0, 1]", w, i, j)));
                }
                total += w;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(KgError::InvalidArgument(format!("weights of node {} sum to {}", i, total)));
            }
        }
        let mut rows = rows;
        rows.iter_mut().for_each(|r| r.sort_by_key(|&(j, _)| j));
        let nodes = (0..n_items).filter(|&i| present[i]).collect();
        Ok(Self { owner, present, nodes, rows })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn n_items(&self) -> usize {
        self.present.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn contains(&self, item: usize) -> bool {
        self.present.get(item).copied().unwrap_or(false)
    }

    /// `(j, w(i, j))` for `j ∈ 𝓓(i)`, sorted by `j`.
    pub fn neighbours(&self, item: usize) -> &[(usize, f64)] {
        &self.rows[item]
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let row = &self.rows[i];
        row.binary_search_by_key(&j, |&(k, _)| k).ok().map(|p| row[p].1)
    }

    /// Directed edge count (each undirected link counts twice).
    pub fn n_edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn max_fanout(&self) -> usize {
        self.rows.iter().map(Vec::len).max().unwrap_or(0)
    }
}

/// Where a [`super::LocalSubgraph`] fetches neighbour rows from.
pub trait NeighbourSource {
    fn n_items(&self) -> usize;
    fn row(&self, item: usize) -> Result<Vec<(usize, f64)>, KgError>;
}

impl NeighbourSource for UserSpecificGraph {
    fn n_items(&self) -> usize {
        self.present.len()
    }

    fn row(&self, item: usize) -> Result<Vec<(usize, f64)>, KgError> {
        if !self.contains(item) {
            return Err(KgError::UnknownNode(item));
        }
        Ok(self.rows[item].clone())
    }
}

/// A user graph over all items that normalizes a node's row only when it is
/// first asked for. Used where building the whole graph is the cost being
/// avoided.
pub struct LazyUserGraph<'a> {
    kg: &'a KnowledgeGraph,
    user_vec: &'a [f64],
    normalization: Normalization,
    cache: RefCell<HashMap<usize, Vec<(usize, f64)>>>,
}

impl<'a> LazyUserGraph<'a> {
    pub fn new(kg: &'a KnowledgeGraph, user_vec: &'a [f64], normalization: Normalization) -> Result<Self, KgError> {
        if user_vec.len() != kg.embedding_dim() {
            return Err(KgError::DimensionMismatch { expected: kg.embedding_dim(), found: user_vec.len() });
        }
        Ok(Self { kg, user_vec, normalization, cache: RefCell::new(HashMap::new()) })
    }

    /// Number of distinct rows computed so far.
    pub fn materialized(&self) -> usize {
        self.cache.borrow().len()
    }
}

impl NeighbourSource for LazyUserGraph<'_> {
    fn n_items(&self) -> usize {
        self.kg.n_items()
    }

    fn row(&self, item: usize) -> Result<Vec<(usize, f64)>, KgError> {
        if item >= self.kg.n_items() {
            return Err(KgError::UnknownNode(item));
        }
        if let Some(r) = self.cache.borrow().get(&item) {
            return Ok(r.clone());
        }
        let r = normalized_row(self.kg, self.user_vec, item, self.normalization, |_| true)?;
        self.cache.borrow_mut().insert(item, r.clone());
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star_kg(scores: &[f64]) -> KnowledgeGraph {
        // item 0 linked to items 1..=n, one relation per link, relation k
        // embedded as (scores[k]) so that <u=(1), r_k> = scores[k]
        let n = scores.len();
        let mut kg = KnowledgeGraph::from_triples(n + 1, n + 1, n, (0..n).map(|k| (0, k, k + 1))).unwrap();
        kg.set_relation_embeddings(scores.iter().map(|&s| vec![s]).collect()).unwrap();
        kg
    }

    #[test]
    fn singleton_neighbourhood_gets_weight_one() {
        let g = build_user_graph(&star_kg(&[-3.0]), 0, &[1.0], None, Normalization::Softmax).unwrap();
        assert_eq!(g.neighbours(0), &[(1, 1.0)]);
        assert_eq!(g.neighbours(1), &[(0, 1.0)]);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let g = build_user_graph(&star_kg(&[0.7, 0.7]), 0, &[1.0], None, Normalization::Softmax).unwrap();
        assert_eq!(g.neighbours(0), &[(1, 0.5), (2, 0.5)]);
    }

    #[test]
    fn ratio_mode_matches_raw_ratio_and_rejects_negatives() {
        let g = build_user_graph(&star_kg(&[1.0, 3.0]), 0, &[1.0], None, Normalization::Ratio).unwrap();
        assert_eq!(g.neighbours(0), &[(1, 0.25), (2, 0.75)]);
        let err = build_user_graph(&star_kg(&[1.0, -3.0]), 0, &[1.0], None, Normalization::Ratio);
        assert!(matches!(err, Err(KgError::NegativeScore { item: 0, neighbour: 2, .. })));
    }

    #[test]
    fn parallel_relations_use_the_best_score() {
        let mut kg = KnowledgeGraph::from_triples(3, 3, 2, [(0, 0, 1), (0, 1, 1), (0, 0, 2)]).unwrap();
        kg.set_relation_embeddings(vec![vec![0.0], vec![2.0]]).unwrap();
        let g = build_user_graph(&kg, 0, &[1.0], None, Normalization::Softmax).unwrap();
        let e2 = 2f64.exp();
        assert!((g.weight(0, 1).unwrap() - e2 / (e2 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn item_subset_and_isolated_items() {
        let g =
            build_user_graph(&star_kg(&[1.0, 2.0, 3.0]), 4, &[1.0], Some(&[0, 2, 3]), Normalization::Softmax).unwrap();
        assert_eq!(g.nodes(), &[0, 2, 3]);
        assert!(!g.contains(1));
        assert_eq!(g.neighbours(0).len(), 2);
        let h = build_user_graph(&star_kg(&[1.0]), 0, &[1.0], Some(&[1]), Normalization::Softmax).unwrap();
        assert!(h.neighbours(1).is_empty());
    }

    #[test]
    fn lazy_rows_equal_eager_rows() {
        let kg = star_kg(&[0.1, -0.4, 2.0]);
        let g = build_user_graph(&kg, 0, &[1.3], None, Normalization::Softmax).unwrap();
        let lazy = LazyUserGraph::new(&kg, &[1.3], Normalization::Softmax).unwrap();
        for i in 0..4 {
            assert_eq!(lazy.row(i).unwrap(), g.row(i).unwrap());
        }
        lazy.row(0).unwrap();
        assert_eq!(lazy.materialized(), 4);
    }

    #[test]
    fn from_rows_checks_invariants() {
        assert!(UserSpecificGraph::from_rows(0, 2, &[0, 1], vec![vec![(1, 1.0)], vec![(0, 1.0)]]).is_ok());
        assert!(UserSpecificGraph::from_rows(0, 2, &[0, 1], vec![vec![(1, 0.9)], vec![]]).is_err());
        assert!(UserSpecificGraph::from_rows(0, 2, &[0], vec![vec![(1, 1.0)], vec![]]).is_err());
    }
}
