use std::collections::HashMap;

use super::{KgError, NeighbourSource};

/// Ball of radius `depth` around a set of center items, with the induced
/// weighted edges copied from the source graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSubgraph {
    centers: Vec<usize>,
    depth: usize,
    nodes: Vec<usize>,
    index: HashMap<usize, usize>,
    /// Full source row of every included node.
    source_rows: Vec<Vec<(usize, f64)>>,
    /// Source row restricted to included nodes.
    induced: Vec<Vec<(usize, f64)>>,
    frontier: Vec<usize>,
}

impl LocalSubgraph {
    /// Depth-0 subgraph holding only `centers` (duplicates dropped, first
    /// occurrence kept).
    pub fn new(centers: &[usize], source: &impl NeighbourSource) -> Result<Self, KgError> {
        let mut sub = Self {
            centers: Vec::new(),
            depth: 0,
            nodes: Vec::new(),
            index: HashMap::new(),
            source_rows: Vec::new(),
            induced: Vec::new(),
            frontier: Vec::new(),
        };
        let mut fresh = Vec::new();
        for &c in centers {
            if c >= source.n_items() {
                return Err(KgError::UnknownNode(c));
            }
            if !sub.index.contains_key(&c) {
                sub.add_node(c, source)?;
                sub.centers.push(c);
                fresh.push(c);
            }
        }
        sub.link(&fresh);
        sub.frontier = fresh;
        Ok(sub)
    }

    fn add_node(&mut self, item: usize, source: &impl NeighbourSource) -> Result<(), KgError> {
        self.index.insert(item, self.nodes.len());
        self.nodes.push(item);
        self.source_rows.push(source.row(item)?);
        self.induced.push(Vec::new());
        Ok(())
    }

    /// Recomputes the induced rows of `fresh` nodes and of every included
    /// neighbour pointing at them.
    fn link(&mut self, fresh: &[usize]) {
        let mut touched: Vec<usize> = Vec::new();
        for &v in fresh {
            let k = self.index[&v];
            touched.push(k);
            for &(j, _) in &self.source_rows[k] {
                if let Some(&kj) = self.index.get(&j) {
                    touched.push(kj);
                }
            }
        }
        touched.sort_unstable();
        touched.dedup();
        for k in touched {
            self.induced[k] = self.source_rows[k].iter().copied().filter(|(j, _)| self.index.contains_key(j)).collect();
        }
    }

    /// Adds every source neighbour of the current frontier and increments
    /// the depth. Past the diameter of the centers' components only the
    /// depth changes.
    pub fn expand(&mut self, source: &impl NeighbourSource) -> Result<(), KgError> {
        let mut fresh = Vec::new();
        let frontier = std::mem::take(&mut self.frontier);
        for v in frontier {
            let row = self.source_rows[self.index[&v]].clone();
            for (j, _) in row {
                if !self.index.contains_key(&j) {
                    self.add_node(j, source)?;
                    fresh.push(j);
                }
            }
        }
        self.link(&fresh);
        self.frontier = fresh;
        self.depth += 1;
        Ok(())
    }

    /// Expands until `depth` is reached.
    pub fn expand_to(&mut self, depth: usize, source: &impl NeighbourSource) -> Result<(), KgError> {
        while self.depth < depth {
            self.expand(source)?;
        }
        Ok(())
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Included items, centers first, then in discovery order.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.index.contains_key(&item)
    }

    pub fn local_index(&self, item: usize) -> Option<usize> {
        self.index.get(&item).copied()
    }

    /// Induced `(item, weight)` neighbours of an included item.
    pub fn neighbours(&self, item: usize) -> &[(usize, f64)] {
        self.index.get(&item).map_or(&[], |&k| &self.induced[k])
    }

    /// Induced rows in local indices, ready for a GCN adjacency.
    pub fn local_rows(&self) -> Vec<Vec<(usize, f64)>> {
        self.induced.iter().map(|row| row.iter().map(|&(j, w)| (self.index[&j], w)).collect()).collect()
    }

    pub fn n_edges(&self) -> usize {
        self.induced.iter().map(Vec::len).sum()
    }

    /// Largest source fanout among included nodes.
    pub fn max_fanout(&self) -> usize {
        self.source_rows.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// True when the last expansion added nothing.
    pub fn saturated(&self) -> bool {
        self.frontier.is_empty()
    }
}
