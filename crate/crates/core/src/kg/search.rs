use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::Serialize;

use super::{KgError, LocalSubgraph, UserSpecificGraph};

/// Read-only adjacency for path search.
pub trait GraphView {
    fn contains(&self, item: usize) -> bool;
    fn neighbours(&self, item: usize) -> &[(usize, f64)];
}

impl GraphView for UserSpecificGraph {
    fn contains(&self, item: usize) -> bool {
        UserSpecificGraph::contains(self, item)
    }

    fn neighbours(&self, item: usize) -> &[(usize, f64)] {
        UserSpecificGraph::neighbours(self, item)
    }
}

impl GraphView for LocalSubgraph {
    fn contains(&self, item: usize) -> bool {
        LocalSubgraph::contains(self, item)
    }

    fn neighbours(&self, item: usize) -> &[(usize, f64)] {
        LocalSubgraph::neighbours(self, item)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    /// Number of edges on the path.
    pub hop_count: usize,
    /// Sum of the traversed edge weights `w(path[k], path[k+1])`.
    pub weight_sum: f64,
    pub path: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    pub settled: usize,
    pub pushed: usize,
    pub peak_heap: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Key {
    hops: usize,
    weight: f64,
    path: Vec<usize>,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.hops
            .cmp(&other.hops)
            .then_with(|| self.weight.total_cmp(&other.weight))
            .then_with(|| self.path.cmp(&other.path))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Fewest hops from `src` to `dst`; among those the smallest weight sum,
/// then the lexicographically smallest node sequence. `None` when `dst` is
/// unreachable.
pub fn shortest_path(g: &impl GraphView, src: usize, dst: usize) -> Result<Option<PathResult>, KgError> {
    shortest_path_with_stats(g, src, dst).map(|(r, _)| r)
}

pub fn shortest_path_with_stats(
    g: &impl GraphView,
    src: usize,
    dst: usize,
) -> Result<(Option<PathResult>, SearchStats), KgError> {
    for v in [src, dst] {
        if !g.contains(v) {
            return Err(KgError::UnknownNode(v));
        }
    }
    let mut stats = SearchStats::default();
    let mut best: HashMap<usize, Key> = HashMap::new();
    let mut settled: HashSet<usize> = HashSet::new();
    let mut heap = BinaryHeap::new();
    let start = Key { hops: 0, weight: 0.0, path: vec![src] };
    best.insert(src, start.clone());
    heap.push(Reverse(start));
    stats.pushed = 1;
    stats.peak_heap = 1;

    while let Some(Reverse(key)) = heap.pop() {
        let u = *key.path.last().expect("paths are non-empty");
        if !settled.insert(u) {
            continue;
        }
        stats.settled += 1;
        if u == dst {
            return Ok((Some(PathResult { hop_count: key.hops, weight_sum: key.weight, path: key.path }), stats));
        }
        for &(v, w) in g.neighbours(u) {
            if settled.contains(&v) {
                continue;
            }
            let mut path = key.path.clone();
            path.push(v);
            let cand = Key { hops: key.hops + 1, weight: key.weight + w, path };
            if best.get(&v).is_some_and(|b| *b <= cand) {
                continue;
            }
            best.insert(v, cand.clone());
            heap.push(Reverse(cand));
            stats.pushed += 1;
            stats.peak_heap = stats.peak_heap.max(heap.len());
        }
    }
    Ok((None, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> UserSpecificGraph {
        // rows are built directly (weights need not be normalized here)
        let mut rows = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            rows[a].push((b, w));
            rows[b].push((a, w));
        }
        let nodes: Vec<usize> = (0..n).collect();
        for r in &mut rows {
            let total: f64 = r.iter().map(|&(_, w)| w).sum();
            r.iter_mut().for_each(|(_, w)| *w /= total);
        }
        UserSpecificGraph::from_rows(0, n, &nodes, rows).unwrap()
    }

    struct Raw(Vec<Vec<(usize, f64)>>);

    impl GraphView for Raw {
        fn contains(&self, item: usize) -> bool {
            item < self.0.len()
        }
        fn neighbours(&self, item: usize) -> &[(usize, f64)] {
            &self.0[item]
        }
    }

    #[test]
    fn identity_path() {
        let g = graph(2, &[(0, 1, 1.0)]);
        let r = shortest_path(&g, 1, 1).unwrap().unwrap();
        assert_eq!((r.hop_count, r.weight_sum, r.path), (0, 0.0, vec![1]));
    }

    #[test]
    fn hops_dominate_weight() {
        // a=0, b=1, c=2
        let g = Raw(vec![vec![(1, 0.5), (2, 0.9)], vec![(0, 0.5), (2, 0.5)], vec![(0, 0.9), (1, 0.5)]]);
        let r = shortest_path(&g, 0, 2).unwrap().unwrap();
        assert_eq!(r.hop_count, 1);
        assert_eq!(r.weight_sum, 0.9);
        assert_eq!(r.path, vec![0, 2]);
    }

    #[test]
    fn equal_hops_prefer_lighter_then_lexicographic() {
        // 0-1-3 and 0-2-3 both two hops
        let g = Raw(vec![
            vec![(1, 0.4), (2, 0.3)],
            vec![(0, 0.5), (3, 0.5)],
            vec![(0, 0.5), (3, 0.5)],
            vec![(1, 0.5), (2, 0.5)],
        ]);
        assert_eq!(shortest_path(&g, 0, 3).unwrap().unwrap().path, vec![0, 2, 3]);
        let tied = Raw(vec![
            vec![(1, 0.5), (2, 0.5)],
            vec![(0, 0.5), (3, 0.5)],
            vec![(0, 0.5), (3, 0.5)],
            vec![(1, 0.5), (2, 0.5)],
        ]);
        assert_eq!(shortest_path(&tied, 0, 3).unwrap().unwrap().path, vec![0, 1, 3]);
    }

    #[test]
    fn unreachable_and_unknown() {
        let g = graph(4, &[(0, 1, 1.0), (2, 3, 1.0)]);
        assert!(shortest_path(&g, 0, 3).unwrap().is_none());
        assert!(matches!(shortest_path(&g, 0, 7), Err(KgError::UnknownNode(7))));
    }

    #[test]
    fn stats_count_early_exit() {
        let g = graph(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0)]);
        let (r, s) = shortest_path_with_stats(&g, 0, 1).unwrap();
        assert_eq!(r.unwrap().hop_count, 1);
        assert_eq!(s.settled, 2);
        assert!(s.pushed >= s.settled);
    }
}
