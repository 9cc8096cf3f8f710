use std::collections::{HashSet, VecDeque};
use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{
    build_user_graph, shortest_path_with_stats, KnowledgeGraph, LazyUserGraph, LocalSubgraph, Normalization,
};

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchMode {
    /// Score only the rows of the ball around the user's items, search it.
    Local,
    /// Score the whole user graph, search it.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    /// Catalogue sizes `|I|` to measure.
    pub item_counts: Vec<usize>,
    /// Interacted items per user `I_u`; the local subgraph's centers.
    pub user_items: usize,
    /// Mean number of knowledge-graph links per item.
    pub mean_degree: f64,
    pub n_relations: usize,
    pub dim: usize,
    /// Neighbour levels `1..=levels` at which targets are planted.
    pub levels: usize,
    /// Timed repeats per record; medians are reported.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            item_counts: vec![1_000, 10_000],
            user_items: 20,
            mean_degree: 4.0,
            n_relations: 4,
            dim: 8,
            levels: 3,
            repeats: 30,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidArgument(m.into()));
        if self.item_counts.is_empty() || self.item_counts.iter().any(|&n| n < 2) {
            return bad("item_counts must list sizes >= 2");
        }
        if self.user_items == 0 || self.item_counts.iter().any(|&n| n < self.user_items) {
            return bad("user_items must be >= 1 and at most every item count");
        }
        if !(self.mean_degree > 0.0) || self.n_relations == 0 || self.dim == 0 {
            return bad("mean_degree, n_relations and dim must be positive");
        }
        if self.levels == 0 || self.repeats == 0 {
            return bad("levels and repeats must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub mode: SearchMode,
    pub n_items: usize,
    pub level: usize,
    pub reachable: bool,
    pub hop_count: Option<usize>,
    /// Median wall time of graph preparation plus search.
    pub wall_ns: u64,
    /// Rows scored plus nodes settled by the search (median).
    pub nodes_touched: usize,
    /// Nodes held by the searched graph.
    pub peak_live_nodes: usize,
    pub settled: usize,
}

/// Random item-only knowledge graph with `n·mean_degree/2` distinct links
/// under random relations, random relation embeddings and a random user
/// vector.
pub fn bench_graph(
    n_items: usize,
    mean_degree: f64,
    n_relations: usize,
    dim: usize,
    seed: u64,
) -> Result<(KnowledgeGraph, Vec<f64>), EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let want = ((n_items as f64 * mean_degree / 2.0).round() as usize).min(n_items * (n_items - 1) / 2);
    let mut seen = HashSet::with_capacity(want);
    let mut triples = Vec::with_capacity(want);
    while triples.len() < want {
        let (a, b) = (rng.random_range(0..n_items), rng.random_range(0..n_items));
        if a != b && seen.insert((a.min(b), a.max(b))) {
            triples.push((a, rng.random_range(0..n_relations), b));
        }
    }
    let mut kg = KnowledgeGraph::from_triples(n_items, n_items, n_relations, triples)?;
    let emb = (0..n_relations).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    kg.set_relation_embeddings(emb)?;
    let user = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    Ok((kg, user))
}

/// Hop distance from `src` to every item over the knowledge-graph links.
fn bfs_levels(kg: &KnowledgeGraph, src: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; kg.n_items()];
    dist[src] = Some(0);
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for &(v, _) in kg.links(u) {
            if v < kg.n_items() && dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

fn median<T: Copy + Ord>(mut xs: Vec<T>) -> T {
    xs.sort_unstable();
    xs[xs.len() / 2]
}

struct Run {
    nanos: u64,
    touched: usize,
    live: usize,
    settled: usize,
    hops: Option<usize>,
}

fn run_once(
    mode: SearchMode,
    kg: &KnowledgeGraph,
    user: &[f64],
    centers: &[usize],
    level: usize,
    target: usize,
) -> Result<Run, EvalError> {
    let src = centers[0];
    let t0 = Instant::now();
    let (path, stats, rows, live) = match mode {
        SearchMode::Global => {
            let g = build_user_graph(kg, 0, user, None, Normalization::Softmax)?;
            let (p, s) = shortest_path_with_stats(&g, src, target)?;
            (p, s, g.nodes().len(), g.nodes().len())
        }
        SearchMode::Local => {
            let lazy = LazyUserGraph::new(kg, user, Normalization::Softmax)?;
            let mut sub = LocalSubgraph::new(centers, &lazy)?;
            sub.expand_to(level, &lazy)?;
            let (p, s) = if sub.contains(target) {
                shortest_path_with_stats(&sub, src, target)?
            } else {
                (None, Default::default())
            };
            (p, s, lazy.materialized(), sub.n_nodes())
        }
    };
    let nanos = t0.elapsed().as_nanos() as u64;
    Ok(Run { nanos, touched: rows + stats.settled, live, settled: stats.settled, hops: path.map(|p| p.hop_count) })
}

/// For every catalogue size and level, plants a target exactly `level` hops
/// from one of `user_items` random items and times both search modes.
pub fn bench_search(cfg: &BenchConfig) -> Result<Vec<BenchRecord>, EvalError> {
    cfg.validate()?;
    let mut out = Vec::new();
    for (k, &n) in cfg.item_counts.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(k as u64);
        let (kg, user) = bench_graph(n, cfg.mean_degree, cfg.n_relations, cfg.dim, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let centers: Vec<usize> = sample(&mut rng, n, cfg.user_items).into_vec();
        let dist = bfs_levels(&kg, centers[0]);
        for level in 1..=cfg.levels {
            let at_level: Vec<usize> = (0..n).filter(|&i| dist[i] == Some(level)).collect();
            for mode in [SearchMode::Local, SearchMode::Global] {
                if at_level.is_empty() {
                    out.push(BenchRecord {
                        mode,
                        n_items: n,
                        level,
                        reachable: false,
                        hop_count: None,
                        wall_ns: 0,
                        nodes_touched: 0,
                        peak_live_nodes: 0,
                        settled: 0,
                    });
                    continue;
                }
                let target = at_level[rng.random_range(0..at_level.len())];
                run_once(mode, &kg, &user, &centers, level, target)?;
                let runs = (0..cfg.repeats)
                    .map(|_| run_once(mode, &kg, &user, &centers, level, target))
                    .collect::<Result<Vec<_>, _>>()?;
                out.push(BenchRecord {
                    mode,
                    n_items: n,
                    level,
                    reachable: runs[0].hops.is_some(),
                    hop_count: runs[0].hops,
                    wall_ns: median(runs.iter().map(|r| r.nanos).collect()),
                    nodes_touched: median(runs.iter().map(|r| r.touched).collect()),
                    peak_live_nodes: runs[0].live,
                    settled: runs[0].settled,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_bench_csv<W: Write>(out: W, records: &[BenchRecord]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln f(record)` against `ln n_items` over the
/// reachable records of one mode and level.
pub fn log_log_slope(
    records: &[BenchRecord],
    mode: SearchMode,
    level: usize,
    f: impl Fn(&BenchRecord) -> f64,
) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.mode == mode && r.level == level && r.reachable && f(r) > 0.0)
        .map(|r| ((r.n_items as f64).ln(), f(r).ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}
