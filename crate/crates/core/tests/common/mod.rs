#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use kgrl_core::kg::{build_user_graph, KnowledgeGraph, Normalization, UserSpecificGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random item-only knowledge graph: each pair linked with probability `p`
/// under a random relation (sometimes two), relation embeddings and a user
/// vector drawn uniformly from `[-2, 2]^d`.
pub fn random_kg(n: usize, p: f64, n_relations: usize, d: usize, seed: u64) -> (KnowledgeGraph, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < p {
                triples.push((a, rng.random_range(0..n_relations), b));
                if rng.random::<f64>() < 0.1 {
                    triples.push((b, rng.random_range(0..n_relations), a));
                }
            }
        }
    }
    let mut kg = KnowledgeGraph::from_triples(n, n, n_relations, triples).unwrap();
    let emb = (0..n_relations).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    kg.set_relation_embeddings(emb).unwrap();
    let user = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    (kg, user)
}

pub fn random_user_graph(n: usize, p: f64, seed: u64) -> UserSpecificGraph {
    let (kg, user) = random_kg(n, p, 3, 4, seed);
    build_user_graph(&kg, 0, &user, None, Normalization::Softmax).unwrap()
}

/// All-pairs hop distances; `usize::MAX` marks unreachable.
pub fn floyd_warshall_hops(g: &UserSpecificGraph) -> Vec<Vec<usize>> {
    let n = g.n_items();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for &(j, _) in g.neighbours(i) {
            d[i][j] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.into_iter().map(|r| r.into_iter().map(|x| if x >= inf { usize::MAX } else { x }).collect()).collect()
}

/// Nodes within `radius` hops of any center.
pub fn bfs_ball(g: &UserSpecificGraph, centers: &[usize], radius: usize) -> BTreeSet<usize> {
    let mut dist = vec![usize::MAX; g.n_items()];
    let mut queue = VecDeque::new();
    for &c in centers {
        if dist[c] != 0 {
            dist[c] = 0;
            queue.push_back(c);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == radius {
            continue;
        }
        for &(v, _) in g.neighbours(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    (0..g.n_items()).filter(|&i| dist[i] != usize::MAX).collect()
}

/// Central-difference derivative of `f` at `x` along coordinate `k`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[k] += h;
    let mut xm = x.to_vec();
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Planted synthetic data run through the standard preprocessing and split,
/// with a fitted click model and environment.
pub fn planted_env(
    n_users: usize,
    n_items: usize,
    seed: u64,
    lmf_epochs: usize,
) -> (kgrl_core::data::Dataset, kgrl_core::env::LmfModel, kgrl_core::env::Environment) {
    use kgrl_core::data::{generate_synthetic, preprocess, split};
    use kgrl_core::env::{fit_lmf, EnvConfig, Environment, LmfConfig};
    let raw = generate_synthetic(n_users, n_items, 4, 0.2, seed).unwrap().dataset;
    let ds = split(&preprocess(&raw, 10, 3.0).unwrap(), seed);
    let lmf = fit_lmf(&ds, &LmfConfig { epochs: lmf_epochs, ..LmfConfig::default() }, seed).unwrap().model;
    let env = Environment::new(&ds, lmf.clone(), EnvConfig::default()).unwrap();
    (ds, lmf, env)
}

/// Largest relative error between the analytic gradient of
/// `L = Σ out ⊙ R` (fixed random `R`) with respect to every entry of every
/// parameter in `store` and its central difference with step `h`.
pub fn max_gradient_error(
    store: &kgrl_core::nn::ParamStore,
    build: &dyn Fn(&mut kgrl_core::nn::Tape, &kgrl_core::nn::ParamStore) -> kgrl_core::nn::Var,
    h: f64,
    seed: u64,
) -> f64 {
    use kgrl_core::nn::{Tape, Tensor2};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = {
        let mut tape = Tape::new();
        let out = build(&mut tape, store);
        tape.value(out).shape()
    };
    let r = Tensor2::from_vec(shape.0, shape.1, (0..shape.0 * shape.1).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let loss = |s: &kgrl_core::nn::ParamStore| -> f64 {
        let mut tape = Tape::new();
        let out = build(&mut tape, s);
        tape.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    };
    let mut tape = Tape::new();
    let out = build(&mut tape, store);
    let mut analytic = store.clone();
    analytic.zero_grads();
    tape.backward(out, Some(r.clone())).unwrap().accumulate_into(&tape, &mut analytic);
    let mut worst: f64 = 0.0;
    for id in store.ids() {
        let n = store.value(id).data().len();
        for k in 0..n {
            let x = store.value(id).data().to_vec();
            let mut f = |v: &[f64]| {
                let mut s = store.clone();
                s.value_mut(id).data_mut().copy_from_slice(v);
                loss(&s)
            };
            let numeric = central_difference(&mut f, &x, k, h);
            worst = worst.max(relative_error(analytic.grad(id).data()[k], numeric));
        }
    }
    worst
}

/// Parameter store with uniformly random tensors of the given shapes.
pub fn random_store(shapes: &[(&str, usize, usize)], scale: f64, seed: u64) -> kgrl_core::nn::ParamStore {
    use kgrl_core::nn::{ParamStore, Tensor2};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new(seed);
    for &(name, r, c) in shapes {
        let v = (0..r * c).map(|_| rng.random_range(-scale..scale)).collect();
        s.insert(name, Tensor2::from_vec(r, c, v).unwrap()).unwrap();
    }
    s
}
