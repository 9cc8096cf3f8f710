//! Planted latent-factor datasets with a cluster-aligned relation graph.
//!
//! Items are spread over `PLANTED_RANK` clusters; an item's planted factor
//! is its cluster's unit vector plus noise. Each user strongly prefers one
//! cluster and mildly a second. Relation triples only link items of the same
//! cluster, so knowledge-graph distance tracks planted similarity.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use super::{preprocess::DEFAULT_MIN_INTERACTIONS, DataError, Dataset, Interaction, RelationTriple, Split};

pub const PLANTED_RANK: usize = 8;

const FACTOR_NOISE: f64 = 0.3;
const RATING_NOISE: f64 = 0.5;
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone)]
pub struct PlantedModel {
    pub user_factors: Vec<[f64; PLANTED_RANK]>,
    pub item_factors: Vec<[f64; PLANTED_RANK]>,
    pub item_bias: Vec<f64>,
    pub item_cluster: Vec<usize>,
}

impl PlantedModel {
    pub fn score(&self, user: usize, item: usize) -> f64 {
        let u = &self.user_factors[user];
        let v = &self.item_factors[item];
        u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + self.item_bias[item]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub planted: PlantedModel,
}

/// Ratings are on a 1..=5 star scale (original scale; run
/// [`super::preprocess`] to map them onto `[0, 5]`).
pub fn generate_synthetic(
    n_users: usize,
    n_items: usize,
    n_relations: usize,
    density: f64,
    seed: u64,
) -> Result<SyntheticData, DataError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(DataError::InvalidArgument(format!("density {} outside (0, 1]", density)));
    }
    if n_items < DEFAULT_MIN_INTERACTIONS {
        return Err(DataError::InvalidArgument(format!(
            "{} items cannot give every user {} interactions",
            n_items, DEFAULT_MIN_INTERACTIONS
        )));
    }
    if n_users == 0 || n_relations == 0 {
        return Err(DataError::InvalidArgument("need at least one user and one relation".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, FACTOR_NOISE).expect("valid sigma");
    let rating_noise = Normal::new(0.0, RATING_NOISE).expect("valid sigma");

    let mut item_cluster: Vec<usize> = (0..n_items).map(|i| i % PLANTED_RANK).collect();
    item_cluster.shuffle(&mut rng);
    let item_factors: Vec<[f64; PLANTED_RANK]> = item_cluster
        .iter()
        .map(|&c| {
            let mut v = [0.0; PLANTED_RANK];
            for (k, x) in v.iter_mut().enumerate() {
                *x = noise.sample(&mut rng) + if k == c { 1.0 } else { 0.0 };
            }
            v
        })
        .collect();
    let item_bias: Vec<f64> = (0..n_items).map(|_| 0.5 * noise.sample(&mut rng)).collect();
    let user_factors: Vec<[f64; PLANTED_RANK]> = (0..n_users)
        .map(|_| {
            let first = rng.random_range(0..PLANTED_RANK);
            let second = (first + rng.random_range(1..PLANTED_RANK)) % PLANTED_RANK;
            let mut u = [0.0; PLANTED_RANK];
            for x in u.iter_mut() {
                *x = noise.sample(&mut rng) - 0.5;
            }
            u[first] += 2.5;
            u[second] += 1.5;
            u
        })
        .collect();
    let planted = PlantedModel { user_factors, item_factors, item_bias, item_cluster };

    let count_dist = Binomial::new(n_items as u64, density).expect("valid binomial");
    let mut ds = Dataset::empty();
    let mut clock = 0i64;
    for u in 0..n_users {
        let mut count = count_dist.sample(&mut rng) as usize;
        let mut redraws = 0;
        while count < DEFAULT_MIN_INTERACTIONS {
            redraws += 1;
            count = if redraws > MAX_REDRAWS { DEFAULT_MIN_INTERACTIONS } else { count_dist.sample(&mut rng) as usize };
        }
        // Weighted sampling without replacement (exponential-key method):
        // users tend to interact with what they like.
        let mut keyed: Vec<(f64, usize)> = (0..n_items)
            .map(|i| {
                let w = planted.score(u, i).exp();
                let r: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                (r.ln() / w, i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = keyed.iter().take(count).map(|&(_, i)| i).collect();
        chosen.shuffle(&mut rng);
        for item in chosen {
            let raw = 3.0 + planted.score(u, item) + rating_noise.sample(&mut rng);
            clock += 1;
            ds.interactions.push(Interaction {
                user: u,
                item,
                rating: raw.round().clamp(1.0, 5.0),
                timestamp: clock,
                relevant: false,
                split: Split::Train,
            });
        }
    }

    // Random spanning tree plus one extra edge per item inside each cluster.
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for c in 0..PLANTED_RANK {
        let mut members: Vec<usize> = (0..n_items).filter(|&i| planted.item_cluster[i] == c).collect();
        members.shuffle(&mut rng);
        for k in 1..members.len() {
            let parent = members[rng.random_range(0..k)];
            edges.insert(ordered(members[k], parent));
        }
        if members.len() > 2 {
            for &a in &members {
                for _ in 0..8 {
                    let b = members[rng.random_range(0..members.len())];
                    if a != b && edges.insert(ordered(a, b)) {
                        break;
                    }
                }
            }
        }
    }
    ds.triples = edges
        .into_iter()
        .map(|(head, tail)| RelationTriple { head, relation: rng.random_range(0..n_relations), tail })
        .collect();

    ds.n_users = n_users;
    ds.n_items = n_items;
    ds.n_entities = n_items;
    ds.n_relations = n_relations;
    ds.user_ids = (0..n_users).map(|u| u.to_string()).collect();
    ds.item_ids = (0..n_items).map(|i| i.to_string()).collect();
    ds.relation_ids = (0..n_relations).map(|r| format!("r{}", r)).collect();
    Ok(SyntheticData { dataset: ds, planted })
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}
