use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::agent::{policy_action, resolve_item, Agent};
use crate::data::{Dataset, Split};
use crate::env::{Environment, EpisodeState};

use super::{ndcg_at_k, precision_at_k, recall_at_k, EvalError, RankedList};

/// Who picks the recommendations.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Deterministic actor output resolved against the actor's item
    /// embeddings.
    Agent(&'a Agent),
    /// Uniform picks without replacement among the candidates.
    Random { seed: u64 },
    /// Highest click-model probability first. Reads the simulator.
    Oracle,
}

impl Policy<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Agent(_) => "agent",
            Policy::Random { .. } => "random",
            Policy::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UserMetrics {
    pub user: usize,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub n_users: usize,
    /// Users without relevant items in the split or without a start state.
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for a single value.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std =
            if xs.len() > 1 { (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSummary {
    pub runs: usize,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub ndcg: MeanStd,
}

pub fn summarize(reports: &[MetricReport]) -> Option<ReportSummary> {
    if reports.is_empty() {
        return None;
    }
    let col = |f: fn(&MetricReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    Some(ReportSummary {
        runs: reports.len(),
        precision: col(|r| r.precision),
        recall: col(|r| r.recall),
        ndcg: col(|r| r.ndcg),
    })
}

/// Candidates for `user`: every item outside the user's training
/// interactions.
pub fn candidates(env: &Environment, user: usize) -> Vec<bool> {
    let mut available = vec![true; env.n_items()];
    for &i in env.train_items(user) {
        available[i] = false;
    }
    available
}

/// Top-`k` list for `user`, or `None` when the user has no relevant
/// training items to start from. The state starts at the latest relevant
/// training items; after each pick the click model decides whether the
/// item joins the state.
pub fn rank_user(
    env: &Environment,
    policy: Policy<'_>,
    user: usize,
    k: usize,
) -> Result<Option<Vec<usize>>, EvalError> {
    let rel = env.train_relevant(user);
    if rel.is_empty() {
        return Ok(None);
    }
    let l = env.config().history;
    let mut state = EpisodeState::new(user, rel[rel.len().saturating_sub(l)..].to_vec());
    let mut available = candidates(env, user);
    let n_candidates = available.iter().filter(|&&a| a).count();
    let k = k.min(n_candidates);
    if let Policy::Random { seed } = policy {
        let pool: Vec<usize> = (0..available.len()).filter(|&i| available[i]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (user as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        return Ok(Some(sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect()));
    }
    let mut items = Vec::with_capacity(k);
    for _ in 0..k {
        let item = match policy {
            Policy::Agent(agent) => {
                let a = policy_action(&agent.actor, agent.cfg.variant, &state)?;
                resolve_item(&a, &available, agent.item_embeddings())?
            }
            Policy::Oracle => (0..available.len())
                .filter(|&i| available[i])
                .fold(None, |best: Option<(usize, f64)>, i| {
                    let p = env.lmf().logit(user, i);
                    if best.is_none_or(|(_, b)| p > b) {
                        Some((i, p))
                    } else {
                        best
                    }
                })
                .map(|(i, _)| i)
                .expect("k <= candidates"),
            Policy::Random { .. } => unreachable!(),
        };
        available[item] = false;
        items.push(item);
        if env.lmf().probability(user, item) > env.config().click_threshold {
            state.push(item, l);
        }
    }
    Ok(Some(items))
}

/// Per-user precision, recall and nDCG at `k` against the relevant items of
/// `split`, averaged over users that have relevant items there and a start
/// state. Users are processed on up to `threads` worker threads.
pub fn evaluate(
    env: &Environment,
    ds: &Dataset,
    policy: Policy<'_>,
    split: Split,
    k: usize,
    threads: usize,
) -> Result<(MetricReport, Vec<UserMetrics>), EvalError> {
    let users: Vec<(usize, Vec<usize>)> = (0..env.n_users())
        .map(|u| (u, ds.relevant_items(u, split)))
        .filter(|(u, r)| !r.is_empty() && !env.train_relevant(*u).is_empty())
        .collect();
    if users.is_empty() {
        return Err(EvalError::NoEvaluableUsers);
    }
    let score = |(u, rel): &(usize, Vec<usize>)| -> Result<UserMetrics, EvalError> {
        let items = rank_user(env, policy, *u, k)?.expect("filtered to users with a start state");
        let rl = RankedList::new(*u, items, rel, k)?;
        Ok(UserMetrics {
            user: *u,
            precision: precision_at_k(&rl),
            recall: recall_at_k(&rl).expect("non-empty"),
            ndcg: ndcg_at_k(&rl).expect("non-empty"),
        })
    };
    let threads = threads.clamp(1, users.len());
    let per_user: Vec<UserMetrics> = if threads == 1 {
        users.iter().map(score).collect::<Result<_, _>>()?
    } else {
        let chunk = users.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = users
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(score).collect::<Result<Vec<_>, _>>()))
                .collect();
            handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect::<Result<Vec<_>, _>>()
        })?
        .into_iter()
        .flatten()
        .collect()
    };
    let n = per_user.len() as f64;
    let report = MetricReport {
        precision: per_user.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_user.iter().map(|m| m.recall).sum::<f64>() / n,
        ndcg: per_user.iter().map(|m| m.ndcg).sum::<f64>() / n,
        n_users: per_user.len(),
        skipped: env.n_users() - per_user.len(),
    };
    Ok((report, per_user))
}

/// Expected precision@k of uniform picks, `E|R ∩ top-k| / k = |R ∩ C| / |C|`
/// per user, averaged over the users [`evaluate`] would score.
pub fn random_precision(env: &Environment, ds: &Dataset, split: Split) -> Result<f64, EvalError> {
    let mut rates = Vec::new();
    for u in 0..env.n_users() {
        let rel = ds.relevant_items(u, split);
        if rel.is_empty() || env.train_relevant(u).is_empty() {
            continue;
        }
        let c = candidates(env, u);
        let n_c = c.iter().filter(|&&a| a).count();
        let hits = rel.iter().filter(|&&i| c[i]).count();
        rates.push(hits as f64 / n_c as f64);
    }
    if rates.is_empty() {
        return Err(EvalError::NoEvaluableUsers);
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}
