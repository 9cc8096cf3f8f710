use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::kg::{
    build_user_graph, graph_reward, shortest_path, KnowledgeGraph, Normalization, UserSpecificGraph, DEFAULT_EPSILON,
    DEFAULT_R_MAX,
};

use super::{EnvError, LmfModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// State window `l`.
    pub history: usize,
    /// Steps per episode `T`.
    pub episode_len: usize,
    /// Click iff the LMF probability exceeds this (`p*`).
    pub click_threshold: f64,
    pub stochastic_feedback: bool,
    pub epsilon: f64,
    pub r_max: f64,
    pub normalization: Normalization,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            history: 5,
            episode_len: 20,
            click_threshold: 0.5,
            stochastic_feedback: false,
            epsilon: DEFAULT_EPSILON,
            r_max: DEFAULT_R_MAX,
            normalization: Normalization::Softmax,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidArgument(m.into()));
        if self.history == 0 {
            return bad("history must be >= 1");
        }
        if self.episode_len == 0 {
            return bad("episode_len must be >= 1");
        }
        if !(self.click_threshold > 0.0 && self.click_threshold < 1.0) {
            return bad("click_threshold must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.r_max > 0.0) {
            return bad("r_max must be > 0");
        }
        Ok(())
    }
}

/// The recent positively received items, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub user: usize,
    pub items: Vec<usize>,
    /// One flag per item; `true` marks positive feedback.
    pub feedback: Vec<bool>,
}

impl EpisodeState {
    pub fn new(user: usize, items: Vec<usize>) -> Self {
        let feedback = vec![true; items.len()];
        Self { user, items, feedback }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends `item`, evicting the oldest entries beyond `limit`.
    pub fn push(&mut self, item: usize, limit: usize) {
        self.items.push(item);
        self.feedback.push(true);
        while self.items.len() > limit {
            self.items.remove(0);
            self.feedback.remove(0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feedback {
    Click,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EpisodeState,
    pub action: Vec<f64>,
    pub item: usize,
    pub reward: f64,
    pub next_state: EpisodeState,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub feedback: Feedback,
    pub reward: f64,
    pub target: usize,
    pub next_state: EpisodeState,
    pub terminal: bool,
    /// Ended before `T` steps because no candidates remain.
    pub exhausted: bool,
}

/// One user's episode. Owns all mutable episode state.
#[derive(Debug, Clone)]
pub struct Episode {
    user: usize,
    state: EpisodeState,
    available: Vec<bool>,
    n_available: usize,
    queue: Vec<usize>,
    t: usize,
    terminal: bool,
    rng: ChaCha8Rng,
}

impl Episode {
    pub fn user(&self) -> usize {
        self.user
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    /// `available[i]` is true while item `i` may still be recommended.
    pub fn available(&self) -> &[bool] {
        &self.available
    }

    pub fn n_available(&self) -> usize {
        self.n_available
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }
}

/// A fitted click model together with the knowledge graph that scores
/// rewards. Immutable once built; per-user graphs are built on first use.
#[derive(Debug)]
pub struct Environment {
    cfg: EnvConfig,
    lmf: LmfModel,
    kg: KnowledgeGraph,
    train_relevant: Vec<Vec<usize>>,
    train_items: Vec<Vec<usize>>,
    graphs: Vec<OnceLock<UserSpecificGraph>>,
}

impl Environment {
    /// Relation embeddings are derived from the LMF item factors and each
    /// user's graph is scored with that user's LMF factor.
    pub fn new(ds: &Dataset, lmf: LmfModel, cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        if lmf.n_users() != ds.n_users || lmf.n_items() != ds.n_items {
            return Err(EnvError::InvalidArgument(format!(
                "LMF model is {}x{}, dataset is {}x{}",
                lmf.n_users(),
                lmf.n_items(),
                ds.n_users,
                ds.n_items
            )));
        }
        let mut kg = KnowledgeGraph::from_dataset(ds)?;
        kg.derive_relation_embeddings(&lmf.item_factors)?;
        let mut train_relevant = Vec::with_capacity(ds.n_users);
        let mut train_items = Vec::with_capacity(ds.n_users);
        for group in ds.by_user() {
            let train: Vec<_> = group.iter().filter(|it| it.split == Split::Train).collect();
            train_relevant.push(train.iter().filter(|it| it.relevant).map(|it| it.item).collect());
            train_items.push(train.iter().map(|it| it.item).collect());
        }
        let graphs = (0..ds.n_users).map(|_| OnceLock::new()).collect();
        Ok(Self { cfg, lmf, kg, train_relevant, train_items, graphs })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn lmf(&self) -> &LmfModel {
        &self.lmf
    }

    pub fn kg(&self) -> &KnowledgeGraph {
        &self.kg
    }

    pub fn n_users(&self) -> usize {
        self.train_relevant.len()
    }

    pub fn n_items(&self) -> usize {
        self.lmf.n_items()
    }

    /// Relevant training items of `user`, oldest first.
    pub fn train_relevant(&self, user: usize) -> &[usize] {
        &self.train_relevant[user]
    }

    pub fn train_items(&self, user: usize) -> &[usize] {
        &self.train_items[user]
    }

    pub fn user_graph(&self, user: usize) -> Result<&UserSpecificGraph, EnvError> {
        if let Some(g) = self.graphs[user].get() {
            return Ok(g);
        }
        let g = build_user_graph(&self.kg, user, self.lmf.user_factors.row(user), None, self.cfg.normalization)?;
        Ok(self.graphs[user].get_or_init(|| g))
    }

    /// Starts from the earliest `min(l, available)` relevant training items.
    pub fn reset(&self, user: usize, seed: u64) -> Result<Episode, EnvError> {
        let rel = self.train_relevant.get(user).ok_or(EnvError::InvalidArgument(format!("no user {}", user)))?;
        if rel.is_empty() {
            return Err(EnvError::NoRelevantItems(user));
        }
        let l = self.cfg.history.min(rel.len());
        self.episode_from(user, rel[..l].to_vec(), &rel[..l], rel[l..].to_vec(), seed)
    }

    /// An episode with an explicit start state, excluded items and target
    /// queue.
    pub fn episode_from(
        &self,
        user: usize,
        start: Vec<usize>,
        excluded: &[usize],
        queue: Vec<usize>,
        seed: u64,
    ) -> Result<Episode, EnvError> {
        if start.is_empty() {
            return Err(EnvError::NoRelevantItems(user));
        }
        let mut available = vec![true; self.n_items()];
        for &i in start.iter().chain(excluded) {
            *available.get_mut(i).ok_or(EnvError::InvalidAction(i))? = false;
        }
        let n_available = available.iter().filter(|&&a| a).count();
        let mut state = EpisodeState::new(user, Vec::new());
        for i in start {
            state.push(i, self.cfg.history);
        }
        Ok(Episode {
            user,
            state,
            available,
            n_available,
            queue,
            t: 0,
            terminal: n_available == 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// The next unconsumed logged item, else the available item the click
    /// model likes best (smallest index on ties).
    pub fn target(&self, ep: &Episode) -> Option<usize> {
        if let Some(&i) = ep.queue.iter().find(|&&i| ep.available[i]) {
            return Some(i);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, _) in ep.available.iter().enumerate().filter(|(_, &a)| a) {
            let p = self.lmf.logit(ep.user, i);
            if best.is_none_or(|(_, b)| p > b) {
                best = Some((i, p));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn step(&self, ep: &mut Episode, item: usize) -> Result<StepOutcome, EnvError> {
        if ep.terminal {
            return Err(EnvError::EpisodeOver);
        }
        if !ep.available.get(item).copied().unwrap_or(false) {
            return Err(EnvError::InvalidAction(item));
        }
        let target = self.target(ep).expect("an available item exists");
        let graph = self.user_graph(ep.user)?;
        let path = shortest_path(graph, item, target)?;
        let reward = graph_reward(path.as_ref(), self.cfg.epsilon, self.cfg.r_max)?;

        let p = self.lmf.probability(ep.user, item);
        let click =
            if self.cfg.stochastic_feedback { ep.rng.random::<f64>() < p } else { p > self.cfg.click_threshold };
        ep.available[item] = false;
        ep.n_available -= 1;
        if click {
            ep.state.push(item, self.cfg.history);
        }
        ep.t += 1;
        let exhausted = ep.n_available == 0 && ep.t < self.cfg.episode_len;
        ep.terminal = ep.t >= self.cfg.episode_len || ep.n_available == 0;
        Ok(StepOutcome {
            feedback: if click { Feedback::Click } else { Feedback::Skip },
            reward,
            target,
            next_state: ep.state.clone(),
            terminal: ep.terminal,
            exhausted,
        })
    }
}

/// One line of an exported episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub user: usize,
    pub t: usize,
    pub state: Vec<usize>,
    pub item: usize,
    pub target: usize,
    pub reward: f64,
    pub feedback: Feedback,
    pub terminal: bool,
}

pub fn write_trace_jsonl<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<(), EnvError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, preprocess, split};
    use crate::env::{fit_lmf, LmfConfig};

    fn planted_env(cfg: EnvConfig) -> (Dataset, Environment) {
        let raw = generate_synthetic(50, 200, 4, 0.2, 11).unwrap().dataset;
        let ds = split(&preprocess(&raw, 10, 3.0).unwrap(), 11);
        let lmf = fit_lmf(&ds, &LmfConfig::default(), 3).unwrap().model;
        let env = Environment::new(&ds, lmf, cfg).unwrap();
        (ds, env)
    }

    #[test]
    fn reset_takes_earliest_relevant_items() {
        let (ds, env) = planted_env(EnvConfig::default());
        for u in 0..ds.n_users {
            let rel = ds.relevant_items(u, Split::Train);
            if rel.is_empty() {
                assert!(matches!(env.reset(u, 0), Err(EnvError::NoRelevantItems(_))));
                continue;
            }
            let ep = env.reset(u, 0).unwrap();
            let l = rel.len().min(5);
            assert_eq!(ep.state().items, rel[..l]);
            assert_eq!(ep.state(), env.reset(u, 9).unwrap().state());
        }
    }

    #[test]
    fn single_relevant_item_gives_length_one_state() {
        let (_, env) = planted_env(EnvConfig::default());
        let ep = env.episode_from(0, vec![3], &[], vec![], 0).unwrap();
        assert_eq!(ep.state().items, vec![3]);
    }

    #[test]
    fn hitting_the_target_pays_r_max() {
        let (_, env) = planted_env(EnvConfig::default());
        let mut clicks = 0;
        let mut users = 0;
        for u in 0..env.n_users() {
            let Ok(mut ep) = env.reset(u, 0) else { continue };
            let target = env.target(&ep).unwrap();
            let out = env.step(&mut ep, target).unwrap();
            assert_eq!(out.reward, 100.0);
            users += 1;
            clicks += (out.feedback == Feedback::Click) as usize;
        }
        assert!(clicks * 10 >= users * 9, "{} of {} targets clicked", clicks, users);
    }

    #[test]
    fn skip_keeps_state_and_click_evicts_oldest() {
        let (_, env) = planted_env(EnvConfig { history: 2, ..EnvConfig::default() });
        let u = 0;
        let mut ep = env.episode_from(u, vec![0, 1], &[], vec![], 0).unwrap();
        let mut order: Vec<usize> = (2..env.n_items()).collect();
        order.sort_by(|&a, &b| env.lmf().logit(u, a).total_cmp(&env.lmf().logit(u, b)));
        let worst = order[0];
        let best = *order.last().unwrap();
        let before = ep.state().clone();
        let out = env.step(&mut ep, worst).unwrap();
        assert_eq!(out.feedback, Feedback::Skip);
        assert_eq!(out.next_state, before);
        let out = env.step(&mut ep, best).unwrap();
        assert_eq!(out.feedback, Feedback::Click);
        assert_eq!(out.next_state.items, vec![1, best]);
        assert!(matches!(env.step(&mut ep, best), Err(EnvError::InvalidAction(_))));
    }

    #[test]
    fn episode_runs_t_steps_with_bounded_rewards() {
        let (_, env) = planted_env(EnvConfig::default());
        let mut ep = env.reset(1, 0).unwrap();
        let mut n = 0;
        while !ep.is_terminal() {
            let i = ep.available().iter().position(|&a| a).unwrap();
            let out = env.step(&mut ep, i).unwrap();
            assert!((0.0..=100.0).contains(&out.reward));
            assert!(out.next_state.len() <= 5);
            n += 1;
        }
        assert_eq!(n, 20);
        assert!(matches!(env.step(&mut ep, 199), Err(EnvError::EpisodeOver)));
    }

    #[test]
    fn exhausting_candidates_ends_early() {
        let (ds, env) = planted_env(EnvConfig { episode_len: 1000, ..EnvConfig::default() });
        let excluded: Vec<usize> = (0..ds.n_items - 3).collect();
        let mut ep = env.episode_from(0, vec![0], &excluded, vec![], 0).unwrap();
        let mut last = None;
        while !ep.is_terminal() {
            let i = ep.available().iter().position(|&a| a).unwrap();
            last = Some(env.step(&mut ep, i).unwrap());
        }
        assert_eq!(ep.t(), 3);
        assert!(last.unwrap().exhausted);
    }

    #[test]
    fn trace_lines_parse_back() {
        let rec = TraceRecord {
            user: 1,
            t: 0,
            state: vec![4, 5],
            item: 7,
            target: 9,
            reward: 12.5,
            feedback: Feedback::Skip,
            terminal: false,
        };
        let mut buf = Vec::new();
        write_trace_jsonl(&mut buf, &[rec.clone(), rec.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(serde_json::from_str::<TraceRecord>(text.lines().next().unwrap()).unwrap(), rec);
        assert!(text.contains("\"feedback\":\"skip\""));
    }
}
