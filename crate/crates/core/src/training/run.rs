use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::io::Write;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{LocalKnowledgeNetwork, Variant};
use crate::data::{Dataset, Split};
use crate::env::{Environment, EpisodeState, Feedback, Transition};
use crate::eval::{evaluate, Policy};
use crate::kg::{graph_reward, shortest_path, LocalSubgraph};

use super::{train_lkg, DdpgTrainer, GraphSource, LkgConfig, LkgTrainer, ReplayBuffer, TrainError, UpdateKind};

const CACHE_LIMIT: usize = 50_000;

/// Knowledge networks read by the critic: the state's items expanded to the
/// user's current depth, or the whole user graph for M-K.
#[derive(Debug)]
pub struct KnowledgeNetworks<'a> {
    env: &'a Environment,
    variant: Variant,
    depths: Vec<usize>,
    cache: RefCell<HashMap<(usize, Vec<usize>, usize), Rc<LocalKnowledgeNetwork>>>,
    /// (networks served, total nodes) since the last [`Self::take_counts`].
    counts: Cell<(u64, u64)>,
}

impl<'a> KnowledgeNetworks<'a> {
    pub fn new(env: &'a Environment, variant: Variant) -> Self {
        Self {
            env,
            variant,
            depths: vec![0; env.n_users()],
            cache: RefCell::new(HashMap::new()),
            counts: Cell::new((0, 0)),
        }
    }

    pub fn depth(&self, user: usize) -> usize {
        self.depths[user]
    }

    pub fn set_depth(&mut self, user: usize, depth: usize) {
        self.depths[user] = depth;
    }

    pub fn take_counts(&self) -> (u64, u64) {
        self.counts.replace((0, 0))
    }

    fn count(&self, n: &LocalKnowledgeNetwork) {
        let (calls, nodes) = self.counts.get();
        self.counts.set((calls + 1, nodes + n.n_nodes() as u64));
    }
}

impl GraphSource for KnowledgeNetworks<'_> {
    fn network(&self, state: &EpisodeState) -> Result<Rc<LocalKnowledgeNetwork>, TrainError> {
        let user = state.user;
        let key = if self.variant == Variant::MK {
            (user, Vec::new(), usize::MAX)
        } else {
            let mut centers = state.items.clone();
            centers.sort_unstable();
            centers.dedup();
            (user, centers, self.depths[user])
        };
        if let Some(n) = self.cache.borrow().get(&key) {
            self.count(n);
            return Ok(n.clone());
        }
        let graph = self.env.user_graph(user)?;
        let network = if self.variant == Variant::MK {
            LocalKnowledgeNetwork::from_user_graph(graph)?
        } else {
            let mut sub = LocalSubgraph::new(&key.1, graph)?;
            sub.expand_to(key.2, graph)?;
            LocalKnowledgeNetwork::from_subgraph(&sub)?
        };
        let network = Rc::new(network);
        self.count(&network);
        let mut cache = self.cache.borrow_mut();
        if cache.len() >= CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, network.clone());
        Ok(network)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Standard deviation of the Gaussian exploration noise.
    pub noise_scale: f64,
    /// Validation precision@10 every this many episodes; 0 disables.
    pub probe_every: usize,
    pub lkg: LkgConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { episodes: 300, noise_scale: 0.1, probe_every: 10, lkg: LkgConfig::default() }
    }
}

/// One row of the per-step training log. Empty losses mark warmup steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub critic_loss: Option<f64>,
    pub lkg_loss: Option<f64>,
    pub actor_grad_norm: Option<f64>,
    pub buffer_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub user: usize,
    pub steps: usize,
    pub clicks: usize,
    pub mean_reward: f64,
    pub mean_critic_loss: Option<f64>,
    pub probe_precision: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeRecord>,
    /// Steps taken before the buffer held a full batch.
    pub warmup_steps: usize,
    /// Wall time of each critic update, nanoseconds. Not part of the CSV
    /// output.
    #[serde(skip)]
    pub critic_nanos: Vec<u64>,
    /// Mean node count of the knowledge networks read by each critic update.
    #[serde(skip)]
    pub critic_nodes: Vec<f64>,
}

impl TrainLog {
    pub fn write_steps_csv<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.steps {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_episodes_csv<W: Write>(&self, out: W) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.episodes {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean of the per-episode mean rewards over episodes `range`.
    pub fn mean_episode_reward(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let xs = self.episodes.get(range)?;
        if xs.is_empty() {
            return None;
        }
        Some(xs.iter().map(|e| e.mean_reward).sum::<f64>() / xs.len() as f64)
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Runs `cfg.episodes` episodes on users drawn uniformly from those with
/// relevant training items. Each step acts with exploration noise, stores
/// the transition and, once a batch is available, updates the critic, the
/// local knowledge network, the actor and the targets in that order.
/// `probe` supplies validation relevance for the periodic precision probe.
pub fn train_ddpg(
    env: &Environment,
    probe: Option<&Dataset>,
    trainer: &mut DdpgTrainer,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog, TrainError> {
    train_ddpg_with(env, probe, trainer, cfg, seed, &mut |_, _| Ok(()))
}

/// [`train_ddpg`] with a hook called after every episode with the number of
/// finished episodes.
pub fn train_ddpg_with(
    env: &Environment,
    probe: Option<&Dataset>,
    trainer: &mut DdpgTrainer,
    cfg: &TrainConfig,
    seed: u64,
    after_episode: &mut dyn FnMut(usize, &DdpgTrainer) -> Result<(), TrainError>,
) -> Result<TrainLog, TrainError> {
    cfg.lkg.validate()?;
    if !(cfg.noise_scale >= 0.0) {
        return Err(TrainError::InvalidArgument("noise_scale must be >= 0".into()));
    }
    let mut log = TrainLog::default();
    if cfg.episodes == 0 {
        return Ok(log);
    }
    let users: Vec<usize> = (0..env.n_users()).filter(|&u| !env.train_relevant(u).is_empty()).collect();
    if users.is_empty() {
        return Err(TrainError::InvalidArgument("no user has relevant training items".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buffer = ReplayBuffer::new(trainer.cfg.buffer_capacity, rng.random())?;
    let variant = trainer.agent.cfg.variant;
    let mut graphs = KnowledgeNetworks::new(env, variant);
    let mut lkgs: HashMap<usize, LkgTrainer> = HashMap::new();
    let n = trainer.cfg.batch_size;
    let mut updates = 0usize;

    for episode in 0..cfg.episodes {
        let user = users[rng.random_range(0..users.len())];
        let mut ep = env.reset(user, rng.random())?;
        let mut rewards = Vec::new();
        let mut critic_losses = Vec::new();
        let mut clicks = 0;
        while !ep.is_terminal() {
            let state = ep.state().clone();
            let action = trainer.agent.act(&state, cfg.noise_scale, &mut rng)?;
            let item = trainer.agent.resolve(&action, ep.available())?;
            let out = env.step(&mut ep, item)?;
            rewards.push(out.reward);
            clicks += usize::from(out.feedback == Feedback::Click);
            buffer.push(Transition {
                state: state.clone(),
                action,
                item,
                reward: out.reward,
                next_state: out.next_state.clone(),
                terminal: out.terminal,
            });

            let mut record = StepRecord {
                episode,
                step: ep.t(),
                reward: out.reward,
                critic_loss: None,
                lkg_loss: None,
                actor_grad_norm: None,
                buffer_size: buffer.len(),
            };
            if let Some(batch) = buffer.sample(n) {
                graphs.take_counts();
                let t0 = Instant::now();
                let loss = trainer.critic_update(&batch, &graphs)?;
                log.critic_nanos.push(t0.elapsed().as_nanos() as u64);
                let (calls, nodes) = graphs.take_counts();
                if calls > 0 {
                    log.critic_nodes.push(nodes as f64 / calls as f64);
                }
                critic_losses.push(loss);
                record.critic_loss = Some(loss);

                if updates % cfg.lkg.every == 0 {
                    let graph = env.user_graph(user)?;
                    let lkg = match lkgs.entry(user) {
                        std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(LkgTrainer::new(user, cfg.lkg.clone())?)
                        }
                    };
                    let centers: Vec<usize> =
                        if variant == Variant::MK { graph.nodes().to_vec() } else { state.items.clone() };
                    let probes = state
                        .items
                        .iter()
                        .map(|&c| {
                            let p = shortest_path(graph, c, out.target)?;
                            graph_reward(p.as_ref(), env.config().epsilon, env.config().r_max)
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    lkg.observe(&probes);
                    let (kg, opt) = trainer.kg_parts();
                    let outcome = train_lkg(lkg, graph, &centers, env.train_relevant(user), kg, opt)?;
                    record.lkg_loss = Some(outcome.loss);
                    graphs.set_depth(user, lkg.depth());
                    trainer.note(UpdateKind::LocalKg);
                }

                record.actor_grad_norm = Some(trainer.actor_update(&batch, &graphs)?);
                trainer.soft_update()?;
                updates += 1;
            } else {
                log.warmup_steps += 1;
            }
            log.steps.push(record);
        }
        let probe_precision = match probe {
            Some(ds) if cfg.probe_every > 0 && (episode + 1) % cfg.probe_every == 0 => {
                Some(evaluate(env, ds, Policy::Agent(&trainer.agent), Split::Validation, 10, 1)?.0.precision)
            }
            _ => None,
        };
        log.episodes.push(EpisodeRecord {
            episode,
            user,
            steps: rewards.len(),
            clicks,
            mean_reward: mean(&rewards).unwrap_or(0.0),
            mean_critic_loss: mean(&critic_losses),
            probe_precision,
        });
        after_episode(episode + 1, trainer)?;
    }
    Ok(log)
}
