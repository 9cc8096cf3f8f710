//! End-to-end steps shared by the command line and the acceptance tests:
//! dataset preparation, simulator fitting, agent construction and the
//! variant ablation.

use serde::Serialize;

use crate::agent::{Agent, AgentConfig, AgentError, ItemInit, Variant};
use crate::config::RunConfig;
use crate::data::{
    generate_synthetic, load_dataset, load_dataset_dir, load_triples_into, preprocess, split, DataError, Dataset,
};
use crate::env::{fit_lmf, EnvError, Environment, LmfFit};
use crate::eval::{evaluate, random_precision, EvalError, MetricReport, Policy};
use crate::training::{train_ddpg_with, DdpgTrainer, TrainError, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Reads `cfg.data.ratings` (plus optional triples), then filters, rescales
/// and splits it.
pub fn ingest(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let path =
        cfg.data.ratings.as_deref().ok_or_else(|| PipelineError::InvalidArgument("data.ratings is not set".into()))?;
    let mut raw = load_dataset(path, cfg.data.format)?;
    if let Some(t) = &cfg.data.triples {
        load_triples_into(&mut raw, t)?;
    }
    finish(&raw, cfg)
}

/// Planted synthetic data drawn with the run seed, filtered and split.
pub fn synthesize(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let s = &cfg.data.synth;
    let raw = generate_synthetic(s.n_users, s.n_items, s.n_relations, s.density, cfg.seed)?.dataset;
    finish(&raw, cfg)
}

fn finish(raw: &Dataset, cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    let ds = preprocess(raw, cfg.data.min_interactions, cfg.data.relevance_threshold)?;
    Ok(split(&ds, cfg.seed))
}

/// `cfg.data.dir` if set, synthetic data otherwise.
pub fn dataset(cfg: &RunConfig) -> Result<Dataset, PipelineError> {
    match &cfg.data.dir {
        Some(dir) => Ok(load_dataset_dir(dir)?),
        None => synthesize(cfg),
    }
}

pub struct Prepared {
    pub dataset: Dataset,
    pub lmf: LmfFit,
    pub env: Environment,
}

/// Dataset, fitted click model and environment for `cfg`.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared, PipelineError> {
    let dataset = dataset(cfg)?;
    let lmf = fit_lmf(&dataset, &cfg.lmf, cfg.seed)?;
    let env = Environment::new(&dataset, lmf.model.clone(), cfg.env.clone())?;
    Ok(Prepared { dataset, lmf, env })
}

pub fn new_agent(cfg: &RunConfig, prep: &Prepared, variant: Variant, seed: u64) -> Result<Agent, PipelineError> {
    let acfg = AgentConfig { variant, ..cfg.agent.clone() };
    let factors = (acfg.item_init == ItemInit::Lmf).then_some(&prep.lmf.model.item_factors);
    Ok(Agent::new(acfg, prep.env.n_users(), prep.env.n_items(), cfg.env.history, factors, seed)?)
}

/// Builds an agent of `variant` and trains it with `cfg`'s schedule.
/// `after_episode` sees the trainer after each episode.
pub fn train(
    cfg: &RunConfig,
    prep: &Prepared,
    variant: Variant,
    seed: u64,
    after_episode: &mut dyn FnMut(usize, &DdpgTrainer) -> Result<(), TrainError>,
) -> Result<(DdpgTrainer, TrainLog), PipelineError> {
    let agent = new_agent(cfg, prep, variant, seed)?;
    let mut trainer = DdpgTrainer::new(agent, cfg.ddpg.clone())?;
    let log = train_ddpg_with(&prep.env, Some(&prep.dataset), &mut trainer, &cfg.train, seed, after_episode)?;
    Ok((trainer, log))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRun {
    pub variant: Variant,
    pub seed: u64,
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub n_users: usize,
    pub random_precision: f64,
    pub first10_reward: f64,
    pub last10_reward: f64,
    pub critic_median_ns: u64,
    /// Mean node count of the knowledge networks read per critic update.
    pub critic_nodes: f64,
    pub actor_params: usize,
}

pub fn median(xs: &[u64]) -> Option<u64> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.get(v.len() / 2).copied()
}

/// Trains `variant` with `seed` on the prepared environment and evaluates
/// it on `cfg.eval.split`.
pub fn run_ablation(
    cfg: &RunConfig,
    prep: &Prepared,
    variant: Variant,
    seed: u64,
) -> Result<(AblationRun, MetricReport), PipelineError> {
    let (trainer, log) = train(cfg, prep, variant, seed, &mut |_, _| Ok(()))?;
    let policy = Policy::Agent(&trainer.agent);
    let (report, _) = evaluate(&prep.env, &prep.dataset, policy, cfg.eval.split, cfg.eval.k, cfg.eval.threads)?;
    let n = log.episodes.len();
    let w = n.min(10);
    let run = AblationRun {
        variant,
        seed,
        precision: report.precision,
        recall: report.recall,
        ndcg: report.ndcg,
        n_users: report.n_users,
        random_precision: random_precision(&prep.env, &prep.dataset, cfg.eval.split)?,
        first10_reward: log.mean_episode_reward(0..w).unwrap_or(0.0),
        last10_reward: log.mean_episode_reward(n - w..n).unwrap_or(0.0),
        critic_median_ns: median(&log.critic_nanos).unwrap_or(0),
        critic_nodes: if log.critic_nodes.is_empty() {
            0.0
        } else {
            log.critic_nodes.iter().sum::<f64>() / log.critic_nodes.len() as f64
        },
        actor_params: trainer.agent.actor.scalar_count(),
    };
    Ok((run, report))
}
