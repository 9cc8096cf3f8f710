use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::agent::{actor_forward, critic_forward, gcn_summary, Agent, LocalKnowledgeNetwork, QMode};
use crate::env::{EpisodeState, Transition};
use crate::nn::{Optimizer, OptimizerKind, ParamStore, Tape, Tensor2};

use super::TrainError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub buffer_capacity: usize,
    /// Mini-batch size `N`; also the warmup length.
    pub batch_size: usize,
    pub tau: f64,
    pub gamma: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Learning rate of the local knowledge network (item embeddings, user
    /// embeddings and GCN weights).
    pub kg_lr: f64,
    /// Rewards are multiplied by this before entering TD targets.
    pub reward_scale: f64,
    pub optimizer: OptimizerKind,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            buffer_capacity: 100_000,
            batch_size: 32,
            tau: 0.01,
            gamma: 0.99,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            kg_lr: 1e-3,
            reward_scale: 0.01,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidArgument(m.into()));
        if self.buffer_capacity == 0 || self.batch_size == 0 {
            return bad("buffer_capacity and batch_size must be >= 1");
        }
        if self.batch_size > self.buffer_capacity {
            return bad("batch_size exceeds buffer_capacity");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.kg_lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return bad("reward_scale must be > 0");
        }
        Ok(())
    }
}

/// One entry of the per-step update log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Critic,
    LocalKg,
    Actor,
    Targets,
}

/// Supplies the knowledge network the critic reads for a state.
pub trait GraphSource {
    fn network(&self, state: &EpisodeState) -> Result<Rc<LocalKnowledgeNetwork>, TrainError>;
}

/// `target ← τ·online + (1−τ)·target` for every parameter.
pub fn soft_update(target: &mut ParamStore, online: &ParamStore, tau: f64) -> Result<(), TrainError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(TrainError::InvalidArgument(format!("tau must lie in (0, 1], got {}", tau)));
    }
    target.soft_update_from(online, tau)?;
    Ok(())
}

/// Online and target networks with their optimizers.
#[derive(Debug, Clone)]
pub struct DdpgTrainer {
    pub cfg: DdpgConfig,
    pub agent: Agent,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    kg_opt: Optimizer,
    order: Option<Vec<UpdateKind>>,
}

impl DdpgTrainer {
    pub fn new(agent: Agent, cfg: DdpgConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        agent.actor.check_mirrors(&agent.actor_target)?;
        agent.critic.check_mirrors(&agent.critic_target)?;
        Ok(Self {
            actor_opt: Optimizer::new(cfg.optimizer, cfg.actor_lr),
            critic_opt: Optimizer::new(cfg.optimizer, cfg.critic_lr),
            kg_opt: Optimizer::new(cfg.optimizer, cfg.kg_lr),
            cfg,
            agent,
            order: None,
        })
    }

    /// Starts recording which update ran when.
    pub fn record_order(&mut self) {
        self.order = Some(Vec::new());
    }

    pub fn order_log(&self) -> &[UpdateKind] {
        self.order.as_deref().unwrap_or(&[])
    }

    pub fn note(&mut self, kind: UpdateKind) {
        if let Some(log) = &mut self.order {
            log.push(kind);
        }
    }

    /// The knowledge-network parameters and their optimizer.
    pub fn kg_parts(&mut self) -> (&mut ParamStore, &mut Optimizer) {
        (&mut self.agent.kg, &mut self.kg_opt)
    }

    /// GCN summaries (N × d) of the states' knowledge networks.
    pub fn summaries(&self, states: &[&EpisodeState], graphs: &impl GraphSource) -> Result<Tensor2, TrainError> {
        let mut done: Vec<(Rc<LocalKnowledgeNetwork>, Vec<f64>)> = Vec::new();
        let mut rows = Vec::with_capacity(states.len());
        for s in states {
            let net = graphs.network(s)?;
            let row = match done.iter().find(|(n, _)| Rc::ptr_eq(n, &net)) {
                Some((_, row)) => row.clone(),
                None => {
                    let row = gcn_summary(&self.agent.kg, &net)?.into_vec();
                    done.push((net, row.clone()));
                    row
                }
            };
            rows.push(row);
        }
        Ok(Tensor2::from_rows(&rows)?)
    }

    fn q_values(critic: &ParamStore, s: &Tensor2, a: &Tensor2, g: &Tensor2) -> Result<Vec<f64>, TrainError> {
        let mut tape = Tape::new();
        let (s, a, g) = (tape.input(s.clone()), tape.input(a.clone()), tape.input(g.clone()));
        let q = critic_forward(&mut tape, critic, s, a, g)?;
        Ok(tape.value(q).data().to_vec())
    }

    fn encode(actor: &ParamStore, agent: &Agent, states: &[&EpisodeState]) -> Result<(Tensor2, Tensor2), TrainError> {
        let mut tape = Tape::new();
        let (s, a) = actor_forward(&mut tape, actor, agent.cfg.variant, states)?;
        Ok((tape.value(s).clone(), tape.value(a).clone()))
    }

    /// TD targets `scale·r + γ·ξ`, with `ξ = Q'(S', φ'(S'))` from the target
    /// networks and `ξ = 0` on terminal transitions.
    pub fn td_targets(&self, batch: &[&Transition], graphs: &impl GraphSource) -> Result<Vec<f64>, TrainError> {
        let next: Vec<&EpisodeState> = batch.iter().map(|t| &t.next_state).collect();
        let (s2, a2) = Self::encode(&self.agent.actor_target, &self.agent, &next)?;
        let g2 = self.summaries(&next, graphs)?;
        let xi = Self::q_values(&self.agent.critic_target, &s2, &a2, &g2)?;
        Ok(batch
            .iter()
            .zip(xi)
            .map(|(t, xi)| self.cfg.reward_scale * t.reward + if t.terminal { 0.0 } else { self.cfg.gamma * xi })
            .collect())
    }

    fn critic_inputs(&self, batch: &[&Transition], graphs: &impl GraphSource) -> Result<[Tensor2; 3], TrainError> {
        let states: Vec<&EpisodeState> = batch.iter().map(|t| &t.state).collect();
        let (s, _) = Self::encode(&self.agent.actor, &self.agent, &states)?;
        let a = Tensor2::from_rows(&batch.iter().map(|t| t.action.clone()).collect::<Vec<_>>())?;
        let g = self.summaries(&states, graphs)?;
        Ok([s, a, g])
    }

    /// `(1/N) Σ (y − Q(S, a))²` without touching any parameter.
    pub fn critic_loss(&self, batch: &[&Transition], graphs: &impl GraphSource) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let y = self.td_targets(batch, graphs)?;
        let [s, a, g] = self.critic_inputs(batch, graphs)?;
        let q = Self::q_values(&self.agent.critic, &s, &a, &g)?;
        Ok(y.iter().zip(&q).map(|(y, q)| (y - q).powi(2)).sum::<f64>() / batch.len() as f64)
    }

    /// One optimizer step on the critic loss. Returns the loss before the
    /// step.
    pub fn critic_update(&mut self, batch: &[&Transition], graphs: &impl GraphSource) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let n = batch.len();
        let y = self.td_targets(batch, graphs)?;
        let [s, a, g] = self.critic_inputs(batch, graphs)?;
        let mut tape = Tape::new();
        let (s, a, g) = (tape.input(s), tape.input(a), tape.input(g));
        let q = critic_forward(&mut tape, &self.agent.critic, s, a, g)?;
        let y = tape.input(Tensor2::from_vec(n, 1, y)?);
        let neg_y = tape.scale(y, -1.0);
        let diff = tape.add(q, neg_y)?;
        let sq = tape.mul(diff, diff)?;
        let total = tape.sum(sq);
        let loss = tape.scale(total, 1.0 / n as f64);
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(TrainError::NonFinite("critic loss".into()));
        }
        self.note(UpdateKind::Critic);
        if self.agent.cfg.q_mode == QMode::Formula {
            return Ok(value);
        }
        self.agent.critic.zero_grads();
        tape.backward(loss, None)?.accumulate_into(&tape, &mut self.agent.critic);
        self.critic_opt.step(&mut self.agent.critic)?;
        Ok(value)
    }

    /// One ascent step on `(1/N) Σ Q(S, φ(S))` through `∇_a Q · ∇_θ φ`.
    /// Returns the gradient norm before the step.
    pub fn actor_update(&mut self, batch: &[&Transition], graphs: &impl GraphSource) -> Result<f64, TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let states: Vec<&EpisodeState> = batch.iter().map(|t| &t.state).collect();
        let mut actor_tape = Tape::new();
        let (s, a) = actor_forward(&mut actor_tape, &self.agent.actor, self.agent.cfg.variant, &states)?;
        let g = self.summaries(&states, graphs)?;

        let mut critic_tape = Tape::new();
        let s_in = critic_tape.input(actor_tape.value(s).clone());
        let a_in = critic_tape.input(actor_tape.value(a).clone());
        let g_in = critic_tape.input(g);
        let q = critic_forward(&mut critic_tape, &self.agent.critic, s_in, a_in, g_in)?;
        let total = critic_tape.sum(q);
        let objective = critic_tape.scale(total, 1.0 / n);
        let grads = critic_tape.backward(objective, None)?;
        let mut dq_da = grads.wrt(a_in).cloned().unwrap_or_else(|| Tensor2::zeros(batch.len(), self.agent.cfg.dim));
        if self.agent.cfg.q_mode == QMode::Formula {
            dq_da.fill(0.0);
        }

        self.agent.actor.zero_grads();
        let descent = dq_da.scale(-1.0);
        actor_tape.backward(a, Some(descent))?.accumulate_into(&actor_tape, &mut self.agent.actor);
        let norm = self.agent.actor.grad_norm();
        if !norm.is_finite() {
            return Err(TrainError::NonFinite("actor gradient".into()));
        }
        self.note(UpdateKind::Actor);
        self.actor_opt.step(&mut self.agent.actor)?;
        Ok(norm)
    }

    pub fn soft_update(&mut self) -> Result<(), TrainError> {
        soft_update(&mut self.agent.actor_target, &self.agent.actor, self.cfg.tau)?;
        soft_update(&mut self.agent.critic_target, &self.agent.critic, self.cfg.tau)?;
        self.note(UpdateKind::Targets);
        Ok(())
    }
}
