use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::agent::{gcn_embed, LocalKnowledgeNetwork};
use crate::kg::{LocalSubgraph, NeighbourSource};
use crate::nn::{sigmoid, Optimizer, ParamStore, Tape};

use super::TrainError;

/// Smallest and largest prediction fed to the cross-entropy.
pub const PREDICTION_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LkgConfig {
    /// Reward per level of the depth budget.
    pub depth_scale: f64,
    pub max_depth: usize,
    /// Converged once every loss change over `window` steps is below this.
    pub tolerance: f64,
    pub window: usize,
    /// GCN steps per call of [`train_lkg`].
    pub max_steps: usize,
    /// Run the local update every this many DDPG updates.
    pub every: usize,
}

impl Default for LkgConfig {
    fn default() -> Self {
        Self { depth_scale: 25.0, max_depth: 4, tolerance: 1e-4, window: 5, max_steps: 1, every: 1 }
    }
}

impl LkgConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.depth_scale > 0.0) {
            return Err(TrainError::InvalidArgument("depth_scale must be > 0".into()));
        }
        if !(self.tolerance >= 0.0) || self.window == 0 || self.max_steps == 0 || self.every == 0 {
            return Err(TrainError::InvalidArgument("lkg tolerance >= 0, window, max_steps, every >= 1".into()));
        }
        Ok(())
    }
}

/// `clamp(⌊r / depth_scale⌋, 0, max_depth)`.
pub fn depth_budget(r: f64, depth_scale: f64, max_depth: usize) -> usize {
    if !(r > 0.0) {
        return 0;
    }
    ((r / depth_scale).floor() as usize).min(max_depth)
}

/// Summed binary cross-entropy `−Σ [y ln ŷ + (1−y) ln(1−ŷ)]` with `ŷ`
/// clamped to `[1e-7, 1−1e-7]`. Returns the loss and how many predictions
/// were clamped.
pub fn lkg_loss(labels: &[f64], predictions: &[f64]) -> Result<(f64, usize), TrainError> {
    if labels.len() != predictions.len() {
        return Err(TrainError::InvalidArgument(format!(
            "{} labels for {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut clamped = 0;
    let mut loss = 0.0;
    for (&y, &p) in labels.iter().zip(predictions) {
        if !(0.0..=1.0).contains(&p) {
            return Err(TrainError::InvalidArgument(format!("prediction {} outside [0, 1]", p)));
        }
        let q = p.clamp(PREDICTION_CLAMP, 1.0 - PREDICTION_CLAMP);
        if q != p {
            clamped += 1;
        }
        loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
    }
    Ok((loss, clamped))
}

/// Per-user state of the local knowledge network: its depth `d_g`, the
/// reward storage `P` and the loss trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LkgTrainer {
    pub user: usize,
    pub cfg: LkgConfig,
    depth: usize,
    rewards: Vec<f64>,
    losses: Vec<f64>,
    clamped: usize,
}

#[derive(Debug, Clone)]
pub struct LkgOutcome {
    pub subgraph: LocalSubgraph,
    pub network: Rc<LocalKnowledgeNetwork>,
    pub steps: usize,
    /// Loss before the last step.
    pub loss: f64,
    pub converged: bool,
}

impl LkgTrainer {
    pub fn new(user: usize, cfg: LkgConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self { user, cfg, depth: 0, rewards: Vec::new(), losses: Vec::new(), clamped: 0 })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Replaces the reward storage.
    pub fn observe(&mut self, rewards: &[f64]) {
        self.rewards = rewards.to_vec();
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    /// Predictions clamped so far.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn budget(&self) -> Option<usize> {
        let r = self.rewards.iter().copied().reduce(f64::min)?;
        Some(depth_budget(r, self.cfg.depth_scale, self.cfg.max_depth))
    }

    pub fn converged(&self) -> bool {
        let w = self.cfg.window;
        self.losses.len() > w
            && self.losses[self.losses.len() - w - 1..].windows(2).all(|p| (p[1] - p[0]).abs() < self.cfg.tolerance)
    }
}

/// Grows the local subgraph around `centers` while `d_g` is below the
/// depth budget of `min(P)`, one level per step, and takes GCN steps on
/// the cross-entropy between `σ(⟨user embedding, node representation⟩)`
/// and membership in `relevant`. Stops after `max_steps` steps or once the
/// loss has converged.
pub fn train_lkg(
    lkg: &mut LkgTrainer,
    graph: &impl NeighbourSource,
    centers: &[usize],
    relevant: &[usize],
    kg: &mut ParamStore,
    opt: &mut Optimizer,
) -> Result<LkgOutcome, TrainError> {
    let budget = lkg.budget().ok_or_else(|| TrainError::InvalidArgument("reward storage is empty".into()))?;
    let mut sub = LocalSubgraph::new(centers, graph)?;
    sub.expand_to(lkg.depth, graph)?;
    let user_id = kg.id("user_emb")?;
    let mut network = Rc::new(LocalKnowledgeNetwork::from_subgraph(&sub)?);
    let mut steps = 0;
    let mut loss = f64::NAN;
    while steps < lkg.cfg.max_steps {
        if lkg.depth < budget {
            sub.expand(graph)?;
            lkg.depth += 1;
            network = Rc::new(LocalKnowledgeNetwork::from_subgraph(&sub)?);
        }
        let labels: Vec<f64> = network.nodes().iter().map(|i| if relevant.contains(i) { 1.0 } else { 0.0 }).collect();
        let mut tape = Tape::new();
        let h = gcn_embed(&mut tape, kg, &network)?;
        let u = tape.gather_rows(kg, user_id, &[lkg.user])?;
        let ut = tape.transpose(u);
        let logits = tape.matmul(h, ut)?;
        let preds: Vec<f64> = tape.value(logits).data().iter().map(|&z| sigmoid(z)).collect();
        let (value, clamped) = lkg_loss(&labels, &preds)?;
        if !value.is_finite() {
            return Err(TrainError::NonFinite("local knowledge loss".into()));
        }
        lkg.clamped += clamped;
        let bce = tape.bce_with_logits(logits, labels.into())?;
        kg.zero_grads();
        tape.backward(bce, None)?.accumulate_into(&tape, kg);
        opt.step(kg)?;
        lkg.losses.push(value);
        loss = value;
        steps += 1;
        if lkg.converged() && lkg.depth >= budget {
            break;
        }
    }
    Ok(LkgOutcome { subgraph: sub, network, steps, loss, converged: lkg.converged() })
}
