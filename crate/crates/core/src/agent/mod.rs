//! Actor (state encoder and policy head), critic (Q from state, action and
//! a GCN summary of the local knowledge network) and action resolution.

mod actor;
mod critic;

use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::EpisodeState;
use crate::kg::KgError;
use crate::nn::{read_checkpoint, write_checkpoint, NnError, ParamStore, Tensor2};

pub use actor::{actor_forward, encode_state, policy_action};
pub use critic::{critic_forward, critic_q, formula_q, gcn_embed, gcn_summary, LocalKnowledgeNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    /// Full model.
    #[default]
    #[serde(rename = "M")]
    M,
    /// No attention layer: the mean of the embedded rows feeds the FC stack.
    #[serde(rename = "M-A")]
    MA,
    /// The critic's GCN runs on the whole user graph instead of the local
    /// subgraph.
    #[serde(rename = "M-K")]
    MK,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::M => "M",
            Variant::MA => "M-A",
            Variant::MK => "M-K",
        }
    }
}

impl FromStr for Variant {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M" | "m" => Ok(Variant::M),
            "M-A" | "m-a" | "MA" => Ok(Variant::MA),
            "M-K" | "m-k" | "MK" => Ok(Variant::MK),
            _ => Err(AgentError::InvalidArgument(format!("unknown variant {:?} (expected M, M-A or M-K)", s))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemInit {
    /// Item embeddings start from the LMF item factors fitted on the
    /// training split.
    #[default]
    Lmf,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QMode {
    /// Q is the critic network's output, trained on TD targets.
    #[default]
    Learned,
    /// Q is the path reward from the resolved item to the target, computed
    /// on the local subgraph. Carries no gradient toward the action.
    Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// Embedding width `d`.
    pub dim: usize,
    /// Width of the actor's first FC layer.
    pub hidden: usize,
    pub critic_hidden: usize,
    pub gcn_hidden: usize,
    pub variant: Variant,
    pub item_init: ItemInit,
    pub q_mode: QMode,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            hidden: 32,
            critic_hidden: 64,
            gcn_hidden: 16,
            variant: Variant::M,
            item_init: ItemInit::Lmf,
            q_mode: QMode::Learned,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.dim == 0 || self.hidden == 0 || self.critic_hidden == 0 || self.gcn_hidden == 0 {
            return Err(AgentError::InvalidArgument("layer widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("state is empty")]
    EmptyState,
    #[error("no candidate items left")]
    NoCandidates,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Kg(#[from] KgError),
}

pub const CHECKPOINT_SECTIONS: [&str; 5] = ["actor", "critic", "actor_target", "critic_target", "kg"];

/// All learnable parameters: online and target actor/critic plus the local
/// knowledge network.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: AgentConfig,
    pub history: usize,
    pub actor: ParamStore,
    pub critic: ParamStore,
    pub actor_target: ParamStore,
    pub critic_target: ParamStore,
    pub kg: ParamStore,
}

impl Agent {
    /// `item_factors` (n_items × dim) is required for [`ItemInit::Lmf`].
    pub fn new(
        cfg: AgentConfig,
        n_users: usize,
        n_items: usize,
        history: usize,
        item_factors: Option<&Tensor2>,
        seed: u64,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        if history == 0 || n_items == 0 || n_users == 0 {
            return Err(AgentError::InvalidArgument("need users, items and a history window".into()));
        }
        let d = cfg.dim;
        let items = match cfg.item_init {
            ItemInit::Lmf => {
                let f = item_factors
                    .ok_or_else(|| AgentError::InvalidArgument("lmf item init needs item factors".into()))?;
                if f.shape() != (n_items, d) {
                    return Err(AgentError::InvalidArgument(format!(
                        "item factors are {:?}, expected ({}, {}); set dim to the LMF rank",
                        f.shape(),
                        n_items,
                        d
                    )));
                }
                Some(f.clone())
            }
            ItemInit::Random => None,
        };

        let mut actor = ParamStore::new(seed);
        match &items {
            Some(f) => actor.insert("item_emb", f.clone())?,
            None => actor.insert_uniform("item_emb", n_items, d, d)?,
        };
        actor.insert_uniform("pos_emb", history, d, d)?;
        if cfg.variant != Variant::MA {
            let bound = (3.0 / d as f64).sqrt();
            actor.insert_bounded("attn.wq", d, d, bound)?;
            actor.insert_bounded("attn.wk", d, d, bound)?;
            actor.insert_bounded("attn.wv", d, d, bound)?;
        }
        actor.insert_uniform("fc1.w", d, cfg.hidden, d)?;
        actor.insert_zeros("fc1.b", 1, cfg.hidden)?;
        actor.insert_uniform("fc2.w", cfg.hidden, d, cfg.hidden)?;
        actor.insert_zeros("fc2.b", 1, d)?;
        actor.insert_uniform("head.w", d, d, d)?;
        actor.insert_zeros("head.b", 1, d)?;

        let mut critic = ParamStore::new(seed.wrapping_add(1));
        critic.insert_uniform("fc1.w", 3 * d, cfg.critic_hidden, 3 * d)?;
        critic.insert_zeros("fc1.b", 1, cfg.critic_hidden)?;
        critic.insert_uniform("fc2.w", cfg.critic_hidden, 1, cfg.critic_hidden)?;
        critic.insert_zeros("fc2.b", 1, 1)?;

        let mut kg = ParamStore::new(seed.wrapping_add(2));
        match &items {
            Some(f) => kg.insert("item_emb", f.clone())?,
            None => kg.insert_uniform("item_emb", n_items, d, d)?,
        };
        kg.insert_uniform("user_emb", n_users, d, d)?;
        kg.insert_uniform("gcn.w0", d, cfg.gcn_hidden, d)?;
        kg.insert_uniform("gcn.w1", cfg.gcn_hidden, d, cfg.gcn_hidden)?;

        Ok(Self { cfg, history, actor_target: actor.clone(), critic_target: critic.clone(), actor, critic, kg })
    }

    pub fn n_items(&self) -> usize {
        self.actor.value(self.actor.id("item_emb").expect("item_emb")).rows()
    }

    pub fn item_embeddings(&self) -> &Tensor2 {
        self.actor.value(self.actor.id("item_emb").expect("item_emb"))
    }

    /// Deterministic policy output plus `N(0, noise_scale²)` per entry.
    pub fn act(&self, state: &EpisodeState, noise_scale: f64, rng: &mut impl Rng) -> Result<Vec<f64>, AgentError> {
        let mut a = policy_action(&self.actor, self.cfg.variant, state)?;
        if noise_scale > 0.0 {
            let n = Normal::new(0.0, noise_scale).map_err(|e| AgentError::InvalidArgument(e.to_string()))?;
            a.iter_mut().for_each(|x| *x += n.sample(rng));
        }
        Ok(a)
    }

    /// Chosen item for an action, among `available` items.
    pub fn resolve(&self, action: &[f64], available: &[bool]) -> Result<usize, AgentError> {
        resolve_item(action, available, self.item_embeddings())
    }

    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<(), AgentError> {
        let sections: Vec<(&str, &ParamStore)> = CHECKPOINT_SECTIONS
            .iter()
            .zip([&self.actor, &self.critic, &self.actor_target, &self.critic_target, &self.kg])
            .map(|(n, s)| (*n, s))
            .collect();
        write_checkpoint(out, &sections)?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(cfg: AgentConfig, history: usize, input: R) -> Result<Self, AgentError> {
        let mut sections = read_checkpoint(input)?;
        let mut take = |name: &str| {
            let k = sections
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| AgentError::InvalidArgument(format!("checkpoint lacks section {}", name)))?;
            Ok::<_, AgentError>(sections.swap_remove(k).1)
        };
        let agent = Self {
            actor: take("actor")?,
            critic: take("critic")?,
            actor_target: take("actor_target")?,
            critic_target: take("critic_target")?,
            kg: take("kg")?,
            cfg,
            history,
        };
        agent.actor.check_mirrors(&agent.actor_target)?;
        agent.critic.check_mirrors(&agent.critic_target)?;
        if agent.cfg.variant == Variant::MA && agent.actor.contains("attn.wq") {
            return Err(AgentError::InvalidArgument("checkpoint has attention weights but variant is M-A".into()));
        }
        Ok(agent)
    }
}

/// `argmax_i ⟨a, 𝓜_i⟩` over available items; ties go to the smallest index.
pub fn resolve_item(action: &[f64], available: &[bool], embeddings: &Tensor2) -> Result<usize, AgentError> {
    if action.len() != embeddings.cols() {
        return Err(AgentError::InvalidArgument(format!(
            "action has {} entries, embeddings {}",
            action.len(),
            embeddings.cols()
        )));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, _) in available.iter().enumerate().filter(|(_, &a)| a) {
        let s = crate::nn::dot(action, embeddings.row(i));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i).ok_or(AgentError::NoCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(variant: Variant, d: usize) -> Agent {
        let cfg = AgentConfig { dim: d, variant, item_init: ItemInit::Random, ..AgentConfig::default() };
        Agent::new(cfg, 3, 20, 4, None, 7).unwrap()
    }

    #[test]
    fn resolve_self_match_and_ties() {
        let e = Tensor2::identity(4);
        assert_eq!(resolve_item(&[0.0, 0.0, 1.0, 0.0], &[true; 4], &e).unwrap(), 2);
        assert_eq!(resolve_item(&[1.0, 1.0, 0.0, 0.0], &[true; 4], &e).unwrap(), 0);
        assert_eq!(resolve_item(&[1.0, 1.0, 0.0, 0.0], &[false, true, true, true], &e).unwrap(), 1);
        assert!(matches!(resolve_item(&[1.0; 4], &[false; 4], &e), Err(AgentError::NoCandidates)));
    }

    #[test]
    fn targets_start_as_exact_copies() {
        let a = agent(Variant::M, 8);
        for id in a.actor.ids() {
            assert_eq!(a.actor.value(id), a.actor_target.value(id));
        }
        for id in a.critic.ids() {
            assert_eq!(a.critic.value(id), a.critic_target.value(id));
        }
    }

    #[test]
    fn ablation_differs_only_in_attention_weights() {
        let m = agent(Variant::M, 8);
        let ma = agent(Variant::MA, 8);
        let names_m: Vec<&str> = m.actor.names().collect();
        let names_ma: Vec<&str> = ma.actor.names().collect();
        let extra: Vec<&str> = names_m.iter().copied().filter(|n| !names_ma.contains(n)).collect();
        assert_eq!(extra, vec!["attn.wq", "attn.wk", "attn.wv"]);
        assert!(names_ma.iter().all(|n| names_m.contains(n)));
        assert_eq!(m.actor.scalar_count() - ma.actor.scalar_count(), 3 * 8 * 8);
        assert_eq!(m.critic.scalar_count(), ma.critic.scalar_count());
    }

    #[test]
    fn act_shapes_and_determinism() {
        for d in [4, 8, 16] {
            let a = agent(Variant::M, d);
            let s = EpisodeState::new(0, vec![1, 5, 3]);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let x = a.act(&s, 0.0, &mut rng).unwrap();
            assert_eq!(x.len(), d);
            assert_eq!(x, a.act(&s, 0.0, &mut rng).unwrap());
            let n1 = a.act(&s, 0.1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            let n2 = a.act(&s, 0.1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
            assert_eq!(n1, n2);
            assert_ne!(n1, x);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = agent(Variant::M, 4);
        let mut buf = Vec::new();
        a.write_checkpoint(&mut buf).unwrap();
        let b = Agent::read_checkpoint(a.cfg.clone(), 4, &buf[..]).unwrap();
        let s = EpisodeState::new(1, vec![2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(a.act(&s, 0.0, &mut rng).unwrap(), b.act(&s, 0.0, &mut rng).unwrap());
        let mut again = Vec::new();
        b.write_checkpoint(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn variant_names_parse() {
        for v in [Variant::M, Variant::MA, Variant::MK] {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.as_str()));
        }
        assert!("M-X".parse::<Variant>().is_err());
    }
}
