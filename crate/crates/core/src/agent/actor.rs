use crate::env::EpisodeState;
use crate::nn::{attention, linear, positional_embed, ParamId, ParamStore, Tape, Var};

use super::{AgentError, Variant};

struct ActorVars {
    item_emb: ParamId,
    pos_emb: ParamId,
    attn: Option<[Var; 3]>,
    fc1: (Var, Var),
    fc2: (Var, Var),
    head: (Var, Var),
}

impl ActorVars {
    fn record(tape: &mut Tape, store: &ParamStore, variant: Variant) -> Result<Self, AgentError> {
        let mut p = |name: &str| -> Result<Var, AgentError> { Ok(tape.param(store, store.id(name)?)) };
        let attn = match variant {
            Variant::MA => None,
            _ => Some([p("attn.wq")?, p("attn.wk")?, p("attn.wv")?]),
        };
        Ok(Self {
            item_emb: store.id("item_emb")?,
            pos_emb: store.id("pos_emb")?,
            attn,
            fc1: (p("fc1.w")?, p("fc1.b")?),
            fc2: (p("fc2.w")?, p("fc2.b")?),
            head: (p("head.w")?, p("head.b")?),
        })
    }
}

fn encode_one(tape: &mut Tape, store: &ParamStore, vars: &ActorVars, state: &EpisodeState) -> Result<Var, AgentError> {
    if state.is_empty() {
        return Err(AgentError::EmptyState);
    }
    let l = store.value(vars.pos_emb).rows();
    if state.len() > l {
        return Err(AgentError::InvalidArgument(format!("state has {} items, window is {}", state.len(), l)));
    }
    let e = tape.gather_rows(store, vars.item_emb, &state.items)?;
    let positions: Vec<usize> = (0..state.len()).collect();
    let p = tape.gather_rows(store, vars.pos_emb, &positions)?;
    let e = positional_embed(tape, e, p)?;
    let h = match vars.attn {
        Some([wq, wk, wv]) => attention(tape, e, wq, wk, wv)?,
        None => tape.mean_rows(e),
    };
    let h = linear(tape, h, vars.fc1.0, Some(vars.fc1.1))?;
    let h = tape.relu(h);
    let h = linear(tape, h, vars.fc2.0, Some(vars.fc2.1))?;
    let h = tape.tanh(h);
    Ok(tape.mean_rows(h))
}

/// Records the actor on `tape` for a batch of states. Returns the stacked
/// state encodings (N × d) and actions `tanh(s W + b)` (N × d).
pub fn actor_forward(
    tape: &mut Tape,
    store: &ParamStore,
    variant: Variant,
    states: &[&EpisodeState],
) -> Result<(Var, Var), AgentError> {
    if states.is_empty() {
        return Err(AgentError::InvalidArgument("empty batch".into()));
    }
    let vars = ActorVars::record(tape, store, variant)?;
    let rows = states.iter().map(|s| encode_one(tape, store, &vars, s)).collect::<Result<Vec<_>, _>>()?;
    let s = tape.stack_rows(&rows)?;
    let a = linear(tape, s, vars.head.0, Some(vars.head.1))?;
    let a = tape.tanh(a);
    Ok((s, a))
}

/// The state vector: embedded items plus positions, self-attention (skipped
/// for M-A, which averages the embedded rows instead), FC-ReLU, FC-tanh,
/// mean over rows.
pub fn encode_state(store: &ParamStore, variant: Variant, state: &EpisodeState) -> Result<Vec<f64>, AgentError> {
    let mut tape = Tape::new();
    let (s, _) = actor_forward(&mut tape, store, variant, &[state])?;
    Ok(tape.value(s).data().to_vec())
}

/// Deterministic policy output for one state.
pub fn policy_action(store: &ParamStore, variant: Variant, state: &EpisodeState) -> Result<Vec<f64>, AgentError> {
    let mut tape = Tape::new();
    let (_, a) = actor_forward(&mut tape, store, variant, &[state])?;
    Ok(tape.value(a).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Agent, AgentConfig, ItemInit};
    use crate::nn::{linear_forward, Tensor2};

    fn agent(variant: Variant) -> Agent {
        let cfg = AgentConfig { dim: 6, variant, item_init: ItemInit::Random, ..AgentConfig::default() };
        Agent::new(cfg, 2, 12, 4, None, 3).unwrap()
    }

    #[test]
    fn single_item_state_skips_attention_mixing() {
        let a = agent(Variant::M);
        let st = &a.actor;
        let v = |n: &str| st.value(st.id(n).unwrap()).clone();
        let item = 5;
        let row: Vec<f64> = v("item_emb").row(item).iter().zip(v("pos_emb").row(0)).map(|(x, p)| x + p).collect();
        let e = Tensor2::row_vector(&row);
        // l = 1 attention returns E Wv
        let h = e.matmul(&v("attn.wv")).unwrap();
        let h = linear_forward(&h, &v("fc1.w"), Some(&v("fc1.b"))).unwrap().map(|x| x.max(0.0));
        let h = linear_forward(&h, &v("fc2.w"), Some(&v("fc2.b"))).unwrap().map(f64::tanh);
        let got = encode_state(st, Variant::M, &EpisodeState::new(0, vec![item])).unwrap();
        for (g, w) in got.iter().zip(h.data()) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn output_range_shape_and_order_sensitivity() {
        for variant in [Variant::M, Variant::MA] {
            let a = agent(variant);
            for l in 1..=4 {
                let s = EpisodeState::new(0, (0..l).map(|k| k * 2 + 1).collect());
                let enc = encode_state(&a.actor, variant, &s).unwrap();
                assert_eq!(enc.len(), 6);
                assert!(enc.iter().all(|x| x.abs() < 1.0));
            }
        }
        let a = agent(Variant::M);
        let x = encode_state(&a.actor, Variant::M, &EpisodeState::new(0, vec![1, 7, 3])).unwrap();
        let y = encode_state(&a.actor, Variant::M, &EpisodeState::new(0, vec![7, 1, 3])).unwrap();
        assert_ne!(x, y);
    }

    #[test]
    fn empty_and_oversized_states_fail() {
        let a = agent(Variant::M);
        assert!(matches!(
            encode_state(&a.actor, Variant::M, &EpisodeState::new(0, vec![])),
            Err(AgentError::EmptyState)
        ));
        assert!(encode_state(&a.actor, Variant::M, &EpisodeState::new(0, vec![0, 1, 2, 3, 4])).is_err());
    }
}
