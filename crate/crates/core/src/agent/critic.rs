use std::collections::HashMap;

use crate::kg::{graph_reward, shortest_path, GraphView, LocalSubgraph, UserSpecificGraph};
use crate::nn::{gcn, linear, Activation, GcnAdjacency, ParamStore, Tape, Tensor2, Var};

use super::{resolve_item, AgentError};

/// Items of a (sub)graph with their normalized propagation matrix, in the
/// node order of the source.
#[derive(Debug, Clone)]
pub struct LocalKnowledgeNetwork {
    nodes: Vec<usize>,
    adjacency: GcnAdjacency,
}

impl LocalKnowledgeNetwork {
    pub fn from_subgraph(sub: &LocalSubgraph) -> Result<Self, AgentError> {
        let adjacency = GcnAdjacency::from_weighted_rows(sub.n_nodes(), &sub.local_rows())?;
        Ok(Self { nodes: sub.nodes().to_vec(), adjacency })
    }

    pub fn from_user_graph(g: &UserSpecificGraph) -> Result<Self, AgentError> {
        let index: HashMap<usize, usize> = g.nodes().iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let rows: Vec<Vec<(usize, f64)>> =
            g.nodes().iter().map(|&i| g.neighbours(i).iter().map(|&(j, w)| (index[&j], w)).collect()).collect();
        let adjacency = GcnAdjacency::from_weighted_rows(rows.len(), &rows)?;
        Ok(Self { nodes: g.nodes().to_vec(), adjacency })
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn adjacency(&self) -> &GcnAdjacency {
        &self.adjacency
    }
}

/// Two GCN layers over the item embeddings of `lkn`:
/// `H1 = relu(Â H0 W0)`, `H2 = tanh(Â H1 W1)`. Returns `H2` (n × d).
pub fn gcn_embed(tape: &mut Tape, kg: &ParamStore, lkn: &LocalKnowledgeNetwork) -> Result<Var, AgentError> {
    if lkn.nodes.is_empty() {
        return Err(AgentError::InvalidArgument("knowledge network has no nodes".into()));
    }
    let h0 = tape.gather_rows(kg, kg.id("item_emb")?, &lkn.nodes)?;
    let w0 = tape.param(kg, kg.id("gcn.w0")?);
    let w1 = tape.param(kg, kg.id("gcn.w1")?);
    let h1 = gcn(tape, h0, &lkn.adjacency, w0, Activation::Relu)?;
    Ok(gcn(tape, h1, &lkn.adjacency, w1, Activation::Tanh)?)
}

/// Mean of the GCN node embeddings (1 × d).
pub fn gcn_summary(kg: &ParamStore, lkn: &LocalKnowledgeNetwork) -> Result<Tensor2, AgentError> {
    let mut tape = Tape::new();
    let h = gcn_embed(&mut tape, kg, lkn)?;
    let m = tape.mean_rows(h);
    Ok(tape.value(m).clone())
}

/// `Q = fc2(relu(fc1([s, a, g])))` for a batch (N × 1).
pub fn critic_forward(tape: &mut Tape, critic: &ParamStore, s: Var, a: Var, g: Var) -> Result<Var, AgentError> {
    let x = tape.concat_cols(&[s, a, g])?;
    let w1 = tape.param(critic, critic.id("fc1.w")?);
    let b1 = tape.param(critic, critic.id("fc1.b")?);
    let w2 = tape.param(critic, critic.id("fc2.w")?);
    let b2 = tape.param(critic, critic.id("fc2.b")?);
    let h = linear(tape, x, w1, Some(b1))?;
    let h = tape.relu(h);
    Ok(linear(tape, h, w2, Some(b2))?)
}

pub fn critic_q(critic: &ParamStore, s: &[f64], a: &[f64], g: &[f64]) -> Result<f64, AgentError> {
    let mut tape = Tape::new();
    let s = tape.input(Tensor2::row_vector(s));
    let a = tape.input(Tensor2::row_vector(a));
    let g = tape.input(Tensor2::row_vector(g));
    let q = critic_forward(&mut tape, critic, s, a, g)?;
    Ok(tape.value(q).get(0, 0))
}

/// Path reward from the item the action resolves to, to `target`, searched
/// in `view`. Items outside `view` count as unreachable.
pub fn formula_q(
    action: &[f64],
    available: &[bool],
    embeddings: &Tensor2,
    view: &impl GraphView,
    target: usize,
    epsilon: f64,
    r_max: f64,
) -> Result<f64, AgentError> {
    let item = resolve_item(action, available, embeddings)?;
    let path = if view.contains(item) && view.contains(target) { shortest_path(view, item, target)? } else { None };
    Ok(graph_reward(path.as_ref(), epsilon, r_max)?)
}
