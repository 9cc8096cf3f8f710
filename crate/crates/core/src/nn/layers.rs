//! Layer builders on top of [`Tape`] plus tensor-in/tensor-out conveniences.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{NnError, SparseMatrix, Tape, Tensor2, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::None => x,
        }
    }
}

/// `x W (+ b)`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, bias: Option<Var>) -> Result<Var, NnError> {
    let xw = tape.matmul(x, w)?;
    match bias {
        Some(b) => tape.add_row(xw, b),
        None => Ok(xw),
    }
}

/// Row `i` of the result is `item_rows[i] + position_rows[i]`.
pub fn positional_embed(tape: &mut Tape, item_rows: Var, position_rows: Var) -> Result<Var, NnError> {
    tape.add(item_rows, position_rows)
}

/// Single-head scaled dot-product self-attention with `d_k` equal to the
/// embedding width: `softmax((E Wq)(E Wk)ᵀ / sqrt(d)) (E Wv)`.
pub fn attention(tape: &mut Tape, e: Var, wq: Var, wk: Var, wv: Var) -> Result<Var, NnError> {
    let d = tape.value(e).cols();
    let q = tape.matmul(e, wq)?;
    let k = tape.matmul(e, wk)?;
    let v = tape.matmul(e, wv)?;
    let kt = tape.transpose(k);
    let logits = tape.matmul(q, kt)?;
    let scaled = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let weights = tape.softmax_rows(scaled);
    tape.matmul(weights, v)
}

/// Symmetric-normalized propagation matrix `D^-1/2 (A + I) D^-1/2` where `D`
/// is the row-sum degree of `A + I`.
#[derive(Debug, Clone)]
pub struct GcnAdjacency {
    matrix: Rc<SparseMatrix>,
}

impl GcnAdjacency {
    /// From a dense square adjacency with non-negative entries.
    pub fn from_dense(a: &Tensor2) -> Result<Self, NnError> {
        if a.rows() != a.cols() {
            return Err(NnError::Shape(format!("adjacency must be square, got {}x{}", a.rows(), a.cols())));
        }
        let n = a.rows();
        let mut rows = vec![Vec::new(); n];
        for (i, row) in rows.iter_mut().enumerate() {
            for j in 0..n {
                let v = a.get(i, j);
                if v != 0.0 {
                    row.push((j, v));
                }
            }
        }
        Self::from_weighted_rows(n, &rows)
    }

    /// From per-node `(neighbour, weight)` lists over nodes `0..n`. Self
    /// loops must not be listed; the identity is added here.
    pub fn from_weighted_rows(n: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self, NnError> {
        if rows.len() != n {
            return Err(NnError::Shape(format!("{} adjacency rows for {} nodes", rows.len(), n)));
        }
        let mut with_self: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        let mut degree = vec![0.0; n];
        for (i, row) in rows.iter().enumerate() {
            let mut r = Vec::with_capacity(row.len() + 1);
            let mut self_weight = 1.0;
            for &(j, w) in row {
                if j >= n {
                    return Err(NnError::Shape(format!("neighbour {} out of range {}", j, n)));
                }
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(NnError::InvalidArgument(format!(
                        "adjacency entry ({}, {}) = {} is not >= 0",
                        i, j, w
                    )));
                }
                if j == i {
                    self_weight += w;
                } else {
                    r.push((j, w));
                }
            }
            r.push((i, self_weight));
            degree[i] = r.iter().map(|&(_, w)| w).sum();
            with_self.push(r);
        }
        let inv_sqrt: Vec<f64> = degree.iter().map(|d: &f64| 1.0 / d.sqrt()).collect();
        let normalized = with_self
            .into_iter()
            .enumerate()
            .map(|(i, row)| row.into_iter().map(|(j, w)| (j, inv_sqrt[i] * w * inv_sqrt[j])).collect())
            .collect();
        Ok(Self { matrix: Rc::new(SparseMatrix::from_rows(n, normalized)?) })
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }
}

/// One propagation step `σ(Â_norm H W)`.
pub fn gcn(tape: &mut Tape, h: Var, adjacency: &GcnAdjacency, w: Var, activation: Activation) -> Result<Var, NnError> {
    let mixed = tape.propagate(adjacency.matrix.clone(), h)?;
    let projected = tape.matmul(mixed, w)?;
    Ok(activation.apply(tape, projected))
}

pub fn linear_forward(x: &Tensor2, w: &Tensor2, bias: Option<&Tensor2>) -> Result<Tensor2, NnError> {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let wv = tape.input(w.clone());
    let bv = bias.map(|b| tape.input(b.clone()));
    let out = linear(&mut tape, xv, wv, bv)?;
    Ok(tape.value(out).clone())
}

pub fn attention_forward(e: &Tensor2, wq: &Tensor2, wk: &Tensor2, wv: &Tensor2) -> Result<Tensor2, NnError> {
    let d = e.cols();
    for (name, w) in [("Wq", wq), ("Wk", wk), ("Wv", wv)] {
        if w.shape() != (d, d) {
            return Err(NnError::Shape(format!("{} must be {}x{}, got {}x{}", name, d, d, w.rows(), w.cols())));
        }
    }
    let mut tape = Tape::new();
    let ev = tape.input(e.clone());
    let q = tape.input(wq.clone());
    let k = tape.input(wk.clone());
    let v = tape.input(wv.clone());
    let out = attention(&mut tape, ev, q, k, v)?;
    Ok(tape.value(out).clone())
}

pub fn positional_embed_forward(item_rows: &Tensor2, position_rows: &Tensor2) -> Result<Tensor2, NnError> {
    item_rows.add(position_rows)
}

pub fn gcn_forward(h: &Tensor2, a: &Tensor2, w: &Tensor2, activation: Activation) -> Result<Tensor2, NnError> {
    if a.rows() != h.rows() {
        return Err(NnError::Shape(format!("{} adjacency rows for {} feature rows", a.rows(), h.rows())));
    }
    let adjacency = GcnAdjacency::from_dense(a)?;
    let mut tape = Tape::new();
    let hv = tape.input(h.clone());
    let wv = tape.input(w.clone());
    let out = gcn(&mut tape, hv, &adjacency, wv, activation)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor2 {
        Tensor2::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    fn close(a: &Tensor2, b: &Tensor2, tol: f64) -> bool {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn linear_identity_and_zero() {
        let w = t(2, 2, &[1.5, -2.0, 0.25, 3.0]);
        assert_eq!(linear_forward(&Tensor2::identity(2), &w, None).unwrap(), w);
        let out = linear_forward(&t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), &Tensor2::zeros(2, 4), None).unwrap();
        assert_eq!(out, Tensor2::zeros(3, 4));
        assert!(linear_forward(&Tensor2::zeros(3, 3), &w, None).is_err());
    }

    #[test]
    fn attention_single_row_is_value_projection() {
        let e = t(1, 2, &[0.3, -1.2]);
        let wq = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let wk = t(2, 2, &[0.5, 0.1, -0.2, 0.7]);
        let wv = t(2, 2, &[0.9, -0.4, 0.2, 1.1]);
        let out = attention_forward(&e, &wq, &wk, &wv).unwrap();
        assert!(close(&out, &e.matmul(&wv).unwrap(), 1e-12));
    }

    #[test]
    fn attention_with_zero_query_key_is_uniform() {
        let e = t(3, 2, &[1.0, 0.0, 0.0, 2.0, -1.0, 1.0]);
        let wv = t(2, 2, &[1.0, 0.5, -0.5, 2.0]);
        let z = Tensor2::zeros(2, 2);
        let out = attention_forward(&e, &z, &z, &wv).unwrap();
        let mean = e.matmul(&wv).unwrap().mean_rows();
        for r in 0..3 {
            for c in 0..2 {
                assert!((out.get(r, c) - mean.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positional_embed_is_rowwise_sum() {
        let m = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = Tensor2::zeros(2, 2);
        assert_eq!(positional_embed_forward(&m, &p).unwrap(), m);
        assert_eq!(positional_embed_forward(&p, &m).unwrap(), m);
        assert!(positional_embed_forward(&m, &Tensor2::zeros(1, 2)).is_err());
    }

    #[test]
    fn gcn_without_edges_is_plain_projection() {
        let h = t(3, 2, &[1.0, -1.0, 0.5, 2.0, -3.0, 0.0]);
        let w = t(2, 2, &[0.2, -0.7, 1.3, 0.4]);
        let out = gcn_forward(&h, &Tensor2::zeros(3, 3), &w, Activation::Tanh).unwrap();
        assert!(close(&out, &h.matmul(&w).unwrap().map(f64::tanh), 0.0));
    }

    #[test]
    fn gcn_two_clique_averages() {
        let a = t(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let out = gcn_forward(&Tensor2::identity(2), &a, &Tensor2::identity(2), Activation::None).unwrap();
        assert!(close(&out, &Tensor2::filled(2, 2, 0.5), 1e-15));
    }

    #[test]
    fn ring_normalization_has_unit_row_sums() {
        let n = 7;
        let rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![((i + 1) % n, 1.0), ((i + n - 1) % n, 1.0)]).collect();
        let adj = GcnAdjacency::from_weighted_rows(n, &rows).unwrap();
        for i in 0..n {
            let s: f64 = adj.matrix().row(i).iter().map(|&(_, v)| v).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_adjacency_rejected() {
        assert!(GcnAdjacency::from_dense(&t(2, 2, &[0.0, -1.0, 1.0, 0.0])).is_err());
        assert!(GcnAdjacency::from_dense(&Tensor2::zeros(2, 3)).is_err());
    }
}
