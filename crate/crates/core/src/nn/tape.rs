//! Tape-based reverse-mode differentiation over [`Tensor2`] values.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the nodes in exact reverse order of recording, so each node's
//! gradient is complete before it is propagated to its inputs.

use std::rc::Rc;

use super::{NnError, ParamId, ParamStore, Tensor2};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix in row-compressed form, used as the left operand
/// of [`Tape::propagate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_start: Vec<usize>,
    entries: Vec<(usize, f64)>,
}

impl SparseMatrix {
    /// `rows[i]` lists the `(column, value)` entries of row `i`.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self, NnError> {
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::new();
        row_start.push(0);
        for r in &rows {
            for &(c, v) in r {
                if c >= n_cols {
                    return Err(NnError::Shape(format!("column {} out of range {}", c, n_cols)));
                }
                entries.push((c, v));
            }
            row_start.push(entries.len());
        }
        Ok(Self { n_rows: rows.len(), n_cols, row_start, entries })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.row_start[i]..self.row_start[i + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Tensor2 {
        let mut t = Tensor2::zeros(self.n_rows, self.n_cols);
        for i in 0..self.n_rows {
            for &(j, v) in self.row(i) {
                t.set(i, j, t.get(i, j) + v);
            }
        }
        t
    }

    pub fn mul_dense(&self, x: &Tensor2) -> Result<Tensor2, NnError> {
        if x.rows() != self.n_cols {
            return Err(NnError::Shape(format!("sparse {}x{} by {}x{}", self.n_rows, self.n_cols, x.rows(), x.cols())));
        }
        let mut out = Tensor2::zeros(self.n_rows, x.cols());
        for i in 0..self.n_rows {
            for &(j, v) in self.row(i) {
                let src = x.row(j);
                for (o, s) in out.row_mut(i).iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · g`.
    fn mul_transposed_dense(&self, g: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(self.n_cols, g.cols());
        for i in 0..self.n_rows {
            let gi = g.row(i).to_vec();
            for &(j, v) in self.row(i) {
                for (o, s) in out.row_mut(j).iter_mut().zip(&gi) {
                    *o += v * s;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    GatherRows { param: ParamId, rows: Vec<usize> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    Propagate { matrix: Rc<SparseMatrix>, x: Var },
    BceWithLogits { logits: Var, labels: Rc<[f64]> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor2,
    op: Op,
}

/// Which kind of operation produced a node; exposed for instrumentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpTag {
    Input,
    Param,
    GatherRows,
    MatMul,
    Transpose,
    Add,
    AddRow,
    Mul,
    Scale,
    Relu,
    Tanh,
    Sigmoid,
    SoftmaxRows,
    MeanRows,
    Sum,
    ConcatCols,
    StackRows,
    Propagate,
    BceWithLogits,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn tag(&self, v: Var) -> OpTag {
        match &self.nodes[v.0].op {
            Op::Input => OpTag::Input,
            Op::Param(_) => OpTag::Param,
            Op::GatherRows { .. } => OpTag::GatherRows,
            Op::MatMul(..) => OpTag::MatMul,
            Op::Transpose(_) => OpTag::Transpose,
            Op::Add(..) => OpTag::Add,
            Op::AddRow(..) => OpTag::AddRow,
            Op::Mul(..) => OpTag::Mul,
            Op::Scale(..) => OpTag::Scale,
            Op::Relu(_) => OpTag::Relu,
            Op::Tanh(_) => OpTag::Tanh,
            Op::Sigmoid(_) => OpTag::Sigmoid,
            Op::SoftmaxRows(_) => OpTag::SoftmaxRows,
            Op::MeanRows(_) => OpTag::MeanRows,
            Op::Sum(_) => OpTag::Sum,
            Op::ConcatCols(_) => OpTag::ConcatCols,
            Op::StackRows(_) => OpTag::StackRows,
            Op::Propagate { .. } => OpTag::Propagate,
            Op::BceWithLogits { .. } => OpTag::BceWithLogits,
        }
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`] but never
    /// written to a parameter store.
    pub fn input(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Embedding lookup: selected rows of a parameter, stacked in order.
    pub fn gather_rows(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> Result<Var, NnError> {
        let table = store.value(id);
        let mut out = Tensor2::zeros(rows.len(), table.cols());
        for (k, &r) in rows.iter().enumerate() {
            if r >= table.rows() {
                return Err(NnError::Shape(format!(
                    "row {} out of range for {} ({} rows)",
                    r,
                    store.name(id),
                    table.rows()
                )));
            }
            out.row_mut(k).copy_from_slice(table.row(r));
        }
        Ok(self.push(out, Op::GatherRows { param: id, rows: rows.to_vec() }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds the single-row `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NnError> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() {
            return Err(NnError::Shape(format!(
                "bias {}x{} cannot broadcast over {}x{}",
                rv.rows(),
                rv.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        let mut out = xv.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(x, row)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).softmax_rows();
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_rows();
        self.push(v, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor2::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(NnError::Shape("concat_cols on tensors with different row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        if parts.iter().any(|&p| self.value(p).cols() != cols) {
            return Err(NnError::Shape("stack_rows on tensors with different column counts".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = Tensor2::from_vec(if cols == 0 { 0 } else { rows }, cols, data)?;
        Ok(self.push(out, Op::StackRows(parts.to_vec())))
    }

    /// `matrix · x` for a constant sparse `matrix`.
    pub fn propagate(&mut self, matrix: Rc<SparseMatrix>, x: Var) -> Result<Var, NnError> {
        let v = matrix.mul_dense(self.value(x))?;
        Ok(self.push(v, Op::Propagate { matrix, x }))
    }

    /// Summed binary cross-entropy between `sigmoid(logits)` and `labels`,
    /// one label per logit in row-major order.
    pub fn bce_with_logits(&mut self, logits: Var, labels: Rc<[f64]>) -> Result<Var, NnError> {
        let z = self.value(logits);
        if z.data().len() != labels.len() {
            return Err(NnError::Shape(format!("{} logits for {} labels", z.data().len(), labels.len())));
        }
        // softplus(z) - y z == -[y ln σ(z) + (1-y) ln(1-σ(z))]
        let loss: f64 = z.data().iter().zip(labels.iter()).map(|(&z, &y)| softplus(z) - y * z).sum();
        Ok(self.push(Tensor2::filled(1, 1, loss), Op::BceWithLogits { logits, labels }))
    }

    /// Propagates `seed` (defaults to ones) from `root` back to every node
    /// recorded at or before it.
    pub fn backward(&self, root: Var, seed: Option<Tensor2>) -> Result<Gradients, NnError> {
        if self.nodes.is_empty() {
            return Err(NnError::BackwardWithoutForward);
        }
        let root_shape = self.value(root).shape();
        let seed = seed.unwrap_or_else(|| Tensor2::filled(root_shape.0, root_shape.1, 1.0));
        if seed.shape() != root_shape {
            return Err(NnError::Shape("backward seed does not match root shape".into()));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed);
        let mut visit_order = Vec::with_capacity(root.0 + 1);

        for i in (0..=root.0).rev() {
            visit_order.push(i);
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) | Op::GatherRows { .. } => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose())?;
                    let db = self.value(*a).transpose().matmul(&g)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut grads, *row, g.mean_rows().scale(g.rows() as f64));
                    accumulate(&mut grads, *x, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Tensor2::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let inner: f64 = y.row(r).iter().zip(g.row(r)).map(|(y, g)| y * g).sum();
                        for c in 0..y.cols() {
                            d.set(r, c, y.get(r, c) * (g.get(r, c) - inner));
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let mut d = Tensor2::zeros(n, g.cols());
                    let inv = 1.0 / n.max(1) as f64;
                    for r in 0..n {
                        for (o, gv) in d.row_mut(r).iter_mut().zip(g.data()) {
                            *o = gv * inv;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Tensor2::filled(r, c, g.get(0, 0)));
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let cols = self.value(p).cols();
                        let mut d = Tensor2::zeros(g.rows(), cols);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        off += cols;
                        accumulate(&mut grads, p, d);
                    }
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let (rows, cols) = self.value(p).shape();
                        let d = Tensor2::from_vec(rows, cols, g.data()[off * cols..(off + rows) * cols].to_vec())?;
                        off += rows;
                        accumulate(&mut grads, p, d);
                    }
                }
                Op::Propagate { matrix, x } => {
                    accumulate(&mut grads, *x, matrix.mul_transposed_dense(&g));
                }
                Op::BceWithLogits { logits, labels } => {
                    let z = self.value(*logits);
                    let scale = g.get(0, 0);
                    let d: Vec<f64> =
                        z.data().iter().zip(labels.iter()).map(|(&z, &y)| scale * (sigmoid(z) - y)).collect();
                    accumulate(&mut grads, *logits, Tensor2::from_vec(z.rows(), z.cols(), d)?);
                }
            }
        }
        Ok(Gradients { grads, visit_order })
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, g: Tensor2) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    visit_order: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to a recorded value, if it influenced the root.
    pub fn wrt(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Node indices in the order the backward pass visited them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }

    /// Adds parameter gradients into the matching slots of `store`. The tape
    /// must have recorded its parameters from this same store.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (i, g) in self.grads.iter().enumerate() {
            let Some(g) = g else { continue };
            match &tape.nodes[i].op {
                Op::Param(id) => {
                    for (s, x) in store.grad_mut(*id).data_mut().iter_mut().zip(g.data()) {
                        *s += x;
                    }
                }
                Op::GatherRows { param, rows } => {
                    let slot = store.grad_mut(*param);
                    for (k, &r) in rows.iter().enumerate() {
                        for (s, x) in slot.row_mut(r).iter_mut().zip(g.row(k)) {
                            *s += x;
                        }
                    }
                }
                _ => {}
            }
        }
    }
}
