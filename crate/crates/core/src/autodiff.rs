//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation as it runs; node ids are handed out in
//! execution order, so a reverse walk over the node list visits each node
//! after everything that consumed it. Sparse operands (graph operators,
//! features) and the eigenbasis enter as constants and never receive
//! gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::filters::sigmoid;
use crate::sparse::SparseMatrix;

/// A value with an optional gradient slot; model parameters live in these.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub value: Matrix,
    pub requires_grad: bool,
    pub grad: Option<Matrix>,
}

impl Tensor {
    pub fn param(value: Matrix) -> Self {
        Tensor {
            value,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn constant(value: Matrix) -> Self {
        Tensor {
            value,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `aᵀ · b`
    MatMulTn(Var, Var),
    /// Constant sparse operator times a dense node.
    Spmm {
        op: Arc<SparseMatrix>,
        x: Var,
    },
    Add(Var, Var),
    /// Adds a `1 × d` row to every row.
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    /// Multiplies row `i` of the first operand by entry `i` of a column.
    ScaleRows(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        /// Softmax probabilities of the masked rows.
        probs: Vec<(usize, Vec<f64>)>,
        labels: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    requires_grad: bool,
    op: Op,
    grad: Option<Matrix>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn tensor(&mut self, t: &Tensor) -> Var {
        self.leaf(t.value.clone(), t.requires_grad)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, &[a, b], Op::MatMul(a, b)))
    }

    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_tn(self.value(b))?;
        Ok(self.push(value, &[a, b], Op::MatMulTn(a, b)))
    }

    pub fn sparse_matmul(&mut self, op: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let value = op.spmm(self.value(x))?;
        Ok(self.push(value, &[x], Op::Spmm { op, x }))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, &[a, b], Op::Add(a, b)))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.value(x).shape(), self.value(row).shape());
        if rs != (1, xs.1) {
            return Err(Error::shape("add_row", format!("{xs:?} + {rs:?}")));
        }
        let mut value = self.value(x).clone();
        let r = self.value(row).as_slice().to_vec();
        for i in 0..xs.0 {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(value, &[x, row], Op::AddRow(x, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, &[a, b], Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(value, &[a], Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, &[a], Op::AddScalar(a))
    }

    pub fn scale_rows(&mut self, x: Var, g: Var) -> Result<Var> {
        let (xs, gs) = (self.value(x).shape(), self.value(g).shape());
        if gs != (xs.0, 1) {
            return Err(Error::shape("scale_rows", format!("{xs:?} by {gs:?}")));
        }
        let mut value = self.value(x).clone();
        for i in 0..xs.0 {
            let s = self.value(g).get(i, 0);
            value.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(value, &[x, g], Op::ScaleRows(x, g)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        // NaN passes through so divergence reaches the loss.
        let value = self.value(a).map(|x| if x < 0.0 { 0.0 } else { x });
        self.push(value, &[a], Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, &[a], Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, &[a], Op::Sum(a))
    }

    /// Inverted dropout: during training each entry survives with
    /// probability `1 − rate` and is scaled by `1 / (1 − rate)`. Identity in
    /// evaluation mode or at rate zero.
    pub fn dropout(&mut self, x: Var, rate: f64, seed: u64, training: bool) -> Result<Var> {
        check_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.as_mut_slice().iter_mut().zip(&mask) {
            *v *= m;
        }
        Ok(self.push(value, &[x], Op::Dropout { x, mask }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)` over
    /// the rows selected by `mask`.
    pub fn log_softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let z = self.value(logits);
        let (n, c) = z.shape();
        if labels.len() != n || mask.len() != n {
            return Err(Error::shape(
                "log_softmax_cross_entropy",
                format!("{n} rows, {} labels, {} mask entries", labels.len(), mask.len()),
            ));
        }
        let rows: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        if rows.is_empty() {
            return Err(Error::Data("cross-entropy over an empty mask".into()));
        }
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(rows.len());
        for &i in &rows {
            let y = labels[i];
            if y >= c {
                return Err(Error::Index { index: y, bound: c });
            }
            let row = z.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            probs.push((i, row.iter().map(|v| (v - lse).exp()).collect()));
        }
        let value = Matrix::scalar(loss / rows.len() as f64);
        Ok(self.push(
            value,
            &[logits],
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
        ))
    }

    /// Fills the gradient of every node that requires one. Gradients from
    /// several consumers of a node are summed. Calling again overwrites.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = self.nodes[id].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(id, &g)?;
            self.nodes[id].grad = Some(g);
            for (input, grad) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut self.nodes[input.0].grad {
                    Some(acc) => acc.add_assign(&grad)?,
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    /// Vector–Jacobian products of node `id` for upstream gradient `g`.
    fn local_grads(&self, id: usize, g: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let node = &self.nodes[id];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.matmul_nt(self.value(*b))?));
                }
                if needs(*b) {
                    out.push((*b, self.value(*a).matmul_tn(g)?));
                }
            }
            Op::MatMulTn(a, b) => {
                if needs(*a) {
                    out.push((*a, self.value(*b).matmul_nt(g)?));
                }
                if needs(*b) {
                    out.push((*b, self.value(*a).matmul(g)?));
                }
            }
            Op::Spmm { op, x } => {
                if needs(*x) {
                    let grad = if op.is_symmetric() {
                        op.spmm(g)?
                    } else {
                        op.transpose().spmm(g)?
                    };
                    out.push((*x, grad));
                }
            }
            Op::Add(a, b) => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::AddRow(x, row) => {
                out.push((*x, g.clone()));
                if needs(*row) {
                    let mut acc = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (a, v) in acc.as_mut_slice().iter_mut().zip(g.row(i)) {
                            *a += v;
                        }
                    }
                    out.push((*row, acc));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    out.push((*a, g.zip_map(self.value(*b), |u, v| u * v)?));
                }
                if needs(*b) {
                    out.push((*b, g.zip_map(self.value(*a), |u, v| u * v)?));
                }
            }
            Op::Scale(a, c) => out.push((*a, g.scale(*c))),
            Op::AddScalar(a) => out.push((*a, g.clone())),
            Op::ScaleRows(x, s) => {
                let xv = self.value(*x);
                let sv = self.value(*s);
                if needs(*x) {
                    let mut gx = g.clone();
                    for i in 0..gx.rows() {
                        let f = sv.get(i, 0);
                        gx.row_mut(i).iter_mut().for_each(|v| *v *= f);
                    }
                    out.push((*x, gx));
                }
                if needs(*s) {
                    let gs: Vec<f64> = (0..g.rows())
                        .map(|i| g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum())
                        .collect();
                    out.push((*s, Matrix::column(&gs)));
                }
            }
            Op::Relu(a) => {
                out.push((*a, g.zip_map(self.value(*a), |u, x| if x > 0.0 { u } else { 0.0 })?));
            }
            Op::Sigmoid(a) => {
                out.push((*a, g.zip_map(&node.value, |u, s| u * s * (1.0 - s))?));
            }
            Op::Dropout { x, mask } => {
                let mut gx = g.clone();
                for (v, m) in gx.as_mut_slice().iter_mut().zip(mask) {
                    *v *= m;
                }
                out.push((*x, gx));
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                out.push((*a, Matrix::filled(r, c, g.get(0, 0))));
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let (n, c) = self.value(*logits).shape();
                let mut gz = Matrix::zeros(n, c);
                let w = g.get(0, 0) / probs.len() as f64;
                for (i, p) in probs {
                    let row = gz.row_mut(*i);
                    for (j, pj) in p.iter().enumerate() {
                        row[j] = w * pj;
                    }
                    row[labels[*i]] -= w;
                }
                out.push((*logits, gz));
            }
        }
        Ok(out)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted dropout on the stored entries of a constant sparse matrix.
/// Zeros stay zero, so this matches dense dropout on the same matrix.
pub fn sparse_dropout(x: &SparseMatrix, rate: f64, seed: u64) -> Result<SparseMatrix> {
    check_rate(rate)?;
    if rate == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(x.map_values(|_, _, v| if rng.gen::<f64>() < keep { v / keep } else { 0.0 }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2: `g ← g + weight_decay · θ` before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// One bias-corrected Adam update of every parameter from its `grad`.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
        return Err(Error::Contract(format!("parameter {i} has no gradient")));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.grad.as_ref().expect("checked above");
        if grad.shape() != p.value.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("grad {:?} for parameter {:?}", grad.shape(), p.value.shape()),
            ));
        }
        let g: Vec<f64> = grad
            .as_slice()
            .iter()
            .zip(p.value.as_slice())
            .map(|(g, w)| g + cfg.weight_decay * w)
            .collect();
        for (((w, g), m), v) in p
            .value
            .as_mut_slice()
            .iter_mut()
            .zip(g)
            .zip(m.as_mut_slice())
            .zip(v.as_mut_slice())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
