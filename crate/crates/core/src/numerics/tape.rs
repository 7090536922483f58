//! Reverse-mode recording.
//!
//! Every op appends a node holding its forward value and the indices of its
//! inputs. [`Tape::backward`] walks the nodes in exact reverse order, so a
//! node's gradient is complete before it is propagated to its inputs.

use super::ops::{bce_sum_tensor, Ops, ParamId, ParamStore, BCE_EPS, LAYER_NORM_EPS};
use super::tensor::{layer_norm_rows, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Param(ParamId),
    Const,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        inv_std: Vec<f64>,
        xhat: Tensor,
    },
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    Sum(usize),
    BceSum(usize, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar w.r.t. every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    per_node: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.per_node[v.0].as_ref()
    }

    /// Gradient per parameter of `store`, summed over every place the
    /// parameter entered the tape. Parameters that never entered get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out = store.zeros_like();
        for &(node, id) in &self.params {
            if let Some(g) = &self.per_node[node] {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = self.val(loss);
        if out.len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got {:?}", out.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(out.shape(), 1.0));
        let mut params = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(id) = node.op {
                params.push((idx, id));
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            per_node: grads,
            params,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let mut acc = |i: usize, delta: Tensor| match &mut grads[i] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let v = |i: usize| &self.nodes[i].value;
        match &node.op {
            Op::Param(_) | Op::Const => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_bt(v(*b))?);
                acc(*b, v(*a).matmul_at(g)?);
            }
            Op::MatMulBt(a, b) => {
                acc(*a, g.matmul(v(*b))?);
                acc(*b, g.matmul_at(v(*a))?);
            }
            Op::Transpose(a) => acc(*a, g.transpose()?),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                acc(*a, g.mul(v(*b))?);
                acc(*b, g.mul(v(*a))?);
            }
            Op::AddRow(a, b) => {
                acc(*a, g.clone());
                let cols = g.cols();
                let mut sums = vec![0.0; cols];
                for r in 0..g.rows() {
                    for (s, x) in sums.iter_mut().zip(g.row(r)) {
                        *s += x;
                    }
                }
                acc(*b, Tensor::new(v(*b).shape().to_vec(), sums)?);
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))?),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))?),
            Op::Relu(a) => acc(*a, g.zip_map(v(*a), |g, x| if x > 0.0 { g } else { 0.0 })?),
            Op::Softmax(a) => {
                let y = &node.value;
                let (m, n) = (y.rows(), y.cols());
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, Tensor::new(vec![m, n], dx)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                inv_std,
                xhat,
            } => {
                let gam = v(*gamma);
                let (m, n) = (g.rows(), g.cols());
                let mut dx = vec![0.0; m * n];
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for r in 0..m {
                    let gr = g.row(r);
                    let xr = xhat.row(r);
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for j in 0..n {
                        let d = gr[j] * gam.data()[j];
                        sum_d += d;
                        sum_dx += d * xr[j];
                        dgamma[j] += gr[j] * xr[j];
                        dbeta[j] += gr[j];
                    }
                    let k = inv_std[r] / n as f64;
                    for j in 0..n {
                        let d = gr[j] * gam.data()[j];
                        dx[r * n + j] = k * (n as f64 * d - sum_d - xr[j] * sum_dx);
                    }
                }
                acc(*x, Tensor::new(vec![m, n], dx)?);
                acc(*gamma, Tensor::new(gam.shape().to_vec(), dgamma)?);
                acc(*beta, Tensor::new(v(*beta).shape().to_vec(), dbeta)?);
            }
            Op::SliceCols(a, start) => {
                let slot = grads[*a].get_or_insert_with(|| Tensor::zeros(v(*a).shape()));
                let n = slot.cols();
                let w = g.cols();
                let dst = slot.data_mut();
                for r in 0..g.rows() {
                    for (d, x) in dst[r * n + start..r * n + start + w].iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let slot = grads[*a].get_or_insert_with(|| Tensor::zeros(v(*a).shape()));
                let n = slot.cols();
                for (d, x) in slot.data_mut()[start * n..start * n + g.len()].iter_mut().zip(g.data()) {
                    *d += x;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = v(p).cols();
                    acc(p, g.slice_cols(off, w)?);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = v(p).rows();
                    acc(p, g.slice_rows(off, h)?);
                    off += h;
                }
            }
            Op::Sum(a) => acc(*a, Tensor::full(v(*a).shape(), g.item())),
            Op::BceSum(a, target) => {
                let gs = g.item();
                let d = v(*a).zip_map(target, |p, y| {
                    if p > BCE_EPS && p < 1.0 - BCE_EPS {
                        gs * (-y / p + (1.0 - y) / (1.0 - p))
                    } else {
                        0.0
                    }
                })?;
                acc(*a, d);
            }
        }
        Ok(())
    }
}

impl Ops for Tape {
    type V = Var;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone(), Op::Param(id))
    }

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Const)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        self.val(*v)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).matmul(self.val(*b))?;
        Ok(self.push(y, Op::MatMul(a.0, b.0)))
    }

    fn matmul_bt(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).matmul_bt(self.val(*b))?;
        Ok(self.push(y, Op::MatMulBt(a.0, b.0)))
    }

    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let y = self.val(*a).transpose()?;
        Ok(self.push(y, Op::Transpose(a.0)))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).add(self.val(*b))?;
        Ok(self.push(y, Op::Add(a.0, b.0)))
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let y = self.val(*a).mul(self.val(*b))?;
        Ok(self.push(y, Op::Mul(a.0, b.0)))
    }

    fn add_row(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let y = self.val(*a).add_row(self.val(*bias))?;
        Ok(self.push(y, Op::AddRow(a.0, bias.0)))
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        let y = self.val(*a).scale(s);
        self.push(y, Op::Scale(a.0, s))
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        let y = self.val(*a).sigmoid();
        self.push(y, Op::Sigmoid(a.0))
    }

    fn tanh(&mut self, a: &Var) -> Var {
        let y = self.val(*a).tanh();
        self.push(y, Op::Tanh(a.0))
    }

    fn relu(&mut self, a: &Var) -> Var {
        let y = self.val(*a).relu();
        self.push(y, Op::Relu(a.0))
    }

    fn softmax_rows(&mut self, a: &Var) -> Result<Var> {
        let y = self.val(*a).softmax_rows()?;
        Ok(self.push(y, Op::Softmax(a.0)))
    }

    fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var) -> Result<Var> {
        let (y, means, inv_std) =
            layer_norm_rows(self.val(*x), self.val(*gamma), self.val(*beta), LAYER_NORM_EPS)?;
        let xv = self.val(*x);
        let n = xv.cols();
        let mut xhat = xv.clone();
        for (r, (mean, inv)) in means.iter().zip(&inv_std).enumerate() {
            for val in &mut xhat.data_mut()[r * n..(r + 1) * n] {
                *val = (*val - mean) * inv;
            }
        }
        Ok(self.push(
            y,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                inv_std,
                xhat,
            },
        ))
    }

    fn slice_cols(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let y = self.val(*a).slice_cols(start, len)?;
        Ok(self.push(y, Op::SliceCols(a.0, start)))
    }

    fn slice_rows(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let y = self.val(*a).slice_rows(start, len)?;
        Ok(self.push(y, Op::SliceRows(a.0, start)))
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let y = Tensor::concat_cols(&refs)?;
        Ok(self.push(y, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(*p)).collect();
        let y = Tensor::concat_rows(&refs)?;
        Ok(self.push(y, Op::ConcatRows(parts.iter().map(|p| p.0).collect())))
    }

    fn sum(&mut self, a: &Var) -> Var {
        let y = Tensor::scalar(self.val(*a).sum());
        self.push(y, Op::Sum(a.0))
    }

    fn bce_sum(&mut self, pred: &Var, target: &Tensor) -> Result<Var> {
        let y = Tensor::scalar(bce_sum_tensor(self.val(*pred), target)?);
        Ok(self.push(y, Op::BceSum(pred.0, target.clone())))
    }
}
