use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{layer_norm_rows, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero-filled tensors with the same shapes, in the same order.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect()
    }
}

/// The differentiable operation set the model is written against.
///
/// [`Eval`] runs forward only; [`super::Tape`] also records for reverse mode.
/// All matrices are 2-D; scalars are `[1,1]`.
pub trait Ops {
    type V: Clone;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::V;
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// `a · bᵀ`
    fn matmul_bt(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn transpose(&mut self, a: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn add_row(&mut self, a: &Self::V, bias: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V;
    fn sigmoid(&mut self, a: &Self::V) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    fn relu(&mut self, a: &Self::V) -> Self::V;
    fn softmax_rows(&mut self, a: &Self::V) -> Result<Self::V>;
    fn layer_norm(&mut self, x: &Self::V, gamma: &Self::V, beta: &Self::V) -> Result<Self::V>;
    fn slice_cols(&mut self, a: &Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn slice_rows(&mut self, a: &Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn concat_rows(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn sum(&mut self, a: &Self::V) -> Self::V;
    /// Summed binary cross-entropy of clamped predictions against constant targets.
    fn bce_sum(&mut self, pred: &Self::V, target: &Tensor) -> Result<Self::V>;

    fn scalar(&mut self, v: &Self::V) -> f64 {
        self.value(v).item()
    }
}

pub(crate) fn bce_value(y: f64, p: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
}

pub(crate) fn bce_sum_tensor(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(
            "bce_sum",
            format!("{:?} vs {:?}", pred.shape(), target.shape()),
        ));
    }
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| bce_value(y, p))
        .sum())
}

/// Forward-only evaluation; no recording.
#[derive(Debug, Default)]
pub struct Eval;

impl Ops for Eval {
    type V = Rc<Tensor>;

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::V {
        Rc::new(store.get(id).clone())
    }

    fn constant(&mut self, t: Tensor) -> Self::V {
        Rc::new(t)
    }

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.matmul(b).map(Rc::new)
    }

    fn matmul_bt(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.matmul_bt(b).map(Rc::new)
    }

    fn transpose(&mut self, a: &Self::V) -> Result<Self::V> {
        a.transpose().map(Rc::new)
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.add(b).map(Rc::new)
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V> {
        a.mul(b).map(Rc::new)
    }

    fn add_row(&mut self, a: &Self::V, bias: &Self::V) -> Result<Self::V> {
        a.add_row(bias).map(Rc::new)
    }

    fn scale(&mut self, a: &Self::V, s: f64) -> Self::V {
        Rc::new(a.scale(s))
    }

    fn sigmoid(&mut self, a: &Self::V) -> Self::V {
        Rc::new(a.sigmoid())
    }

    fn tanh(&mut self, a: &Self::V) -> Self::V {
        Rc::new(a.tanh())
    }

    fn relu(&mut self, a: &Self::V) -> Self::V {
        Rc::new(a.relu())
    }

    fn softmax_rows(&mut self, a: &Self::V) -> Result<Self::V> {
        a.softmax_rows().map(Rc::new)
    }

    fn layer_norm(&mut self, x: &Self::V, gamma: &Self::V, beta: &Self::V) -> Result<Self::V> {
        layer_norm_rows(x, gamma, beta, LAYER_NORM_EPS).map(|(y, _, _)| Rc::new(y))
    }

    fn slice_cols(&mut self, a: &Self::V, start: usize, len: usize) -> Result<Self::V> {
        a.slice_cols(start, len).map(Rc::new)
    }

    fn slice_rows(&mut self, a: &Self::V, start: usize, len: usize) -> Result<Self::V> {
        a.slice_rows(start, len).map(Rc::new)
    }

    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        Tensor::concat_cols(&refs).map(Rc::new)
    }

    fn concat_rows(&mut self, parts: &[Self::V]) -> Result<Self::V> {
        let refs: Vec<&Tensor> = parts.iter().map(|p| p.as_ref()).collect();
        Tensor::concat_rows(&refs).map(Rc::new)
    }

    fn sum(&mut self, a: &Self::V) -> Self::V {
        Rc::new(Tensor::scalar(a.sum()))
    }

    fn bce_sum(&mut self, pred: &Self::V, target: &Tensor) -> Result<Self::V> {
        bce_sum_tensor(pred, target).map(|v| Rc::new(Tensor::scalar(v)))
    }
}
