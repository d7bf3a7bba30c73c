//! Reverse-mode automatic differentiation over a static graph of tensor
//! operations.
//!
//! Nodes are appended to a [`Graph`] and may only refer to nodes created
//! before them, so creation order is a topological order. Parameters keep
//! their values across passes; every other node is recomputed by
//! [`Graph::forward`]. [`Graph::backward`] then walks the graph in reverse
//! and returns the gradient of a scalar loss for every parameter.
//!
//! ```
//! use frnet::autodiff::{Graph, Mode};
//! use frnet::tensor::Tensor;
//!
//! let mut g = Graph::<f32>::new();
//! let x = g.param("x", Tensor::from_vec([2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(x, x);
//! let loss = g.sum(sq);
//! g.forward(Vec::new(), Mode::Eval).unwrap();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nnops::{self, PoolSpec};
use crate::rng;
use crate::tensor::Transpose::{No, Yes};
use crate::tensor::{concat_channels, gemm, slice_channels, Scalar, TensorBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dropout behaviour for a forward pass. In training mode each dropout node
/// draws its mask from a stream derived from `seed` and its node id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Fed per pass; the leading (batch) extent is free, the rest must match.
    Input { name: String, trailing: Vec<usize> },
    Param { name: String },
    Add,
    Sub,
    Mul,
    MatMul,
    BiasAdd,
    Relu,
    Sigmoid,
    Conv2d { stride: usize },
    MaxPool2d(PoolSpec),
    Dropout { keep_prob: f64 },
    Flatten,
    ConcatChannels,
    Sum,
    Mean,
    SumSquares,
    Scale(f64),
    /// Mean binary cross-entropy of `(prediction, target)` with the
    /// prediction clipped to `[eps, 1 - eps]`.
    Bce { eps: f64 },
}

enum Cache<T> {
    Empty,
    Cols(Vec<T>),
    Argmax(Vec<usize>),
    Mask(Vec<T>),
}

struct Node<T> {
    op: Op,
    inputs: Vec<NodeId>,
    value: Option<TensorBase<T>>,
    adjoint: Option<TensorBase<T>>,
    cache: Cache<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Parameter gradients keyed by parameter node.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: BTreeMap<NodeId, TensorBase<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&TensorBase<T>> {
        self.grads.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &TensorBase<T>)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// All nodes in creation (topological) order.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    fn push(&mut self, op: Op, inputs: &[NodeId]) -> NodeId {
        for id in inputs {
            assert!(id.0 < self.nodes.len(), "node {} does not exist yet", id.0);
        }
        let requires_grad = match op {
            Op::Param { .. } => true,
            Op::Input { .. } => false,
            _ => inputs.iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            value: None,
            adjoint: None,
            cache: Cache::Empty,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, name: impl Into<String>, trailing: &[usize]) -> NodeId {
        self.push(
            Op::Input {
                name: name.into(),
                trailing: trailing.to_vec(),
            },
            &[],
        )
    }

    pub fn param(&mut self, name: impl Into<String>, value: TensorBase<T>) -> NodeId {
        let name = name.into();
        assert!(
            self.param_by_name(&name).is_none(),
            "duplicate parameter name `{name}`"
        );
        let id = self.push(Op::Param { name }, &[]);
        self.nodes[id.0].value = Some(value);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul, &[a, b])
    }

    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        self.push(Op::BiasAdd, &[x, bias])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sigmoid, &[x])
    }

    pub fn activation(&mut self, x: NodeId, act: nnops::Activation) -> NodeId {
        match act {
            nnops::Activation::Relu => self.relu(x),
            nnops::Activation::Sigmoid => self.sigmoid(x),
            nnops::Activation::None => x,
        }
    }

    /// Convolution without bias; weights `[fh, fw, cin, cout]`.
    pub fn conv2d(&mut self, x: NodeId, weights: NodeId, stride: usize) -> NodeId {
        assert!(stride >= 1);
        self.push(Op::Conv2d { stride }, &[x, weights])
    }

    pub fn maxpool2d(&mut self, x: NodeId, spec: PoolSpec) -> NodeId {
        assert!(spec.kernel >= 1 && spec.stride >= 1);
        self.push(Op::MaxPool2d(spec), &[x])
    }

    pub fn dropout(&mut self, x: NodeId, keep_prob: f64) -> Result<NodeId> {
        nnops::check_keep_prob(keep_prob)?;
        Ok(self.push(Op::Dropout { keep_prob }, &[x]))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Flatten, &[x])
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        self.push(Op::ConcatChannels, parts)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Mean, &[x])
    }

    pub fn sum_squares(&mut self, x: NodeId) -> NodeId {
        self.push(Op::SumSquares, &[x])
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        self.push(Op::Scale(factor), &[x])
    }

    pub fn bce(&mut self, pred: NodeId, target: NodeId, eps: f64) -> NodeId {
        self.push(Op::Bce { eps }, &[pred, target])
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn value(&self, id: NodeId) -> Option<&TensorBase<T>> {
        self.nodes[id.0].value.as_ref()
    }

    /// Adjoint left by the last backward pass. Parameter adjoints are moved
    /// into the returned [`Gradients`] and are not available here.
    pub fn adjoint(&self, id: NodeId) -> Option<&TensorBase<T>> {
        self.nodes[id.0].adjoint.as_ref()
    }

    pub fn params(&self) -> impl Iterator<Item = (NodeId, &str)> {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match &n.op {
            Op::Param { name } => Some((NodeId(i), name.as_str())),
            _ => None,
        })
    }

    pub fn param_by_name(&self, name: &str) -> Option<NodeId> {
        self.params().find(|(_, n)| *n == name).map(|(id, _)| id)
    }

    pub fn param_value_mut(&mut self, id: NodeId) -> &mut TensorBase<T> {
        let node = &mut self.nodes[id.0];
        assert!(matches!(node.op, Op::Param { .. }), "node {} is not a parameter", id.0);
        node.value.as_mut().expect("parameter without value")
    }

    pub fn set_param(&mut self, id: NodeId, value: TensorBase<T>) -> Result<()> {
        let slot = self.param_value_mut(id);
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {} has shape {}, got {}",
                id.0,
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Evaluates every node.
    pub fn forward(
        &mut self,
        feeds: impl IntoIterator<Item = (NodeId, TensorBase<T>)>,
        mode: Mode,
    ) -> Result<()> {
        let all: Vec<NodeId> = (0..self.nodes.len()).map(NodeId).collect();
        self.forward_to(feeds, mode, &all)
    }

    /// Evaluates only the nodes that `outputs` depend on. Values from any
    /// earlier pass are discarded first.
    pub fn forward_to(
        &mut self,
        feeds: impl IntoIterator<Item = (NodeId, TensorBase<T>)>,
        mode: Mode,
        outputs: &[NodeId],
    ) -> Result<()> {
        let mut needed = vec![false; self.nodes.len()];
        for o in outputs {
            needed[o.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if needed[i] {
                for inp in &self.nodes[i].inputs {
                    needed[inp.0] = true;
                }
            }
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Param { .. }) {
                node.value = None;
            }
            node.adjoint = None;
            node.cache = Cache::Empty;
        }
        for (id, value) in feeds {
            let node = &mut self.nodes[id.0];
            let Op::Input { name, trailing } = &node.op else {
                return Err(Error::ShapeMismatch(format!("node {} is not an input", id.0)));
            };
            if value.dims().get(1..) != Some(trailing.as_slice()) {
                return Err(Error::ShapeMismatch(format!(
                    "input `{name}` expects [batch, {trailing:?}], got {}",
                    value.shape()
                )));
            }
            node.value = Some(value);
        }
        for (i, &need) in needed.iter().enumerate() {
            if !need || self.nodes[i].value.is_some() {
                continue;
            }
            if let Op::Input { name, .. } = &self.nodes[i].op {
                return Err(Error::MissingFeed(name.clone()));
            }
            let (value, cache) = self.eval_node(i, mode)?;
            let node = &mut self.nodes[i];
            node.value = Some(value);
            node.cache = cache;
        }
        Ok(())
    }

    fn input_value(&self, i: usize, k: usize) -> Result<&TensorBase<T>> {
        let id = self.nodes[i].inputs[k];
        self.nodes[id.0].value.as_ref().ok_or(Error::ForwardNotRun(id.0))
    }

    fn eval_node(&self, i: usize, mode: Mode) -> Result<(TensorBase<T>, Cache<T>)> {
        let node = &self.nodes[i];
        let x = |k| self.input_value(i, k);
        let plain = |t: TensorBase<T>| Ok((t, Cache::Empty));
        match &node.op {
            Op::Input { .. } | Op::Param { .. } => unreachable!("leaf nodes are never evaluated"),
            Op::Add => plain(x(0)?.add(x(1)?)?),
            Op::Sub => plain(x(0)?.sub(x(1)?)?),
            Op::Mul => plain(x(0)?.mul(x(1)?)?),
            Op::MatMul => plain(x(0)?.matmul(x(1)?)?),
            Op::BiasAdd => plain(nnops::bias_add_forward(x(0)?, x(1)?)?),
            Op::Relu => plain(nnops::relu(x(0)?)),
            Op::Sigmoid => plain(nnops::sigmoid(x(0)?)),
            Op::Conv2d { stride } => {
                let (y, cols) = nnops::conv2d_forward(x(0)?, x(1)?, *stride)?;
                Ok((y, Cache::Cols(cols)))
            }
            Op::MaxPool2d(spec) => {
                let (y, arg) = nnops::maxpool_forward(x(0)?, *spec)?;
                Ok((y, Cache::Argmax(arg)))
            }
            Op::Dropout { keep_prob } => {
                let v = x(0)?;
                match mode {
                    Mode::Eval => plain(v.clone()),
                    Mode::Train { seed } => {
                        let node_seed = rng::derive(seed, rng::Stream::Dropout, &[i as u64]);
                        let mask = nnops::dropout_mask::<T>(v.len(), *keep_prob, node_seed);
                        let data = v.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                        Ok((TensorBase::from_parts(v.shape().clone(), data), Cache::Mask(mask)))
                    }
                }
            }
            Op::Flatten => plain(nnops::flatten(x(0)?)?),
            Op::ConcatChannels => {
                let parts = (0..node.inputs.len()).map(x).collect::<Result<Vec<_>>>()?;
                plain(concat_channels(&parts)?)
            }
            Op::Sum => plain(reduce(x(0)?, |v| v)),
            Op::Mean => {
                let v = x(0)?;
                let n = v.len() as f64;
                plain(reduce(v, |s| s / n))
            }
            Op::SumSquares => {
                let s: f64 = x(0)?.data().iter().map(|v| v.as_f64() * v.as_f64()).sum();
                plain(TensorBase::scalar(T::from_f64(s)))
            }
            Op::Scale(c) => {
                let c = T::from_f64(*c);
                plain(x(0)?.map(|v| v * c))
            }
            Op::Bce { eps } => {
                let (p, y) = (x(0)?, x(1)?);
                if p.shape() != y.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "bce prediction {} vs target {}",
                        p.shape(),
                        y.shape()
                    )));
                }
                plain(TensorBase::scalar(T::from_f64(bce_mean(p, y, *eps))))
            }
        }
    }

    /// Gradient of the scalar `loss` with respect to every parameter.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.nodes[loss.0]
            .value
            .as_ref()
            .ok_or(Error::ForwardNotRun(loss.0))?;
        if lv.len() != 1 {
            return Err(Error::LossNotScalar(lv.dims().to_vec()));
        }
        let seed = lv.map(|_| T::one());
        for node in &mut self.nodes {
            node.adjoint = None;
        }
        self.nodes[loss.0].adjoint = Some(seed);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].inputs.is_empty() {
                continue;
            }
            let Some(g) = self.nodes[i].adjoint.take() else {
                continue;
            };
            let grads = self.input_grads(i, &g)?;
            self.nodes[i].adjoint = Some(g);
            for (k, dg) in grads.into_iter().enumerate() {
                let Some(dg) = dg else { continue };
                let target = self.nodes[i].inputs[k];
                let slot = &mut self.nodes[target.0].adjoint;
                match slot {
                    Some(acc) => acc.accumulate(&dg),
                    None => *slot = Some(dg),
                }
            }
        }

        let mut grads = BTreeMap::new();
        for i in 0..self.nodes.len() {
            if !matches!(self.nodes[i].op, Op::Param { .. }) {
                continue;
            }
            let g = match self.nodes[i].adjoint.take() {
                Some(g) => g,
                None => self.nodes[i].value.as_ref().expect("parameter value").zeros_like(),
            };
            grads.insert(NodeId(i), g);
        }
        Ok(Gradients { grads })
    }

    /// Adjoint contributions for each input of node `i` given its adjoint
    /// `g`; `None` where the input needs no gradient.
    fn input_grads(&self, i: usize, g: &TensorBase<T>) -> Result<Vec<Option<TensorBase<T>>>> {
        let node = &self.nodes[i];
        let wants = |k: usize| self.nodes[node.inputs[k].0].requires_grad;
        let x = |k| self.input_value(i, k);
        let out = || node.value.as_ref().ok_or(Error::ForwardNotRun(i));
        let scalar_grad = || g.data()[0];

        let grads = match &node.op {
            Op::Input { .. } | Op::Param { .. } => vec![],
            Op::Add => vec![wants(0).then(|| g.clone()), wants(1).then(|| g.clone())],
            Op::Sub => vec![wants(0).then(|| g.clone()), wants(1).then(|| g.map(|v| -v))],
            Op::Mul => {
                let (a, b) = (x(0)?, x(1)?);
                vec![
                    if wants(0) { Some(g.mul(b)?) } else { None },
                    if wants(1) { Some(g.mul(a)?) } else { None },
                ]
            }
            Op::MatMul => {
                let (a, b) = (x(0)?, x(1)?);
                let (m, k) = (a.dims()[0], a.dims()[1]);
                let n = b.dims()[1];
                let da = wants(0).then(|| {
                    let mut d = vec![T::zero(); m * k];
                    gemm(m, n, k, g.data(), No, b.data(), Yes, T::zero(), &mut d);
                    TensorBase::from_parts(a.shape().clone(), d)
                });
                let db = wants(1).then(|| {
                    let mut d = vec![T::zero(); k * n];
                    gemm(k, m, n, a.data(), Yes, g.data(), No, T::zero(), &mut d);
                    TensorBase::from_parts(b.shape().clone(), d)
                });
                vec![da, db]
            }
            Op::BiasAdd => {
                let bias = x(1)?;
                vec![
                    wants(0).then(|| g.clone()),
                    wants(1).then(|| nnops::bias_add_backward(g, bias.shape())),
                ]
            }
            Op::Relu => vec![Some(nnops::relu_backward(x(0)?, g))],
            Op::Sigmoid => vec![Some(nnops::sigmoid_backward(out()?, g))],
            Op::Conv2d { stride } => {
                let Cache::Cols(cols) = &node.cache else {
                    return Err(Error::ForwardNotRun(i));
                };
                let (dx, dw) =
                    nnops::conv2d_backward(x(0)?.shape(), cols, x(1)?, g, *stride, wants(0));
                vec![dx, wants(1).then_some(dw)]
            }
            Op::MaxPool2d(_) => {
                let Cache::Argmax(arg) = &node.cache else {
                    return Err(Error::ForwardNotRun(i));
                };
                vec![Some(nnops::maxpool_backward(x(0)?.shape(), arg, g))]
            }
            Op::Dropout { .. } => match &node.cache {
                Cache::Mask(mask) => {
                    let data = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    vec![Some(TensorBase::from_parts(g.shape().clone(), data))]
                }
                _ => vec![Some(g.clone())],
            },
            Op::Flatten => vec![Some(g.reshape(x(0)?.dims().to_vec())?)],
            Op::ConcatChannels => {
                let mut start = 0;
                let mut grads = Vec::with_capacity(node.inputs.len());
                for k in 0..node.inputs.len() {
                    let c = x(k)?.dims()[3];
                    grads.push(if wants(k) { Some(slice_channels(g, start, c)?) } else { None });
                    start += c;
                }
                grads
            }
            Op::Sum => {
                let v = x(0)?;
                vec![Some(TensorBase::from_parts(
                    v.shape().clone(),
                    vec![scalar_grad(); v.len()],
                ))]
            }
            Op::Mean => {
                let v = x(0)?;
                let d = scalar_grad() / T::from_f64(v.len() as f64);
                vec![Some(TensorBase::from_parts(v.shape().clone(), vec![d; v.len()]))]
            }
            Op::SumSquares => {
                let two_g = scalar_grad() + scalar_grad();
                vec![Some(x(0)?.map(|v| two_g * v))]
            }
            Op::Scale(c) => {
                let c = T::from_f64(*c);
                vec![Some(g.map(|v| v * c))]
            }
            Op::Bce { eps } => {
                let (p, y) = (x(0)?, x(1)?);
                let n = T::from_f64(p.len() as f64);
                let (lo, hi) = (T::from_f64(*eps), T::from_f64(1.0 - *eps));
                let up = scalar_grad() / n;
                let dp = wants(0).then(|| {
                    let data = p
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&pv, &yv)| {
                            if pv < lo || pv > hi {
                                T::zero()
                            } else {
                                up * (pv - yv) / (pv * (T::one() - pv))
                            }
                        })
                        .collect();
                    TensorBase::from_parts(p.shape().clone(), data)
                });
                let dy = wants(1).then(|| {
                    let data = p
                        .data()
                        .iter()
                        .map(|&pv| {
                            let pc = pv.max(lo).min(hi);
                            up * ((T::one() - pc).ln() - pc.ln())
                        })
                        .collect();
                    TensorBase::from_parts(y.shape().clone(), data)
                });
                vec![dp, dy]
            }
        };
        Ok(grads)
    }
}

fn reduce<T: Scalar>(v: &TensorBase<T>, finish: impl Fn(f64) -> f64) -> TensorBase<T> {
    let s: f64 = v.data().iter().map(|x| x.as_f64()).sum();
    TensorBase::scalar(T::from_f64(finish(s)))
}

/// Mean clipped binary cross-entropy, accumulated in `f64`.
pub(crate) fn bce_mean<T: Scalar>(p: &TensorBase<T>, y: &TensorBase<T>, eps: f64) -> f64 {
    let total: f64 = p
        .data()
        .iter()
        .zip(y.data())
        .map(|(&pv, &yv)| {
            let pc = pv.as_f64().clamp(eps, 1.0 - eps);
            let yv = yv.as_f64();
            -(yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln())
        })
        .sum();
    total / p.len() as f64
}
