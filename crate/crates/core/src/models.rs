//! FRnet-1 (convolutional autoencoder / feature extractor) and FRnet-2
//! (dual-stride inception classifier).
//!
//! A [`NetworkSpec`] is a declarative layer list; every layer names the
//! layers it reads from, so branching topologies such as FRnet-2 are plain
//! data. [`NetworkSpec::infer_shapes`] runs static shape inference and
//! [`Network`] instantiates the spec as an autodiff graph with parameters,
//! a training loss and named taps.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Mode, NodeId};
use crate::data::{pad_and_reshape, Orientation, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::nnops::{same_padding, Activation, Conv2DSpec, PoolSpec};
use crate::optim::{AdamConfig, AdamState};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Name of the FRnet-1 tap that exports the 4096-wide representation.
pub const DEEP_FEATURES: &str = "deep-features";

/// Probability clip applied before the logarithms of the loss.
pub const CLIP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Frnet1,
    Frnet2,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Frnet1 => "frnet1",
            ModelKind::Frnet2 => "frnet2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "frnet1" => Some(ModelKind::Frnet1),
            "frnet2" => Some(ModelKind::Frnet2),
            _ => None,
        }
    }
}

/// Four parallel branches merged on the channel axis:
/// `1x1 -> 3x3`, `1x1 -> 2x2`, `1x1 -> 5x5` and a `1x1` max pool. The stride
/// applies to the spatial convolutions and the pool, so every branch ends at
/// the same extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InceptionSpec {
    pub bottleneck: usize,
    pub out3: usize,
    pub out2: usize,
    pub out5: usize,
    pub stride: usize,
    pub l2_scale: f32,
}

impl InceptionSpec {
    pub fn new(bottleneck: usize, stride: usize, l2_scale: f32) -> Self {
        InceptionSpec {
            bottleneck,
            out3: 64,
            out2: 64,
            out5: 32,
            stride,
            l2_scale,
        }
    }

    pub fn out_channels(&self, in_channels: usize) -> usize {
        self.out3 + self.out2 + self.out5 + in_channels
    }

    /// `(branch tag, filter, outputs)` of the convolutional branches.
    fn conv_branches(&self) -> [(&'static str, usize, usize); 3] {
        [("a", 3, self.out3), ("b", 2, self.out2), ("c", 5, self.out5)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv(Conv2DSpec),
    MaxPool(PoolSpec),
    Inception(InceptionSpec),
    Flatten,
    Dense {
        units: usize,
        activation: Activation,
        l2_scale: f32,
    },
    Dropout {
        keep_prob: f64,
    },
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub id: String,
    /// Layer ids read by this layer; `"input"` is the network input.
    pub inputs: Vec<String>,
    #[serde(flatten)]
    pub kind: LayerKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub kind: ModelKind,
    /// Per-instance input extents, `[height, width, channels]` or `[n]`.
    pub input: Vec<usize>,
    pub layers: Vec<Layer>,
    pub output: String,
    /// Exported activations: tap name -> layer id.
    pub taps: BTreeMap<String, String>,
}

/// Per-instance shapes, in evaluation order. Inception layers contribute
/// entries for each branch (`<id>/a/reduce`, `<id>/a/conv`, ..., `<id>/d/pool`)
/// followed by the merged output under `<id>`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTrace {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl ShapeTrace {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub dims: Vec<usize>,
    /// Glorot fan sum; zero for biases, which are initialised to zero.
    pub fan: usize,
    pub l2_scale: f32,
}

/// Architecture knobs shared by both networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct ModelConfig {
    pub bottleneck: usize,
    /// FRnet-1 hidden widths; the first is the exported representation.
    pub ae_hidden: Vec<usize>,
    pub clf_hidden: Vec<usize>,
    pub keep_prob: f64,
    pub l2_scale: f64,
    pub orientation: Orientation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            bottleneck: 16,
            ae_hidden: vec![4096, 2048],
            clf_hidden: vec![2048, 512],
            keep_prob: 0.5,
            l2_scale: 0.001,
            orientation: Orientation::Tall,
        }
    }
}

impl ModelConfig {
    pub fn feature_width(&self) -> usize {
        self.ae_hidden.first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.bottleneck == 0 {
            return bad("bottleneck must be positive");
        }
        if self.ae_hidden.is_empty() || self.ae_hidden.contains(&0) {
            return bad("ae-hidden needs at least one positive width");
        }
        if self.clf_hidden.contains(&0) {
            return bad("clf-hidden widths must be positive");
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return bad("keep-prob must be in (0, 1]");
        }
        if !(self.l2_scale >= 0.0 && self.l2_scale.is_finite()) {
            return bad("l2-scale must be non-negative");
        }
        let w = self.feature_width();
        if square_side(w).is_none() {
            return Err(Error::Config(format!(
                "representation width {w} is not a perfect square, cannot feed the classifier grid"
            )));
        }
        Ok(())
    }
}

fn square_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n && s > 0).then_some(s)
}

struct SpecBuilder {
    layers: Vec<Layer>,
    l2: f32,
}

impl SpecBuilder {
    fn new(l2: f64) -> Self {
        SpecBuilder {
            layers: Vec::new(),
            l2: l2 as f32,
        }
    }

    fn add(&mut self, id: &str, inputs: &[&str], kind: LayerKind) -> String {
        self.layers.push(Layer {
            id: id.to_string(),
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            kind,
        });
        id.to_string()
    }

    fn conv(&mut self, id: &str, input: &str, filter: usize, out: usize, stride: usize) -> String {
        let spec = Conv2DSpec {
            l2_scale: self.l2,
            ..Conv2DSpec::new(filter, out, stride)
        };
        self.add(id, &[input], LayerKind::Conv(spec))
    }

    fn dense(&mut self, id: &str, input: &str, units: usize, activation: Activation) -> String {
        let l2_scale = self.l2;
        self.add(
            id,
            &[input],
            LayerKind::Dense {
                units,
                activation,
                l2_scale,
            },
        )
    }

    fn head(&mut self, from: &str, hidden: &[usize], keep_prob: f64, out: usize) -> String {
        let mut prev = self.add("flatten", &[from], LayerKind::Flatten);
        for (i, &units) in hidden.iter().enumerate() {
            prev = self.dense(&format!("fc{}", i + 1), &prev, units, Activation::Relu);
        }
        prev = self.add("dropout", &[&prev], LayerKind::Dropout { keep_prob });
        self.dense("output", &prev, out, Activation::Sigmoid)
    }
}

/// FRnet-1: `1x1/32 stride-2 conv -> 2x2 max pool -> inception -> dense
/// stack -> dropout -> sigmoid reconstruction of the unpadded features`.
pub fn build_frnet1(cfg: &ModelConfig) -> Result<NetworkSpec> {
    cfg.validate()?;
    let mut b = SpecBuilder::new(cfg.l2_scale);
    b.conv("conv1", "input", 1, 32, 2);
    b.add("pool1", &["conv1"], LayerKind::MaxPool(PoolSpec { kernel: 2, stride: 2 }));
    let l2 = b.l2;
    b.add(
        "inception",
        &["pool1"],
        LayerKind::Inception(InceptionSpec::new(cfg.bottleneck, 1, l2)),
    );
    let output = b.head("inception", &cfg.ae_hidden, cfg.keep_prob, FEATURE_COUNT);
    let (h, w) = cfg.orientation.grid();
    Ok(NetworkSpec {
        kind: ModelKind::Frnet1,
        input: vec![h, w, 1],
        layers: b.layers,
        output,
        taps: BTreeMap::from([(DEEP_FEATURES.to_string(), "fc1".to_string())]),
    })
}

/// FRnet-2: the FRnet-1 stem on the square representation grid, then a
/// stride-1 and a stride-2 inception module in parallel. The stride-1 output
/// is max-pooled to the stride-2 extent before the channel merge, followed
/// by a final inception module and the dense head with one sigmoid unit.
pub fn build_frnet2(cfg: &ModelConfig) -> Result<NetworkSpec> {
    cfg.validate()?;
    let side = square_side(cfg.feature_width()).expect("validated");
    let mut b = SpecBuilder::new(cfg.l2_scale);
    let l2 = b.l2;
    b.conv("conv1", "input", 1, 32, 2);
    b.add("pool1", &["conv1"], LayerKind::MaxPool(PoolSpec { kernel: 2, stride: 2 }));
    b.add(
        "inception_s1",
        &["pool1"],
        LayerKind::Inception(InceptionSpec::new(cfg.bottleneck, 1, l2)),
    );
    b.add(
        "inception_s2",
        &["pool1"],
        LayerKind::Inception(InceptionSpec::new(cfg.bottleneck, 2, l2)),
    );
    b.add(
        "align_pool",
        &["inception_s1"],
        LayerKind::MaxPool(PoolSpec { kernel: 2, stride: 2 }),
    );
    b.add("merge", &["align_pool", "inception_s2"], LayerKind::Concat);
    b.add(
        "inception_final",
        &["merge"],
        LayerKind::Inception(InceptionSpec::new(cfg.bottleneck, 1, l2)),
    );
    let output = b.head("inception_final", &cfg.clf_hidden, cfg.keep_prob, 1);
    Ok(NetworkSpec {
        kind: ModelKind::Frnet2,
        input: vec![side, side, 1],
        layers: b.layers,
        output,
        taps: BTreeMap::new(),
    })
}

fn spatial(dims: &[usize], what: &str) -> Result<[usize; 3]> {
    match dims {
        &[h, w, c] => Ok([h, w, c]),
        other => Err(Error::ShapeMismatch(format!(
            "{what} expects [h, w, c] input, got {other:?}"
        ))),
    }
}

impl NetworkSpec {
    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    /// Static per-instance shape inference applying the SAME rule layer by
    /// layer.
    pub fn infer_shapes(&self) -> Result<ShapeTrace> {
        let mut known: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        known.insert("input", self.input.clone());
        let mut entries = vec![("input".to_string(), self.input.clone())];
        for layer in &self.layers {
            if known.contains_key(layer.id.as_str()) {
                return Err(Error::ShapeMismatch(format!("duplicate layer id `{}`", layer.id)));
            }
            let ins = layer
                .inputs
                .iter()
                .map(|i| {
                    known.get(i.as_str()).cloned().ok_or_else(|| {
                        Error::ShapeMismatch(format!("layer `{}` reads unknown `{i}`", layer.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let single = || -> Result<&Vec<usize>> {
                match ins.as_slice() {
                    [one] => Ok(one),
                    _ => Err(Error::ShapeMismatch(format!(
                        "layer `{}` takes exactly one input",
                        layer.id
                    ))),
                }
            };
            let out = match &layer.kind {
                LayerKind::Conv(spec) => {
                    let [h, w, _] = spatial(single()?, &layer.id)?;
                    let (oh, _, _) = same_padding(h, spec.filter_h, spec.stride);
                    let (ow, _, _) = same_padding(w, spec.filter_w, spec.stride);
                    vec![oh, ow, spec.out_channels]
                }
                LayerKind::MaxPool(p) => {
                    let [h, w, c] = spatial(single()?, &layer.id)?;
                    vec![same_padding(h, p.kernel, p.stride).0, same_padding(w, p.kernel, p.stride).0, c]
                }
                LayerKind::Inception(spec) => {
                    let [h, w, c] = spatial(single()?, &layer.id)?;
                    let oh = same_padding(h, 1, spec.stride).0;
                    let ow = same_padding(w, 1, spec.stride).0;
                    for (tag, _, out) in spec.conv_branches() {
                        entries.push((format!("{}/{tag}/reduce", layer.id), vec![h, w, spec.bottleneck]));
                        entries.push((format!("{}/{tag}/conv", layer.id), vec![oh, ow, out]));
                    }
                    entries.push((format!("{}/d/pool", layer.id), vec![oh, ow, c]));
                    vec![oh, ow, spec.out_channels(c)]
                }
                LayerKind::Flatten => vec![single()?.iter().product()],
                LayerKind::Dense { units, .. } => match single()?.as_slice() {
                    [_] => vec![*units],
                    other => {
                        return Err(Error::ShapeMismatch(format!(
                            "dense layer `{}` needs a flat input, got {other:?}",
                            layer.id
                        )))
                    }
                },
                LayerKind::Dropout { .. } => single()?.clone(),
                LayerKind::Concat => {
                    let first = spatial(&ins[0], &layer.id)?;
                    let mut c = 0;
                    for s in &ins {
                        let [h, w, pc] = spatial(s, &layer.id)?;
                        if (h, w) != (first[0], first[1]) {
                            return Err(Error::ShapeMismatch(format!(
                                "concat `{}` inputs disagree spatially: {:?}",
                                layer.id, ins
                            )));
                        }
                        c += pc;
                    }
                    vec![first[0], first[1], c]
                }
            };
            entries.push((layer.id.clone(), out.clone()));
            known.insert(layer.id.as_str(), out);
        }
        if !known.contains_key(self.output.as_str()) {
            return Err(Error::ShapeMismatch(format!("output layer `{}` missing", self.output)));
        }
        for (tap, id) in &self.taps {
            if !known.contains_key(id.as_str()) {
                return Err(Error::ShapeMismatch(format!("tap `{tap}` names missing layer `{id}`")));
            }
        }
        Ok(ShapeTrace { entries })
    }

    pub fn output_dims(&self) -> Result<Vec<usize>> {
        let trace = self.infer_shapes()?;
        Ok(trace.get(&self.output).expect("output checked").to_vec())
    }

    /// Parameters in creation order.
    pub fn params(&self) -> Result<Vec<ParamInfo>> {
        let trace = self.infer_shapes()?;
        let input_channels = |layer: &Layer| -> usize {
            let dims = trace.get(&layer.inputs[0]).expect("inferred");
            *dims.last().expect("non-empty shape")
        };
        let mut out = Vec::new();
        // Glorot fans: receptive field times (inputs + outputs).
        let mut weights = |name: String, dims: Vec<usize>, l2_scale: f32| {
            let (&cout, rest) = dims.split_last().expect("non-empty");
            let (&cin, field) = rest.split_last().expect("rank >= 2");
            out.push(ParamInfo {
                name: format!("{name}/w"),
                fan: field.iter().product::<usize>() * (cin + cout),
                dims,
                l2_scale,
            });
            out.push(ParamInfo {
                name: format!("{name}/b"),
                dims: vec![cout],
                fan: 0,
                l2_scale: 0.0,
            });
        };
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::Conv(s) => weights(
                    layer.id.clone(),
                    vec![s.filter_h, s.filter_w, input_channels(layer), s.out_channels],
                    s.l2_scale,
                ),
                LayerKind::Inception(s) => {
                    let cin = input_channels(layer);
                    for (tag, filter, outc) in s.conv_branches() {
                        weights(format!("{}/{tag}/reduce", layer.id), vec![1, 1, cin, s.bottleneck], s.l2_scale);
                        weights(format!("{}/{tag}/conv", layer.id), vec![filter, filter, s.bottleneck, outc], s.l2_scale);
                    }
                }
                LayerKind::Dense { units, l2_scale, .. } => {
                    weights(layer.id.clone(), vec![input_channels(layer), *units], *l2_scale);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.params()?.iter().map(|p| p.dims.iter().product::<usize>()).sum())
    }
}

struct ParamSlot {
    name: String,
    node: NodeId,
}

/// Loss values of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub data_loss: f64,
    pub total_loss: f64,
}

/// An instantiated [`NetworkSpec`]: graph, parameters and loss.
pub struct Network {
    spec: NetworkSpec,
    graph: Graph<f32>,
    input: NodeId,
    target: NodeId,
    output: NodeId,
    data_loss: NodeId,
    loss: NodeId,
    taps: BTreeMap<String, NodeId>,
    params: Vec<ParamSlot>,
}

impl Network {
    /// Glorot-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`) and zero
    /// biases. Each parameter draws from its own stream of `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let infos = spec.params()?;
        let params = infos
            .iter()
            .enumerate()
            .map(|(i, info)| {
                let n: usize = info.dims.iter().product();
                let data = if info.fan == 0 {
                    vec![0.0; n]
                } else {
                    let bound = (6.0 / info.fan as f64).sqrt() as f32;
                    let mut rng = stream_rng(seed, Stream::Init, &[i as u64]);
                    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
                };
                Ok((info.name.clone(), Tensor::from_vec(info.dims.clone(), data)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(spec, params)
    }

    /// Instantiates with the given parameters, which must match the spec's
    /// parameter list in order, name and shape.
    pub fn from_params(spec: NetworkSpec, params: Vec<(String, Tensor)>) -> Result<Self> {
        let infos = spec.params()?;
        if infos.len() != params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "spec has {} parameters, got {}",
                infos.len(),
                params.len()
            )));
        }
        for (info, (name, t)) in infos.iter().zip(&params) {
            if &info.name != name || info.dims != t.dims() {
                return Err(Error::CheckpointMismatch(format!(
                    "expected `{}` {:?}, got `{name}` {:?}",
                    info.name,
                    info.dims,
                    t.dims()
                )));
            }
        }
        Self::build(spec, params)
    }

    fn build(spec: NetworkSpec, params: Vec<(String, Tensor)>) -> Result<Self> {
        let infos = spec.params()?;
        let out_dims = spec.output_dims()?;
        let mut values: BTreeMap<String, Tensor> = params.into_iter().collect();
        let mut g = Graph::new();
        let input = g.input("input", &spec.input);
        let mut nodes: BTreeMap<String, NodeId> = BTreeMap::from([("input".to_string(), input)]);
        let mut slots = Vec::new();
        let mut penalties = Vec::new();

        let mut param = |g: &mut Graph<f32>, name: String| -> NodeId {
            let value = values.remove(&name).expect("parameter list matches spec");
            let node = g.param(name.clone(), value);
            slots.push(ParamSlot { name, node });
            node
        };
        let l2_of = |name: &str| infos.iter().find(|p| p.name == name).map_or(0.0, |p| p.l2_scale);

        for layer in &spec.layers {
            let ins: Vec<NodeId> = layer.inputs.iter().map(|i| nodes[i]).collect();
            let mut conv = |g: &mut Graph<f32>, x: NodeId, name: &str, stride: usize, act: Activation| {
                let w = param(g, format!("{name}/w"));
                let b = param(g, format!("{name}/b"));
                let l2 = l2_of(&format!("{name}/w"));
                if l2 > 0.0 {
                    let sq = g.sum_squares(w);
                    penalties.push(g.scale(sq, l2 as f64));
                }
                let y = g.conv2d(x, w, stride);
                let y = g.bias_add(y, b);
                g.activation(y, act)
            };
            let node = match &layer.kind {
                LayerKind::Conv(s) => conv(&mut g, ins[0], &layer.id, s.stride, s.activation),
                LayerKind::MaxPool(p) => g.maxpool2d(ins[0], *p),
                LayerKind::Inception(s) => {
                    let mut parts = Vec::new();
                    for (tag, _, _) in s.conv_branches() {
                        let reduce = format!("{}/{tag}/reduce", layer.id);
                        let r = conv(&mut g, ins[0], &reduce, 1, Activation::Relu);
                        let spatial = format!("{}/{tag}/conv", layer.id);
                        parts.push(conv(&mut g, r, &spatial, s.stride, Activation::Relu));
                    }
                    parts.push(g.maxpool2d(ins[0], PoolSpec { kernel: 1, stride: s.stride }));
                    g.concat_channels(&parts)
                }
                LayerKind::Flatten => g.flatten(ins[0]),
                LayerKind::Dense { activation, .. } => {
                    let w = param(&mut g, format!("{}/w", layer.id));
                    let b = param(&mut g, format!("{}/b", layer.id));
                    let l2 = l2_of(&format!("{}/w", layer.id));
                    if l2 > 0.0 {
                        let sq = g.sum_squares(w);
                        penalties.push(g.scale(sq, l2 as f64));
                    }
                    let y = g.matmul(ins[0], w);
                    let y = g.bias_add(y, b);
                    g.activation(y, *activation)
                }
                LayerKind::Dropout { keep_prob } => g.dropout(ins[0], *keep_prob)?,
                LayerKind::Concat => g.concat_channels(&ins),
            };
            nodes.insert(layer.id.clone(), node);
        }

        let output = nodes[&spec.output];
        let target = g.input("target", &out_dims);
        let data_loss = g.bce(output, target, CLIP_EPS);
        let loss = penalties.into_iter().fold(data_loss, |acc, p| g.add(acc, p));
        let taps = spec
            .taps
            .iter()
            .map(|(name, id)| (name.clone(), nodes[id]))
            .collect();
        Ok(Network {
            spec,
            graph: g,
            input,
            target,
            output,
            data_loss,
            loss,
            taps,
            params: slots,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|p| {
            (
                p.name.as_str(),
                self.graph.value(p.node).expect("parameter value"),
            )
        })
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|(_, t)| t.len()).sum()
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let node = self.params.iter().find(|p| p.name == name)?.node;
        Some(self.graph.param_value_mut(node))
    }

    pub fn new_optimizer(&self, config: AdamConfig) -> AdamState {
        AdamState::new(config, self.params().map(|(_, t)| t.shape()))
    }

    /// Evaluation-mode output for a batch `[b, ..input]`.
    pub fn predict(&mut self, x: Tensor) -> Result<Tensor> {
        self.graph.forward_to([(self.input, x)], Mode::Eval, &[self.output])?;
        Ok(self.graph.value(self.output).expect("evaluated").clone())
    }

    /// Evaluation-mode activations of a named tap.
    pub fn tap(&mut self, name: &str, x: Tensor) -> Result<Tensor> {
        let node = *self
            .taps
            .get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("network has no tap `{name}`")))?;
        self.graph.forward_to([(self.input, x)], Mode::Eval, &[node])?;
        Ok(self.graph.value(node).expect("evaluated").clone())
    }

    /// Forward and backward for one batch; returns the loss values and the
    /// training-mode output.
    pub fn gradients(&mut self, x: Tensor, y: Tensor, dropout_seed: u64) -> Result<(StepStats, Tensor, Gradients<f32>)> {
        self.graph.forward(
            [(self.input, x), (self.target, y)],
            Mode::Train { seed: dropout_seed },
        )?;
        let stats = StepStats {
            data_loss: self.graph.value(self.data_loss).expect("evaluated").data()[0] as f64,
            total_loss: self.graph.value(self.loss).expect("evaluated").data()[0] as f64,
        };
        let out = self.graph.value(self.output).expect("evaluated").clone();
        let grads = self.graph.backward(self.loss)?;
        Ok((stats, out, grads))
    }

    /// One Adam step on a batch.
    pub fn train_step(
        &mut self,
        x: Tensor,
        y: Tensor,
        dropout_seed: u64,
        adam: &mut AdamState,
    ) -> Result<(StepStats, Tensor)> {
        let (stats, out, grads) = self.gradients(x, y, dropout_seed)?;
        adam.begin_step();
        for (i, slot) in self.params.iter().enumerate() {
            let g = grads.get(slot.node).expect("gradient for every parameter");
            adam.update(i, self.graph.param_value_mut(slot.node), g)?;
        }
        Ok((stats, out))
    }

    /// Evaluation-mode mean binary cross-entropy (no penalty).
    pub fn eval_loss(&mut self, x: Tensor, y: Tensor) -> Result<f64> {
        self.graph
            .forward_to([(self.input, x), (self.target, y)], Mode::Eval, &[self.data_loss])?;
        Ok(self.graph.value(self.data_loss).expect("evaluated").data()[0] as f64)
    }
}

/// Stacks per-instance feature vectors into an FRnet-1 input batch.
pub fn ae_batch(rows: &[&[f32]], orientation: Orientation) -> Result<Tensor> {
    let (h, w) = orientation.grid();
    let mut data = Vec::with_capacity(rows.len() * h * w);
    for r in rows {
        data.extend_from_slice(pad_and_reshape(r, orientation)?.data());
    }
    Tensor::from_vec([rows.len(), h, w, 1], data)
}

/// Reads the deep-feature tap for every row, in row order, `batch_size`
/// instances per forward pass.
pub fn extract_features(
    net: &mut Network,
    rows: &[&[f32]],
    orientation: Orientation,
    batch_size: usize,
) -> Result<Vec<Vec<f32>>> {
    if net.kind() != ModelKind::Frnet1 || !net.taps.contains_key(DEEP_FEATURES) {
        return Err(Error::CheckpointMismatch(
            "feature extraction needs an FRnet-1 network".into(),
        ));
    }
    if net.spec.input[..2] != [orientation.grid().0, orientation.grid().1] {
        return Err(Error::CheckpointMismatch(format!(
            "network input {:?} does not match orientation {}",
            net.spec.input,
            orientation.as_str()
        )));
    }
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        let feats = net.tap(DEEP_FEATURES, ae_batch(chunk, orientation)?)?;
        let width = feats.dims()[1];
        out.extend(feats.data().chunks_exact(width).map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Fraction of elements whose predictions and targets fall on the same
/// side of 0.5.
pub fn reconstruction_accuracy(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "accuracy of {} against {}",
            pred.shape(),
            target.shape()
        )));
    }
    let hits = pred
        .data()
        .iter()
        .zip(target.data())
        .filter(|(&p, &t)| (p >= 0.5) == (t >= 0.5))
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Batch of FRnet-2 inputs `[b, side, side, 1]` from representation rows.
pub fn clf_batch(rows: &[&[f32]], spec: &NetworkSpec) -> Result<Tensor> {
    let side = spec.input[0];
    let mut data = Vec::with_capacity(rows.len() * side * side);
    for r in rows {
        if r.len() != side * side {
            return Err(Error::ShapeMismatch(format!(
                "classifier expects {} features, row has {}",
                side * side,
                r.len()
            )));
        }
        data.extend_from_slice(r);
    }
    Tensor::from_vec([rows.len(), side, side, 1], data)
}
