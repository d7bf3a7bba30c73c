//! Central finite differences against reverse-mode gradients in `f64`.
//!
//! The checked scalar is `sum(out * R)` with a random projection `R`, so
//! every output element contributes with a different weight. Entries whose
//! probes move a ReLU input, a pooling argmax or a clipped probability across
//! a kink are skipped and counted.

use frnet::autodiff::{Graph, Mode, NodeId, Op};
use frnet::nnops::same_padding;
use frnet::tensor::{Tensor64, TensorBase};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
/// Distance from zero for generated ReLU inputs.
pub const KINK_MARGIN: f64 = 1e-2;
/// Largest share of entries that may be skipped for crossing a kink.
pub const MAX_SKIPPED: f64 = 0.1;
/// Denominator floor so exactly-zero gradients compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;
pub const INSTANCES: usize = 20;

pub struct Instance {
    pub graph: Graph<f64>,
    pub out: NodeId,
    pub mode: Mode,
}

#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub instances: usize,
    /// Entries whose probes crossed a kink.
    pub skipped: usize,
    pub entries: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl Summary {
    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES
            && self.max_rel < REL_TOL
            && (self.skipped as f64) <= MAX_SKIPPED * (self.entries + self.skipped) as f64
    }
}

pub fn uniform(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor64 {
    let n: usize = dims.iter().product();
    Tensor64::from_vec(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero by `margin`, random sign.
pub fn away_from_zero(rng: &mut ChaCha8Rng, dims: &[usize], margin: f64) -> Tensor64 {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.random_range(margin..1.0);
            if rng.random::<bool>() { v } else { -v }
        })
        .collect();
    Tensor64::from_vec(dims.to_vec(), data).unwrap()
}

/// A shuffled ladder of values spaced `gap` apart, plus a random offset.
pub fn distinct(rng: &mut ChaCha8Rng, dims: &[usize], gap: f64) -> Tensor64 {
    let n: usize = dims.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.random_range(0..=i));
    }
    let offset = rng.random_range(-1.0..1.0);
    let data = idx.iter().map(|&k| offset + gap * (k as f64 - n as f64 / 2.0)).collect();
    Tensor64::from_vec(dims.to_vec(), data).unwrap()
}

/// Which side of every kink the current values sit on: ReLU signs, pooling
/// argmaxes and BCE clipping. Finite differences are only taken where this
/// pattern is the same at all probe points.
fn pattern(g: &Graph<f64>) -> Vec<usize> {
    let mut out = Vec::new();
    for id in g.node_ids() {
        let inputs = g.inputs(id);
        match g.op(id) {
            Op::Relu => {
                out.extend(g.value(inputs[0]).unwrap().data().iter().map(|&v| (v > 0.0) as usize));
            }
            Op::MaxPool2d(spec) => {
                let x = g.value(inputs[0]).unwrap();
                let d = x.dims();
                let (b, h, w, c) = (d[0], d[1], d[2], d[3]);
                let (oh, pt, _) = same_padding(h, spec.kernel, spec.stride);
                let (ow, pl, _) = same_padding(w, spec.kernel, spec.stride);
                for n in 0..b {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            for ch in 0..c {
                                let mut best = (f64::NEG_INFINITY, usize::MAX);
                                for ky in 0..spec.kernel {
                                    for kx in 0..spec.kernel {
                                        let iy = (oy * spec.stride + ky) as isize - pt as isize;
                                        let ix = (ox * spec.stride + kx) as isize - pl as isize;
                                        if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                            continue;
                                        }
                                        let k = ((n * h + iy as usize) * w + ix as usize) * c + ch;
                                        let v = x.data()[k];
                                        // Dead ReLU outputs tie at zero but stay dead.
                                        if v > best.0 || (v == best.0 && v == 0.0) {
                                            best = (v, if v == 0.0 { usize::MAX } else { k });
                                        }
                                    }
                                }
                                out.push(best.1);
                            }
                        }
                    }
                }
            }
            Op::Bce { eps } => {
                out.extend(g.value(inputs[0]).unwrap().data().iter().map(|&v| (v < *eps || v > 1.0 - eps) as usize));
            }
            _ => {}
        }
    }
    out
}

fn loss_value(g: &mut Graph<f64>, loss: NodeId, mode: Mode) -> f64 {
    g.forward(Vec::<(NodeId, Tensor64)>::new(), mode).unwrap();
    g.value(loss).unwrap().data()[0]
}

/// Compares every parameter entry of one instance.
pub fn check_instance(mut inst: Instance, rng: &mut ChaCha8Rng) -> Summary {
    let mode = inst.mode;
    let g = &mut inst.graph;
    g.forward(Vec::<(NodeId, Tensor64)>::new(), mode).unwrap();
    let params: Vec<NodeId> = g.params().map(|(id, _)| id).collect();
    let out_dims = g.value(inst.out).unwrap().dims().to_vec();
    let r = g.param("projection", uniform(rng, &out_dims, -1.0, 1.0));
    let prod = g.mul(inst.out, r);
    let loss = g.sum(prod);
    loss_value(g, loss, mode);
    let base = pattern(g);
    let grads = g.backward(loss).unwrap();

    let mut s = Summary {
        instances: 1,
        ..Summary::default()
    };
    for &p in &params {
        let analytic: TensorBase<f64> = grads.get(p).unwrap().clone();
        for j in 0..analytic.len() {
            let v = g.value(p).unwrap().data()[j];
            let mut probe = |offset: f64, same: &mut bool| {
                g.param_value_mut(p).data_mut()[j] = v + offset;
                let f = loss_value(g, loss, mode);
                *same &= pattern(g) == base;
                f
            };
            let mut same = true;
            let mut diff = |h: f64| (probe(h, &mut same) - probe(-h, &mut same)) / (2.0 * h);
            // Richardson extrapolation cancels the h^2 truncation term.
            let (coarse, fine) = (diff(STEP), diff(STEP / 2.0));
            g.param_value_mut(p).data_mut()[j] = v;
            if !same {
                s.skipped += 1;
                continue;
            }
            let numeric = (4.0 * fine - coarse) / 3.0;
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            s.entries += 1;
            if rel > s.max_rel {
                s.max_rel = rel;
                s.worst = format!("param {} entry {j}: analytic {a:e}, numeric {numeric:e}", p.index());
            }
        }
    }
    s
}

/// Draws instances from `build` until `INSTANCES` were accepted.
pub fn run(seed: u64, mut build: impl FnMut(&mut ChaCha8Rng) -> Instance) -> Summary {
    let mut rng = super::rng(seed);
    let mut total = Summary::default();
    for _ in 0..INSTANCES {
        let s = check_instance(build(&mut rng), &mut rng);
        total.instances += 1;
        total.entries += s.entries;
        total.skipped += s.skipped;
        if s.max_rel > total.max_rel {
            total.max_rel = s.max_rel;
            total.worst = s.worst;
        }
    }
    total
}

fn eval(graph: Graph<f64>, out: NodeId) -> Instance {
    Instance {
        graph,
        out,
        mode: Mode::Eval,
    }
}

fn dims4(rng: &mut ChaCha8Rng, max_hw: usize, max_c: usize) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=max_hw),
        rng.random_range(1..=max_hw),
        rng.random_range(1..=max_c),
    ]
}

pub type Generator = Box<dyn FnMut(&mut ChaCha8Rng) -> Instance>;

/// Every operator with its instance generator.
pub fn operators() -> Vec<(&'static str, Generator)> {
    vec![
        ("add", Box::new(|r| binary(r, |g, a, b| g.add(a, b)))),
        ("sub", Box::new(|r| binary(r, |g, a, b| g.sub(a, b)))),
        ("mul", Box::new(|r| binary(r, |g, a, b| g.mul(a, b)))),
        ("matmul", Box::new(|r| {
            let (m, k, n) = (r.random_range(1..6), r.random_range(1..6), r.random_range(1..6));
            let mut g = Graph::new();
            let a = g.param("a", uniform(r, &[m, k], -1.0, 1.0));
            let b = g.param("b", uniform(r, &[k, n], -1.0, 1.0));
            let out = g.matmul(a, b);
            eval(g, out)
        })),
        ("bias_add", Box::new(|r| {
            let d = dims4(r, 4, 4);
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &d, -1.0, 1.0));
            let b = g.param("b", uniform(r, &[d[3]], -1.0, 1.0));
            let out = g.bias_add(x, b);
            eval(g, out)
        })),
        ("relu", Box::new(|r| {
            let d = dims4(r, 4, 3);
            let mut g = Graph::new();
            let x = g.param("x", away_from_zero(r, &d, 2.0 * KINK_MARGIN));
            let out = g.relu(x);
            eval(g, out)
        })),
        ("sigmoid", Box::new(|r| {
            let d = dims4(r, 4, 3);
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &d, -4.0, 4.0));
            let out = g.sigmoid(x);
            eval(g, out)
        })),
        ("conv2d", Box::new(|r| {
            let d = dims4(r, 7, 3);
            let f = [1, 2, 3, 5][r.random_range(0..4)];
            let stride = r.random_range(1..=3);
            let cout = r.random_range(1..=3);
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &d, -1.0, 1.0));
            let w = g.param("w", uniform(r, &[f, f, d[3], cout], -1.0, 1.0));
            let out = g.conv2d(x, w, stride);
            eval(g, out)
        })),
        ("maxpool2d", Box::new(|r| {
            let d = dims4(r, 7, 3);
            let spec = frnet::nnops::PoolSpec {
                kernel: r.random_range(1..=3),
                stride: r.random_range(1..=2),
            };
            let mut g = Graph::new();
            let x = g.param("x", distinct(r, &d, 0.05));
            let out = g.maxpool2d(x, spec);
            eval(g, out)
        })),
        ("dropout", Box::new(|r| {
            let d = dims4(r, 4, 3);
            let keep = [0.5, 0.8, 1.0][r.random_range(0..3)];
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &d, -1.0, 1.0));
            let out = g.dropout(x, keep).unwrap();
            Instance {
                graph: g,
                out,
                mode: Mode::Train { seed: r.random() },
            }
        })),
        ("flatten", Box::new(|r| {
            let d = dims4(r, 4, 3);
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &d, -1.0, 1.0));
            let out = g.flatten(x);
            eval(g, out)
        })),
        ("concat_channels", Box::new(|r| {
            let d = dims4(r, 4, 3);
            let mut g = Graph::new();
            let parts: Vec<NodeId> = (0..r.random_range(1..=3))
                .map(|i| {
                    let c = r.random_range(1..=3);
                    g.param(format!("x{i}"), uniform(r, &[d[0], d[1], d[2], c], -1.0, 1.0))
                })
                .collect();
            let out = g.concat_channels(&parts);
            eval(g, out)
        })),
        ("sum", Box::new(|r| unary(r, |g, x| g.sum(x)))),
        ("mean", Box::new(|r| unary(r, |g, x| g.mean(x)))),
        ("sum_squares", Box::new(|r| unary(r, |g, x| g.sum_squares(x)))),
        ("scale", Box::new(|r| {
            let c = r.random_range(-2.0..2.0);
            unary(r, move |g, x| g.scale(x, c))
        })),
        ("bce", Box::new(|r| {
            let n = r.random_range(1..8);
            let mut g = Graph::new();
            let p = g.param("p", uniform(r, &[n, 1], 0.05, 0.95));
            let y = g.param("y", uniform(r, &[n, 1], 0.0, 1.0));
            let out = g.bce(p, y, 1e-7);
            eval(g, out)
        })),
        ("dense", Box::new(|r| {
            let (b, n, m) = (r.random_range(1..4), r.random_range(1..6), r.random_range(1..6));
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &[b, n], -1.0, 1.0));
            let w = g.param("w", uniform(r, &[n, m], -1.0, 1.0));
            let bias = g.param("b", uniform(r, &[m], -0.5, 0.5));
            let y = g.matmul(x, w);
            let y = g.bias_add(y, bias);
            let out = if r.random() { g.relu(y) } else { g.sigmoid(y) };
            eval(g, out)
        })),
        ("inception", Box::new(|r| {
            let d = [1, r.random_range(2..5), r.random_range(2..5), 2];
            let stride = r.random_range(1..=2);
            let mut g = Graph::new();
            let x = g.param("x", uniform(r, &d, -1.0, 1.0));
            let out = inception(&mut g, r, x, 2, stride);
            eval(g, out)
        })),
        ("network", Box::new(network)),
    ]
}

fn unary(r: &mut ChaCha8Rng, op: impl Fn(&mut Graph<f64>, NodeId) -> NodeId) -> Instance {
    let d = dims4(r, 3, 3);
    let mut g = Graph::new();
    let x = g.param("x", uniform(r, &d, -1.0, 1.0));
    let out = op(&mut g, x);
    eval(g, out)
}

fn binary(r: &mut ChaCha8Rng, op: impl Fn(&mut Graph<f64>, NodeId, NodeId) -> NodeId) -> Instance {
    let d = dims4(r, 3, 3);
    let mut g = Graph::new();
    let a = g.param("a", uniform(r, &d, -1.0, 1.0));
    let b = g.param("b", uniform(r, &d, -1.0, 1.0));
    let out = op(&mut g, a, b);
    eval(g, out)
}

fn conv_relu(g: &mut Graph<f64>, r: &mut ChaCha8Rng, x: NodeId, cin: usize, f: usize, cout: usize, stride: usize) -> NodeId {
    let n = g.len();
    let w = g.param(format!("w{n}"), uniform(r, &[f, f, cin, cout], -1.0, 1.0));
    let b = g.param(format!("b{n}"), uniform(r, &[cout], -0.2, 0.2));
    let y = g.conv2d(x, w, stride);
    let y = g.bias_add(y, b);
    g.relu(y)
}

/// Four-branch block with tiny widths.
fn inception(g: &mut Graph<f64>, r: &mut ChaCha8Rng, x: NodeId, cin: usize, stride: usize) -> NodeId {
    let mut parts = Vec::new();
    for (f, cout) in [(3, 2), (2, 2), (5, 1)] {
        let reduced = conv_relu(g, r, x, cin, 1, 2, 1);
        parts.push(conv_relu(g, r, reduced, 2, f, cout, stride));
    }
    parts.push(g.maxpool2d(x, frnet::nnops::PoolSpec { kernel: 1, stride }));
    g.concat_channels(&parts)
}

/// A miniature FRnet-2 with dropout and the cross-entropy plus weight
/// penalty objective.
fn network(r: &mut ChaCha8Rng) -> Instance {
    let mut g = Graph::new();
    let b = 2;
    let x = g.param("x", uniform(r, &[b, 8, 8, 1], 0.0, 1.0));
    let c1 = conv_relu(&mut g, r, x, 1, 1, 2, 2);
    let p1 = g.maxpool2d(c1, frnet::nnops::PoolSpec { kernel: 2, stride: 2 });
    let s1 = inception(&mut g, r, p1, 2, 1);
    let s2 = inception(&mut g, r, p1, 2, 2);
    let aligned = g.maxpool2d(s1, frnet::nnops::PoolSpec { kernel: 2, stride: 2 });
    let merged = g.concat_channels(&[aligned, s2]);
    let flat = g.flatten(merged);
    let width = 2 * (2 + 2 + 1 + 2);
    let w = g.param("fc/w", uniform(r, &[width, 3], -0.5, 0.5));
    let bias = g.param("fc/b", uniform(r, &[3], -0.1, 0.1));
    let h = g.matmul(flat, w);
    let h = g.bias_add(h, bias);
    let h = g.relu(h);
    let h = g.dropout(h, 0.5).unwrap();
    let w2 = g.param("out/w", uniform(r, &[3, 1], -1.0, 1.0));
    let b2 = g.param("out/b", uniform(r, &[1], -0.1, 0.1));
    let o = g.matmul(h, w2);
    let o = g.bias_add(o, b2);
    let p = g.sigmoid(o);
    let y = g.param("y", Tensor64::from_vec([b, 1], (0..b).map(|_| r.random_range(0..2) as f64).collect()).unwrap());
    let data = g.bce(p, y, 1e-7);
    let sq = g.sum_squares(w);
    let pen = g.scale(sq, 0.001);
    let out = g.add(data, pen);
    Instance {
        graph: g,
        out,
        mode: Mode::Train { seed: r.random() },
    }
}
