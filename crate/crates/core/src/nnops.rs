//! Neural-network operators: SAME-padded convolution and max pooling,
//! dense layers, activations, inverted dropout, bias addition and flatten.
//!
//! Each operator has a forward kernel and a backward kernel; the graph in
//! [`crate::autodiff`] dispatches to them. The free functions at the bottom
//! of the module are the eager (graph-free) entry points.
//!
//! Convolution is cross-correlation (no kernel flip). Weights are laid out
//! `[filter_h, filter_w, in_channels, out_channels]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::tensor::{as_rank4, gemm, Scalar, Shape, TensorBase, Transpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conv2DSpec {
    pub filter_h: usize,
    pub filter_w: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
    pub l2_scale: f32,
}

impl Conv2DSpec {
    pub fn new(filter: usize, out_channels: usize, stride: usize) -> Self {
        Conv2DSpec {
            filter_h: filter,
            filter_w: filter,
            out_channels,
            stride,
            activation: Activation::Relu,
            l2_scale: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
}

/// Output extent and `(before, after)` zero padding for SAME mode.
///
/// The output extent is `ceil(input / stride)`; the total padding is
/// `max((out - 1) * stride + filter - input, 0)`, with the smaller half
/// placed before.
pub fn same_padding(input: usize, filter: usize, stride: usize) -> (usize, usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + filter).saturating_sub(input);
    (out, total / 2, total - total / 2)
}

#[derive(Debug, Clone, Copy)]
struct Window {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn window(h: usize, w: usize, fh: usize, fw: usize, stride: usize) -> Window {
    let (out_h, pad_top, _) = same_padding(h, fh, stride);
    let (out_w, pad_left, _) = same_padding(w, fw, stride);
    Window {
        out_h,
        out_w,
        pad_top,
        pad_left,
    }
}

/// Source coordinate for output position `o` and kernel offset `k`, or
/// `None` when it falls in the padding.
#[inline]
fn source(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
    let pos = (o * stride + k).checked_sub(pad)?;
    (pos < extent).then_some(pos)
}

fn im2col<T: Scalar>(x: &TensorBase<T>, fh: usize, fw: usize, stride: usize) -> Vec<T> {
    let [b, h, w, c] = as_rank4(x).expect("im2col input rank");
    let win = window(h, w, fh, fw, stride);
    let row_len = fh * fw * c;
    let mut cols = vec![T::zero(); b * win.out_h * win.out_w * row_len];
    let xd = x.data();
    let mut row = 0;
    for n in 0..b {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let dst = &mut cols[row * row_len..(row + 1) * row_len];
                for ky in 0..fh {
                    let Some(iy) = source(oy, ky, stride, win.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..fw {
                        let Some(ix) = source(ox, kx, stride, win.pad_left, w) else {
                            continue;
                        };
                        let src = ((n * h + iy) * w + ix) * c;
                        let off = (ky * fw + kx) * c;
                        dst[off..off + c].copy_from_slice(&xd[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(
    cols: &[T],
    dims: [usize; 4],
    fh: usize,
    fw: usize,
    stride: usize,
) -> Vec<T> {
    let [b, h, w, c] = dims;
    let win = window(h, w, fh, fw, stride);
    let row_len = fh * fw * c;
    let mut dx = vec![T::zero(); b * h * w * c];
    let mut row = 0;
    for n in 0..b {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                let src = &cols[row * row_len..(row + 1) * row_len];
                for ky in 0..fh {
                    let Some(iy) = source(oy, ky, stride, win.pad_top, h) else {
                        continue;
                    };
                    for kx in 0..fw {
                        let Some(ix) = source(ox, kx, stride, win.pad_left, w) else {
                            continue;
                        };
                        let dst = ((n * h + iy) * w + ix) * c;
                        let off = (ky * fw + kx) * c;
                        for ch in 0..c {
                            dx[dst + ch] = dx[dst + ch] + src[off + ch];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

fn conv_dims<T: Scalar>(x: &TensorBase<T>, w: &TensorBase<T>) -> Result<([usize; 4], [usize; 4])> {
    let xd = as_rank4(x)?;
    let wd = as_rank4(w)?;
    if wd[2] != xd[3] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d weights {} expect {} input channels, input {} has {}",
            w.shape(),
            wd[2],
            x.shape(),
            xd[3]
        )));
    }
    Ok((xd, wd))
}

/// Convolution without bias or activation. Returns the output and the
/// im2col buffer, which the backward pass reuses.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &TensorBase<T>,
    w: &TensorBase<T>,
    stride: usize,
) -> Result<(TensorBase<T>, Vec<T>)> {
    let ([b, h, wd, _], [fh, fw, cin, oc]) = conv_dims(x, w)?;
    let win = window(h, wd, fh, fw, stride);
    let rows = b * win.out_h * win.out_w;
    let cols = im2col(x, fh, fw, stride);
    let mut out = vec![T::zero(); rows * oc];
    gemm(
        rows,
        fh * fw * cin,
        oc,
        &cols,
        Transpose::No,
        w.data(),
        Transpose::No,
        T::zero(),
        &mut out,
    );
    let shape = Shape::new([b, win.out_h, win.out_w, oc])?;
    Ok((TensorBase::from_parts(shape, out), cols))
}

/// Gradients of [`conv2d_forward`] with respect to input (when requested)
/// and weights.
pub(crate) fn conv2d_backward<T: Scalar>(
    x_shape: &Shape,
    cols: &[T],
    w: &TensorBase<T>,
    dy: &TensorBase<T>,
    stride: usize,
    want_dx: bool,
) -> (Option<TensorBase<T>>, TensorBase<T>) {
    let [fh, fw, cin, oc] = as_rank4(w).expect("conv weights rank");
    let rows = dy.len() / oc;
    let k = fh * fw * cin;
    let mut dw = vec![T::zero(); k * oc];
    gemm(k, rows, oc, cols, Transpose::Yes, dy.data(), Transpose::No, T::zero(), &mut dw);
    let dw = TensorBase::from_parts(w.shape().clone(), dw);
    let dx = want_dx.then(|| {
        let mut dcols = vec![T::zero(); rows * k];
        gemm(rows, oc, k, dy.data(), Transpose::No, w.data(), Transpose::Yes, T::zero(), &mut dcols);
        let dims: [usize; 4] = x_shape.dims().try_into().expect("conv input rank");
        TensorBase::from_parts(x_shape.clone(), col2im(&dcols, dims, fh, fw, stride))
    });
    (dx, dw)
}

/// Max pooling with SAME padding; padded cells never win. Returns the output
/// and, per output cell, the flat input index of the selected element
/// (first maximum in row-major window order).
pub(crate) fn maxpool_forward<T: Scalar>(
    x: &TensorBase<T>,
    spec: PoolSpec,
) -> Result<(TensorBase<T>, Vec<usize>)> {
    let [b, h, w, c] = as_rank4(x)?;
    let win = window(h, w, spec.kernel, spec.kernel, spec.stride);
    let n_out = b * win.out_h * win.out_w * c;
    let mut out = Vec::with_capacity(n_out);
    let mut argmax = Vec::with_capacity(n_out);
    let xd = x.data();
    for n in 0..b {
        for oy in 0..win.out_h {
            for ox in 0..win.out_w {
                for ch in 0..c {
                    let mut best: Option<(T, usize)> = None;
                    for ky in 0..spec.kernel {
                        let Some(iy) = source(oy, ky, spec.stride, win.pad_top, h) else {
                            continue;
                        };
                        for kx in 0..spec.kernel {
                            let Some(ix) = source(ox, kx, spec.stride, win.pad_left, w) else {
                                continue;
                            };
                            let idx = ((n * h + iy) * w + ix) * c + ch;
                            let v = xd[idx];
                            if best.is_none_or(|(bv, _)| v > bv) {
                                best = Some((v, idx));
                            }
                        }
                    }
                    let (v, idx) = best.expect("pooling window lies entirely in padding");
                    out.push(v);
                    argmax.push(idx);
                }
            }
        }
    }
    let shape = Shape::new([b, win.out_h, win.out_w, c])?;
    Ok((TensorBase::from_parts(shape, out), argmax))
}

pub(crate) fn maxpool_backward<T: Scalar>(
    x_shape: &Shape,
    argmax: &[usize],
    dy: &TensorBase<T>,
) -> TensorBase<T> {
    let mut dx = vec![T::zero(); x_shape.count()];
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx[idx] = dx[idx] + g;
    }
    TensorBase::from_parts(x_shape.clone(), dx)
}

/// `x + bias` broadcast over the last axis.
pub(crate) fn bias_add_forward<T: Scalar>(
    x: &TensorBase<T>,
    bias: &TensorBase<T>,
) -> Result<TensorBase<T>> {
    let c = *x.dims().last().expect("tensor rank >= 1");
    if bias.dims() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "bias {} does not match last axis of {}",
            bias.shape(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v = *v + b;
        }
    }
    Ok(out)
}

pub(crate) fn bias_add_backward<T: Scalar>(dy: &TensorBase<T>, bias_shape: &Shape) -> TensorBase<T> {
    let c = bias_shape.count();
    let mut db = vec![T::zero(); c];
    for row in dy.data().chunks_exact(c) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    TensorBase::from_parts(bias_shape.clone(), db)
}

pub(crate) fn relu<T: Scalar>(x: &TensorBase<T>) -> TensorBase<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub(crate) fn relu_backward<T: Scalar>(x: &TensorBase<T>, dy: &TensorBase<T>) -> TensorBase<T> {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    TensorBase::from_parts(x.shape().clone(), data)
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: &TensorBase<T>) -> TensorBase<T> {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid expressed through its output `y`.
pub(crate) fn sigmoid_backward<T: Scalar>(y: &TensorBase<T>, dy: &TensorBase<T>) -> TensorBase<T> {
    let data = y
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    TensorBase::from_parts(y.shape().clone(), data)
}

pub(crate) fn activate<T: Scalar>(x: TensorBase<T>, act: Activation) -> TensorBase<T> {
    match act {
        Activation::Relu => relu(&x),
        Activation::Sigmoid => sigmoid(&x),
        Activation::None => x,
    }
}

pub(crate) fn check_keep_prob(keep: f64) -> Result<()> {
    if keep > 0.0 && keep <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidKeepProb(keep))
    }
}

/// Inverted-dropout multiplier per element: `0` for dropped elements and
/// `1 / keep` for survivors. The uniform draws are taken in `f64` so the mask
/// is the same at every precision.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, keep: f64, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = T::from_f64(1.0 / keep);
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Eager entry points
// ---------------------------------------------------------------------------

/// SAME-padded convolution plus bias, followed by the spec's activation.
pub fn conv2d<T: Scalar>(
    x: &TensorBase<T>,
    spec: &Conv2DSpec,
    weights: &TensorBase<T>,
    bias: &TensorBase<T>,
) -> Result<TensorBase<T>> {
    let [fh, fw, _, oc] = as_rank4(weights)?;
    if (fh, fw, oc) != (spec.filter_h, spec.filter_w, spec.out_channels) {
        return Err(Error::ShapeMismatch(format!(
            "weights {} do not match {}x{} filter with {} outputs",
            weights.shape(),
            spec.filter_h,
            spec.filter_w,
            spec.out_channels
        )));
    }
    let (y, _) = conv2d_forward(x, weights, spec.stride)?;
    Ok(activate(bias_add_forward(&y, bias)?, spec.activation))
}

pub fn maxpool2d<T: Scalar>(x: &TensorBase<T>, spec: &PoolSpec) -> Result<TensorBase<T>> {
    Ok(maxpool_forward(x, *spec)?.0)
}

pub fn dense<T: Scalar>(
    x: &TensorBase<T>,
    weights: &TensorBase<T>,
    bias: &TensorBase<T>,
    activation: Activation,
) -> Result<TensorBase<T>> {
    let y = x.matmul(weights)?;
    Ok(activate(bias_add_forward(&y, bias)?, activation))
}

pub fn dropout<T: Scalar>(
    x: &TensorBase<T>,
    keep_prob: f64,
    seed: u64,
    mode: Mode,
) -> Result<TensorBase<T>> {
    check_keep_prob(keep_prob)?;
    match mode {
        Mode::Eval => Ok(x.clone()),
        Mode::Train { .. } => {
            let mask = dropout_mask::<T>(x.len(), keep_prob, seed);
            let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
            Ok(TensorBase::from_parts(x.shape().clone(), data))
        }
    }
}

pub fn flatten<T: Scalar>(x: &TensorBase<T>) -> Result<TensorBase<T>> {
    let [b, h, w, c] = as_rank4(x)?;
    x.reshape([b, h * w * c])
}

/// `l2_scale · Σ w²`, accumulated in `f64`.
pub fn l2_penalty<T: Scalar>(weights: &TensorBase<T>, l2_scale: f64) -> f64 {
    l2_scale * weights.data().iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>()
}
