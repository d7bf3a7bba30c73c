//! Dense row-major tensors.
//!
//! Activations use the `[batch, height, width, channels]` layout throughout.
//! The working precision is `f32` ([`Tensor`]); the same code is
//! instantiated at `f64` ([`Tensor64`]) for gradient checking.
//!
//! Matrix products go through `matrixmultiply`, which accumulates in the
//! element type (`f32` for [`Tensor`]). It runs single-threaded here, so a
//! given input always produces the same bits.

use std::fmt;
use std::iter::Sum;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Element type of a tensor. Implemented for `f32` and `f64`.
pub trait Scalar: Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static {
    #[allow(clippy::too_many_arguments)]
    /// `c = alpha * a·b + beta * c` over strided row/column views.
    ///
    /// # Safety
    /// Strides and extents must address memory inside the given slices.
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Whether a gemm operand is read as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, where `a` and `b` are row-major
/// buffers that may be read transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: Transpose,
    b: &[T],
    tb: Transpose,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match ta {
        Transpose::No => (k as isize, 1),
        Transpose::Yes => (1, m as isize),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (n as isize, 1),
        Transpose::Yes => (1, k as isize),
    };
    // SAFETY: lengths asserted above match the strided extents.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Ordered list of extents.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.contains(&0) || checked_count(&dims).is_none() {
            return Err(Error::InvalidShape(dims));
        }
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn count(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }

    /// `[batch, dims...]`.
    pub fn batched(batch: usize, dims: &[usize]) -> Result<Shape> {
        let mut all = vec![batch];
        all.extend_from_slice(dims);
        Shape::new(all)
    }
}

fn checked_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(s: Shape) -> Self {
        s.0
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, PartialEq)]
pub struct TensorBase<T> {
    shape: Shape,
    data: Vec<T>,
}

pub type Tensor = TensorBase<f32>;
pub type Tensor64 = TensorBase<f64>;

impl<T: Scalar> TensorBase<T> {
    pub fn from_vec(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.count() != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape} holds {} elements, got {}",
                shape.count(),
                data.len()
            )));
        }
        Ok(TensorBase { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.count()];
        Ok(TensorBase { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        TensorBase {
            shape: Shape(vec![1]),
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros([n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.count(), data.len());
        TensorBase { shape, data }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        TensorBase {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        self.clone().into_reshaped(dims)
    }

    pub fn into_reshaped(self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.count() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} into {}",
                self.shape, shape
            )));
        }
        Ok(TensorBase {
            shape,
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn elementwise(&self, other: &Self, op: BinaryOp) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise {op:?} of {} and {}",
                self.shape, other.shape
            )));
        }
        let f: fn(T, T) -> T = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(TensorBase {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.elementwise(other, BinaryOp::Mul)
    }

    /// In-place `self += other`; shapes must match.
    pub(crate) fn accumulate(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = as_matrix(self)?;
        let (k2, n) = as_matrix(other)?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul of {} and {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            &self.data,
            Transpose::No,
            &other.data,
            Transpose::No,
            T::zero(),
            &mut out,
        );
        Ok(TensorBase {
            shape: Shape(vec![m, n]),
            data: out,
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> TensorBase<U> {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

fn as_matrix<T>(t: &TensorBase<T>) -> Result<(usize, usize)> {
    match t.shape.dims() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::Rank {
            expected: 2,
            got: other.to_vec(),
        }),
    }
}

pub(crate) fn as_rank4<T>(t: &TensorBase<T>) -> Result<[usize; 4]> {
    match t.shape.dims() {
        &[b, h, w, c] => Ok([b, h, w, c]),
        other => Err(Error::Rank {
            expected: 4,
            got: other.to_vec(),
        }),
    }
}

/// Joins rank-4 tensors along the channel axis, preserving part order.
pub fn concat_channels<T: Scalar>(parts: &[&TensorBase<T>]) -> Result<TensorBase<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Empty("concat_channels needs at least one part".into()))?;
    let [b, h, w, _] = as_rank4(first)?;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let [pb, ph, pw, pc] = as_rank4(p)?;
        if (pb, ph, pw) != (b, h, w) {
            return Err(Error::ShapeMismatch(format!(
                "concat_channels: {} does not match leading extents of {}",
                p.shape, first.shape
            )));
        }
        widths.push(pc);
    }
    let total: usize = widths.iter().sum();
    let cells = b * h * w;
    let mut data = Vec::with_capacity(cells * total);
    for cell in 0..cells {
        for (p, &c) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data[cell * c..(cell + 1) * c]);
        }
    }
    Ok(TensorBase {
        shape: Shape(vec![b, h, w, total]),
        data,
    })
}

/// Channels `[start, start + len)` of a rank-4 tensor.
pub fn slice_channels<T: Scalar>(
    t: &TensorBase<T>,
    start: usize,
    len: usize,
) -> Result<TensorBase<T>> {
    let [b, h, w, c] = as_rank4(t)?;
    if len == 0 || start + len > c {
        return Err(Error::ShapeMismatch(format!(
            "channel slice {start}..{} out of range for {}",
            start + len,
            t.shape
        )));
    }
    let cells = b * h * w;
    let mut data = Vec::with_capacity(cells * len);
    for cell in 0..cells {
        let base = cell * c + start;
        data.extend_from_slice(&t.data[base..base + len]);
    }
    Ok(TensorBase {
        shape: Shape(vec![b, h, w, len]),
        data,
    })
}

impl<T: fmt::Debug> fmt::Debug for TensorBase<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}
