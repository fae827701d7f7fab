//! Dense row-major f64 tensors.
//!
//! Deliberately minimal: a flat `Vec<f64>` plus a shape. Anything clever
//! (taping, adjoints) lives in [`crate::graph`]; this module only knows how
//! to hold values, validate shapes, and multiply matrices.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::rng::{normal, Rng};

/// Shape / structural errors surfaced by tensor and graph operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TensorError {
    /// Two operand shapes that must agree do not.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An axis argument is out of range for the operand's rank.
    BadAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    /// Constructor data length does not match the shape product.
    DataLength { expected: usize, got: usize },
    /// Slice bounds fall outside the axis.
    BadSlice {
        axis_len: usize,
        start: usize,
        len: usize,
    },
    /// An operation that requires a scalar received something else.
    NotScalar {
        op: &'static str,
        shape: Vec<usize>,
    },
    /// An operation that requires at least one element received none.
    Empty { op: &'static str },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} vs {rhs:?}")
            }
            TensorError::BadAxis { op, axis, rank } => {
                write!(f, "{op}: axis {axis} out of range for rank {rank}")
            }
            TensorError::DataLength { expected, got } => {
                write!(f, "data length {got} does not match shape product {expected}")
            }
            TensorError::BadSlice { axis_len, start, len } => {
                write!(f, "slice [{start}, {start}+{len}) exceeds axis length {axis_len}")
            }
            TensorError::NotScalar { op, shape } => {
                write!(f, "{op}: expected a scalar, got shape {shape:?}")
            }
            TensorError::Empty { op } => write!(f, "{op}: empty input"),
        }
    }
}

impl core::error::Error for TensorError {}

/// Dense row-major tensor of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Marks leaves the autodiff graph must produce gradients for.
    pub requires_grad: bool,
}

impl Tensor {
    /// Build a tensor, checking that `data.len()` matches the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                expected,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
        }
    }

    /// Rank-0 tensor holding a single value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
            requires_grad: false,
        }
    }

    /// Fill from a function of the flat (row-major) index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
            requires_grad: false,
        }
    }

    /// I.i.d. Gaussian entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| std * normal(rng)).collect(),
            requires_grad: false,
        }
    }

    /// Builder-style toggle used when creating parameters.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NotScalar {
                op: "item",
                shape: self.shape.clone(),
            })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(crate::fmath::abs(*v)))
    }

    /// Human-readable shape, for error messages.
    pub fn shape_string(&self) -> String {
        format!("{:?}", self.shape)
    }
}

// ── Matrix multiplication ────────────────────────────────────────────────

/// Resolved dimensions for a (possibly batched) matmul.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatmulDims {
    /// Number of leading-batch matrix products.
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    /// Whether each operand carries the batch dimensions (a rank-2 operand
    /// against a batched one is broadcast across the batch).
    pub a_batched: bool,
    pub b_batched: bool,
    pub out_shape: Vec<usize>,
}

/// Work out batched matmul dimensions for `a @ b`.
///
/// Both operands need rank >= 2. Leading (batch) dimensions must either
/// match exactly or be absent on one side, in which case that operand is
/// reused for every batch element. Anything fancier is out of scope.
pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatmulDims, TensorError> {
    let err = || TensorError::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, ka) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if ka != kb {
        return Err(err());
    }
    let ba = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let (batch_dims, a_batched, b_batched): (&[usize], bool, bool) = if ba == bb {
        (ba, !ba.is_empty(), !bb.is_empty())
    } else if ba.is_empty() {
        (bb, false, true)
    } else if bb.is_empty() {
        (ba, true, false)
    } else {
        return Err(err());
    };
    let batch: usize = batch_dims.iter().product();
    let mut out_shape = batch_dims.to_vec();
    out_shape.push(m);
    out_shape.push(n);
    Ok(MatmulDims {
        batch,
        m,
        k: ka,
        n,
        a_batched,
        b_batched,
        out_shape,
    })
}

/// `out (+)= op(a) · op(b)` on row-major buffers, where `op` optionally
/// transposes via stride swapping (no copies). `a` is `m×k` after `op`,
/// `b` is `k×n` after `op`, `out` is `m×n`. With `accumulate == false` the
/// output is overwritten.
#[allow(clippy::too_many_arguments)] // mirrors the BLAS dgemm argument list
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    out: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // Stored transposed means the logical (row, col) strides swap.
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Plain (batched) matmul on value tensors; the graph's forward pass and a
/// few inference paths use this directly.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let dims = matmul_dims(a.shape(), b.shape())?;
    let mut out = Tensor::zeros(&dims.out_shape);
    let (m, k, n) = (dims.m, dims.k, dims.n);
    for i in 0..dims.batch.max(1) {
        let ao = if dims.a_batched { i * m * k } else { 0 };
        let bo = if dims.b_batched { i * k * n } else { 0 };
        gemm(
            m,
            k,
            n,
            &a.data()[ao..ao + m * k],
            false,
            &b.data()[bo..bo + k * n],
            false,
            &mut out.data_mut()[i * m * n..(i + 1) * m * n],
            false,
        );
    }
    Ok(out)
}
