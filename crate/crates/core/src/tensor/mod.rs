//! Dense row-major `f64` tensors with a reverse-mode tape.
//!
//! [`Tensor`] is a plain value. Differentiable computations are recorded on a
//! [`Tape`] through [`Var`] handles; [`Tape::backward`] walks the tape once in
//! reverse and accumulates gradients for every node that requires them.
//! [`finite_diff_grad`] is an independent central-difference oracle used to
//! check the tape.

mod finite_diff;
pub(crate) mod kernels;
pub(crate) mod tape;

pub use finite_diff::{finite_diff_coords, finite_diff_grad, grad_rel_error, DEFAULT_FD_STEP};
pub use tape::{Gradients, Tape, Var};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    Storage {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("softmax row {row} is fully masked")]
    FullyMasked { row: usize },
    #[error("mask has {actual} entries, logits have {expected}")]
    MaskLength { expected: usize, actual: usize },
    #[error("index {id} out of range for {rows} rows")]
    IndexOutOfRange { id: usize, rows: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(f64),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense tensor in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::Storage {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::NonScalarLoss {
                shape: self.shape.clone(),
            })
        }
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, d) in index.iter().zip(&self.shape) {
            debug_assert!(i < d);
            flat = flat * d + i;
        }
        self.data[flat]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.last_dim();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("transpose")?;
        let mut out = Tensor::zeros(vec![n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }

    /// Standard matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            &self.data,
            false,
            &other.data,
            false,
            &mut out,
            false,
        );
        Tensor::new(vec![m, n], out)
    }

    /// Softmax over the last axis restricted to positions where `mask` is true.
    /// Masked positions come out as exactly zero.
    pub fn softmax_masked(&self, mask: &[bool]) -> Result<Tensor> {
        let data = kernels::softmax_masked(&self.data, self.last_dim(), mask)?;
        Tensor::new(self.shape.clone(), data)
    }

    pub fn concat_last_axis(parts: &[&Tensor]) -> Result<Tensor> {
        let shapes: Vec<&[usize]> = parts.iter().map(|t| t.shape()).collect();
        let (shape, widths) = kernels::concat_last_shape(&shapes)?;
        let datas: Vec<&[f64]> = parts.iter().map(|t| t.data()).collect();
        Tensor::new(shape, kernels::concat_last(&datas, &widths))
    }

    /// Splits the last axis into consecutive pieces of the given widths.
    pub fn split_last_axis(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        let total: usize = widths.iter().sum();
        if total != self.last_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "split_last_axis",
                left: self.shape.clone(),
                right: widths.to_vec(),
            });
        }
        let mut start = 0;
        widths
            .iter()
            .map(|&w| {
                let data = kernels::slice_last(&self.data, self.last_dim(), start, w);
                start += w;
                let mut shape = self.shape.clone();
                if let Some(last) = shape.last_mut() {
                    *last = w;
                }
                Tensor::new(shape, data)
            })
            .collect()
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            [g, m, n] => Ok((*g, *m, *n)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }
}
