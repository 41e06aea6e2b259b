//! Dense row-major `f64` tensors and the reverse-mode differentiation record
//! used to train the model.
//!
//! [`Tensor`] values are immutable once built; every kernel allocates a new
//! output. Differentiable computation goes through a [`Graph`], which records
//! each operation on [`Var`] handles and replays the record backwards in
//! [`Graph::backward`].
//!
//! There is no implicit broadcasting. Binary elementwise operations require
//! identical shapes; the only mixed-shape operations are scalar scaling and
//! the explicit [`Tensor::affine`] (matrix product plus a row-vector bias).

mod kernels;
mod record;

pub use record::{Gradients, Graph, Var};

use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} is out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("ln: entry {index} is non-positive ({value})")]
    Domain { index: usize, value: f64 },
    #[error("{op}: non-finite result at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("invalid tensor configuration: {0}")]
    Config(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// A dense n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected = shape.iter().product::<usize>();
        if shape.contains(&0) || expected != data.len() {
            return Err(TensorError::Length {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            shape.iter().all(|&s| s > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Self::new(&[rows.len(), cols], data).expect("non-empty matrix")
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &s)| {
                assert!(i < s, "index {index:?} out of bounds for {:?}", self.shape);
                acc * s + i
            })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_finite(self, op: &'static str) -> Result<Self> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(TensorError::NonFinite { op, index }),
            None => Ok(self),
        }
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(TensorError::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            })
        }
    }

    fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Self {
            shape: self.shape.clone(),
            data,
        }
        .check_finite(op)
    }

    fn map(&self, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
        .check_finite(op)
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Self> {
        self.zip_map(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        self.map("scale", |v| v * factor)
    }

    pub fn exp(&self) -> Result<Self> {
        self.map("exp", f64::exp)
    }

    pub fn ln(&self) -> Result<Self> {
        if let Some(index) = self.data.iter().position(|&v| v <= 0.0 || v.is_nan()) {
            return Err(TensorError::Domain {
                index,
                value: self.data[index],
            });
        }
        self.map("ln", f64::ln)
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Self> {
        self.map("activation", |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k, n) = matmul_dims(self, other, "matmul")?;
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, &self.data, false, &other.data, false, &mut out, false);
        Self::new(&[m, n], out)?.check_finite("matmul")
    }

    /// Batched matrix product: `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Self> {
        let (b, m, k, n) = bmm_dims(self, other)?;
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            kernels::gemm(
                m,
                k,
                n,
                &self.data[i * m * k..(i + 1) * m * k],
                false,
                &other.data[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Self::new(&[b, m, n], out)?.check_finite("bmm")
    }

    /// `x · w + b` with `x: [m, k]`, `w: [k, n]`, `b: [n]` added to every row.
    pub fn affine(&self, weight: &Tensor, bias: &Tensor) -> Result<Self> {
        let (m, _, n) = matmul_dims(self, weight, "affine")?;
        if bias.shape != [n] {
            return Err(TensorError::Shape {
                op: "affine bias",
                lhs: vec![m, n],
                rhs: bias.shape.clone(),
            });
        }
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(&bias.data);
        }
        let k = self.shape[1];
        kernels::gemm(m, k, n, &self.data, false, &weight.data, false, &mut out, true);
        Self::new(&[m, n], out)?.check_finite("affine")
    }

    /// Swaps the last two axes (rank 2 or 3).
    pub fn transpose(&self) -> Result<Self> {
        let (b, r, c) = match *self.shape.as_slice() {
            [r, c] => (1, r, c),
            [b, r, c] => (b, r, c),
            _ => {
                return Err(TensorError::Axis {
                    op: "transpose",
                    axis: self.ndim(),
                    shape: self.shape.clone(),
                })
            }
        };
        let mut out = vec![0.0; self.numel()];
        for bi in 0..b {
            let src = &self.data[bi * r * c..(bi + 1) * r * c];
            let dst = &mut out[bi * r * c..(bi + 1) * r * c];
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = self.shape.clone();
        let nd = shape.len();
        shape.swap(nd - 2, nd - 1);
        Self::new(&shape, out)
    }

    /// Softmax along `axis`, stabilized by subtracting the slice maximum.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let (outer, len, inner) = self.axis_split(axis, "softmax")?;
        let mut out = self.data.clone();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        Self::new(&self.shape, out)?.check_finite("softmax")
    }

    /// Normalizes each group of the last axis to zero mean and unit variance
    /// (`(x - mean) / sqrt(var + eps)`), with no affine parameters.
    pub fn group_normalize(&self, num_groups: usize, eps: f64) -> Result<Self> {
        let d = *self.shape.last().expect("non-empty shape");
        if num_groups == 0 || !d.is_multiple_of(num_groups) {
            return Err(TensorError::Config(format!(
                "feature width {d} is not divisible by {num_groups} groups"
            )));
        }
        let mut out = self.data.clone();
        for chunk in out.chunks_mut(d / num_groups) {
            let (mean, inv_std) = kernels::moments(chunk, eps);
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * inv_std);
        }
        Self::new(&self.shape, out)?.check_finite("group_normalize")
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| TensorError::Config("concat of nothing".into()))?;
        if axis >= first.ndim() {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                shape: first.shape.clone(),
            });
        }
        for p in &parts[1..] {
            let compatible = p.ndim() == first.ndim()
                && p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_len: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut out = Vec::with_capacity(outer * total_len * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                out.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total_len;
        Self::new(&shape, out)
    }

    /// The `index`-th sub-tensor along axis 0.
    pub fn select(&self, index: usize) -> Result<Self> {
        if self.ndim() < 2 || index >= self.shape[0] {
            return Err(TensorError::Axis {
                op: "select",
                axis: index,
                shape: self.shape.clone(),
            });
        }
        let block = self.numel() / self.shape[0];
        Self::new(&self.shape[1..], self.data[index * block..(index + 1) * block].to_vec())
    }

    /// Mean over `axis`, removing it from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Self> {
        let (outer, len, inner) = self.axis_split(axis, "mean_axis")?;
        if self.ndim() < 2 {
            return Err(TensorError::Axis {
                op: "mean_axis",
                axis,
                shape: self.shape.clone(),
            });
        }
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &self.data[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Self::new(&shape, out)
    }

    fn axis_split(&self, axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
        if axis >= self.ndim() {
            return Err(TensorError::Axis {
                op,
                axis,
                shape: self.shape.clone(),
            });
        }
        Ok((
            self.shape[..axis].iter().product(),
            self.shape[axis],
            self.shape[axis + 1..].iter().product(),
        ))
    }
}

fn matmul_dims(a: &Tensor, b: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match (a.shape.as_slice(), b.shape.as_slice()) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((m, k, n)),
        _ => Err(TensorError::Shape {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        }),
    }
}

fn bmm_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match (a.shape.as_slice(), b.shape.as_slice()) {
        (&[b1, m, k], &[b2, k2, n]) if b1 == b2 && k == k2 => Ok((b1, m, k, n)),
        _ => Err(TensorError::Shape {
            op: "bmm",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        }),
    }
}
