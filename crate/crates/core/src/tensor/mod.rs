//! Dense row-major tensors and a tape-based reverse-mode autodiff engine.
//!
//! The engine is generic over [`Scalar`], which is implemented for `f32`
//! (the default, used for experiments) and `f64` (used for gradient checks).
//! Differentiable operations live on [`Tape`]; a tensor itself is just a
//! shape and a buffer.

mod gemm;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use gemm::{gemm, View};
pub use tape::{Tape, Var};

/// On-disk and in-memory element type tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element type usable by the engine.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a·b + beta * c` over strided views; see [`gemm`].
    ///
    /// # Safety
    /// Every strided index of `a`, `b` and `c` implied by the shapes and
    /// strides must lie inside its allocation, and `c` must not alias `a`
    /// or `b`.
    #[allow(clippy::too_many_arguments)]
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

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }

    fn write_le(self, out: &mut Vec<u8>);
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("index {index} out of range for table of {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected = check_shape(&shape)?;
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: Vec<usize>, value: T) -> Result<Self> {
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a tensor from `f64` values, converting to `T`.
    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    /// Samples i.i.d. normal entries. Deterministic for a fixed `(shape, seed)`.
    pub fn random_normal(shape: Vec<usize>, mean: f64, stddev: f64, seed: u64) -> Result<Self> {
        let n = check_shape(&shape)?;
        if !(stddev >= 0.0) || !stddev.is_finite() || !mean.is_finite() {
            return Err(TensorError::InvalidArgument(format!(
                "normal(mean={mean}, stddev={stddev})"
            )));
        }
        if stddev == 0.0 {
            return Self::full(shape, T::from_f64_lossy(mean));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(mean, stddev).expect("validated parameters");
        let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect();
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Rows and columns of a 2-D tensor; a 1-D tensor is treated as one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => {
                let c = *other.last().unwrap();
                (self.data.len() / c, c)
            }
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let (_, c) = self.dims2();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise conversion into another scalar type.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_stddev_is_constant() {
        let t = Tensor::<f32>::random_normal(vec![2, 2], 0.7, 0.0, 3).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn random_normal_is_deterministic() {
        let a = Tensor::<f32>::random_normal(vec![5, 7], 0.0, 1.0, 11).unwrap();
        let b = Tensor::<f32>::random_normal(vec![5, 7], 0.0, 1.0, 11).unwrap();
        assert_eq!(a, b);
        let c = Tensor::<f32>::random_normal(vec![5, 7], 0.0, 1.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_normal_moments() {
        let t = Tensor::<f64>::random_normal(vec![100, 100], 0.0, 1.0, 7).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
        // 5 sigma / sqrt(n) bound
        assert!(mean.abs() < 5.0 / n.sqrt());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            Tensor::<f32>::zeros(vec![2, 0]),
            Err(TensorError::InvalidShape(_))
        ));
        assert!(Tensor::<f32>::zeros(vec![]).is_err());
        assert!(Tensor::<f32>::random_normal(vec![0], 0.0, 1.0, 1).is_err());
        assert!(Tensor::<f32>::random_normal(vec![2], 0.0, -1.0, 1).is_err());
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::LengthMismatch { .. })
        ));
    }
}
