//! Minimal reverse-mode automatic differentiation over row-major matrices.
//!
//! Every value is a 2-D [`Tensor`]. Batched images are stored one sample per
//! row in height-width-channel order, which lets convolutions lower to a
//! single matrix product over all output pixels of a batch.

mod conv;
mod layers;
mod optim;
mod tape;

pub use conv::ConvGeometry;
pub use layers::{Activation, Bound, ConvLayer, ConvTransposeLayer, Gru, Linear, Mlp, ParamId, ParamSet};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point element type usable on a [`Tape`].
///
/// Implemented for `f32` (training) and `f64` (finite-difference checks).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    /// Name written into checkpoint manifests.
    const DTYPE: &'static str;

    /// `c = a·b (+ c if accumulate)`, where `a` is `m×k` (or `k×m` if `a_t`)
    /// and `b` is `k×n` (or `n×k` if `b_t`). All row-major.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        c: &mut [Self],
        accumulate: bool,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // strides of the logical (rows x cols) operand
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[$t],
                a_t: bool,
                b: &[$t],
                b_t: bool,
                c: &mut [$t],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c[..m * n].iter_mut().for_each(|x| *x = 0.0);
                    }
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: bounds checked above; strides describe dense row-major
                // (or transposed) operands of exactly the asserted sizes.
                unsafe {
                    $gemm(
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
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length does not match shape");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::full(rows, cols, T::zero())
    }

    pub fn full(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor::new(1, 1, vec![value])
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Tensor::new(rows, cols, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// Value of a 1×1 tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on a non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len());
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap_or(f64::NAN)))
                .collect(),
        }
    }

    /// Stacks tensors with equal column counts vertically.
    pub fn vstack(parts: &[&Tensor<T>]) -> Self {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            assert_eq!(p.cols, cols, "vstack column mismatch");
            data.extend_from_slice(&p.data);
        }
        Tensor::new(data.len() / cols.max(1), cols, data)
    }

    pub fn slice_rows(&self, start: usize, count: usize) -> Self {
        Tensor::new(
            count,
            self.cols,
            self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        )
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len().max(1)).unwrap()
    }
}
