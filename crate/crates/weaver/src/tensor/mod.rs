//! Dense tensors and the reverse-mode differentiation graph.
//!
//! `Tensor<F>` is a plain shape + flat buffer value; gradients live on the
//! [`Graph`] that records operations. The scalar type is generic: training
//! runs in `f32`, gradient verification in `f64` (see [`Real`]).
//!
//! Shape violations are programming errors and panic with messages naming
//! both shapes; recoverable failures (I/O, decoding) use `Result` elsewhere
//! in the crate.

mod check;
mod graph;

pub use check::{grad_check, grad_check_many};
pub use graph::{CombineMode, Graph, Var};

use std::fmt::{Debug, Display};

/// Scalar type the engine is generic over. `f32` for training, `f64` for
/// finite-difference verification.
pub trait Real:
    num_traits::Float + num_traits::NumAssignOps + Debug + Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} implies {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); numel],
        }
    }

    pub fn scalar(x: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn from_vec(data: Vec<F>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<F>]) -> Self {
        assert!(!rows.is_empty(), "from_rows needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows: {} vs {}", r.len(), cols);
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![rows.len(), cols],
            data,
        }
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

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Scalar extraction; panics unless the tensor holds exactly one value.
    pub fn item(&self) -> F {
        assert_eq!(
            self.numel(),
            1,
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn at(&self, idx: &[usize]) -> F {
        assert_eq!(idx.len(), self.rank(), "index rank mismatch");
        let mut flat = 0;
        for (d, (&i, &ext)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(i < ext, "index {i} out of bounds for axis {d} (extent {ext})");
            flat = flat * ext + i;
        }
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map_to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.into_f64()).collect()
    }

    /// Precision conversion, e.g. promoting stored `f32` parameters to `f64`
    /// for verification runs.
    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::from_f64(x.into_f64())).collect(),
        }
    }
}

pub(crate) fn shape_product(shape: &[usize]) -> usize {
    shape.iter().product()
}
