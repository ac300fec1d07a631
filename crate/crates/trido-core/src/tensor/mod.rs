//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! The engine covers exactly the operations the networks need. Values are
//! row-major flat buffers behind `Arc`, so cloning a tensor is cheap and
//! parameter data can be shared across worker threads. Differentiation is
//! tape-based: ops invoked through a [`Tape`] record backward closures, and
//! [`Tape::backward`] replays them in reverse to accumulate gradients.

mod elem;
pub mod fft;
pub mod gradcheck;
mod nn;
mod ops;
pub mod optim;
mod tape;

pub use elem::Elem;
pub use fft::ComplexTensor;
pub use tape::{Grads, Tape};

use std::sync::Arc;

/// Dense row-major tensor. `node` ties the value to a tape when gradients
/// are being tracked; plain data tensors have `node == None` and are Send.
#[derive(Clone)]
pub struct Tensor<E: Elem> {
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    node: Option<usize>,
}

impl<E: Elem> Tensor<E> {
    pub fn new(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            numel(shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value in tensor of shape {shape:?}"
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape, vec![E::zero(); numel(shape)])
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::new(shape, vec![E::one(); numel(shape)])
    }

    pub fn full(shape: &[usize], v: E) -> Self {
        Tensor::new(shape, vec![v; numel(shape)])
    }

    pub fn scalar(v: E) -> Self {
        Tensor::new(&[], vec![v])
    }

    pub fn from_f64_slice(shape: &[usize], vals: &[f64]) -> Self {
        Tensor::new(shape, vals.iter().map(|&v| E::elem(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.data)
    }

    /// Whether this tensor participates in gradient tracking.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<usize> {
        self.node
    }

    pub(crate) fn tracked(shape: Vec<usize>, data: Arc<Vec<E>>, node: Option<usize>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data, node }
    }

    /// Detached view of the same buffer (drops tape association).
    pub fn detach(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Elementwise max with zero, detached. Used at inference only.
    pub fn clamp_min_zero(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&v| if v < E::zero() { E::zero() } else { v })
            .collect();
        Tensor::new(&self.shape, data)
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Cast between element precisions (f32 <-> f64), detached.
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        Tensor::new(
            &self.shape,
            self.data.iter().map(|v| F::elem(v.as_f64())).collect(),
        )
    }
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor{:?}(tracked={}, n={})",
            self.shape,
            self.node.is_some(),
            self.data.len()
        )
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}
