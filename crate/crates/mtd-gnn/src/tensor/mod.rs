//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! Values are recorded on an explicit [`Tape`]; calling [`Tape::backward`]
//! on a scalar loss yields a [`GradientMap`] holding dLoss/dLeaf for every
//! `requires_grad` leaf. A tape and its tensors are confined to one thread;
//! plain [`Tensor`] values are freely shareable between threads.

mod adam;
pub mod fault;
mod tape;

pub use adam::{lr_schedule, rate_for_epoch, AdamState};
pub use tape::{stable_sigmoid, GradientMap, Tape};

use crate::error::{Error, Result};

/// Dense n-dimensional value in row-major order.
///
/// `tape_id` is set once the tensor has been registered on a tape (either as
/// a leaf or as an operation output) and ties it to that tape's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    pub(crate) tape_id: Option<TapeRef>,
}

/// Identifies a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct TapeRef {
    pub tape_uid: u64,
    pub node: usize,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("product of extents != data length {}", data.len()),
            });
        }
        if shape.contains(&0) {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: "zero extent".into(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            tape_id: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            tape_id: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            tape_id: None,
        }
    }

    /// Marks the tensor as a learnable leaf.
    pub fn param(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let mut t = Tensor::new(shape, data)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        // invalidates any tape association
        self.tape_id = None;
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_length_must_agree() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn scalar_has_unit_numel() {
        let s = Tensor::scalar(4.5);
        assert!(s.is_scalar());
        assert_eq!(s.numel(), 1);
        assert_eq!(s.rank(), 0);
    }
}
