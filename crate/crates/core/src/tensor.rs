//! Dense 64-bit tensors.
//!
//! Shapes are `[]` (scalar), `[d]` (vector) or `[r, c]` (matrix) — nothing in
//! the model needs more. Values are row-major. A tensor is immutable after
//! construction except for gradient accumulation.

use crate::error::{Error, Result};
use crate::rng::{fill_normal, SeedRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::contract(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(data, vec![rows, cols])
    }

    /// Gaussian init, mean 0, given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut SeedRng) -> Tensor {
        let mut t = Tensor::zeros(shape);
        fill_normal(rng, &mut t.data, std);
        t
    }

    pub fn with_grad(mut self) -> Tensor {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Logical (rows, cols) view: `[]` → (1,1), `[d]` → (1,d), `[r,c]` → (r,c).
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => unreachable!("tensors are at most 2-d"),
        }
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims();
        &self.data[i * c..(i + 1) * c]
    }

    /// Accumulate into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64], scale: f64) {
        let g = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += scale * di;
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn assert_finite(&self, op: &'static str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric {
                    op,
                    detail: format!("non-finite value {v} at flat index {i}"),
                });
            }
        }
        Ok(())
    }
}

/// Max absolute difference between two equally shaped tensors.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        let err = Tensor::new(vec![1.0, 2.0, 3.0], vec![2, 2]).unwrap_err();
        assert_eq!(err.category(), "contract");
    }

    #[test]
    fn dims_views() {
        assert_eq!(Tensor::scalar(1.0).dims(), (1, 1));
        assert_eq!(Tensor::new(vec![0.0; 3], vec![3]).unwrap().dims(), (1, 3));
        assert_eq!(
            Tensor::new(vec![0.0; 6], vec![2, 3]).unwrap().dims(),
            (2, 3)
        );
    }

    #[test]
    fn grad_accumulates() {
        let mut t = Tensor::zeros(vec![2]);
        t.accumulate_grad(&[1.0, 2.0], 1.0);
        t.accumulate_grad(&[1.0, 2.0], 0.5);
        assert_eq!(t.grad.as_deref(), Some(&[1.5, 3.0][..]));
        t.zero_grad();
        assert!(t.grad.is_none());
    }
}
