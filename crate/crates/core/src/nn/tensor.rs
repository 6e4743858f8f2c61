use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A rank-2 parameter tensor with an optional accumulated gradient.
///
/// Vectors are stored as `1 × n` rows and scalars as `1 × 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    value: Array2<T>,
    grad: Option<Array2<T>>,
    requires_grad: bool,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(value: Array2<T>, requires_grad: bool) -> Self {
        Self {
            value,
            grad: None,
            requires_grad,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<T>, requires_grad: bool) -> Result<Self> {
        let len = values.len();
        let value = Array2::from_shape_vec((rows, cols), values).map_err(|_| {
            Error::shape(
                "tensor",
                format!("{len} values cannot fill a {rows}x{cols} tensor"),
            )
        })?;
        Ok(Self::new(value, requires_grad))
    }

    pub fn zeros(rows: usize, cols: usize, requires_grad: bool) -> Self {
        Self::new(Array2::zeros((rows, cols)), requires_grad)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn value(&self) -> &Array2<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Array2<T> {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&Array2<T>> {
        self.grad.as_ref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
        if !flag {
            self.grad = None;
        }
    }

    /// Adds `delta` into the stored gradient, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &Array2<T>) -> Result<()> {
        if delta.dim() != self.value.dim() {
            return Err(Error::shape(
                "accumulate_grad",
                format!(
                    "gradient {:?} does not match tensor {:?}",
                    delta.dim(),
                    self.value.dim()
                ),
            ));
        }
        match &mut self.grad {
            Some(g) => *g += delta,
            None => self.grad = Some(delta.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn take_grad(&mut self) -> Option<Array2<T>> {
        self.grad.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn values_must_fill_shape() {
        assert!(Tensor::<f64>::from_vec(2, 3, vec![0.0; 5], false).is_err());
        let t = Tensor::<f64>::from_vec(2, 3, vec![0.0; 6], false).unwrap();
        assert_eq!(t.shape(), (2, 3));
    }

    #[test]
    fn gradient_shape_is_checked_and_accumulates() {
        let mut t = Tensor::<f64>::zeros(1, 2, true);
        assert!(t.accumulate_grad(&array![[1.0, 2.0, 3.0]]).is_err());
        t.accumulate_grad(&array![[1.0, 2.0]]).unwrap();
        t.accumulate_grad(&array![[1.0, 2.0]]).unwrap();
        assert_eq!(t.grad().unwrap(), &array![[2.0, 4.0]]);
    }
}
