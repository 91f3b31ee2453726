//! Dense row-major `f64` tensors and the define-by-run autodiff tape.

mod gradcheck;
mod params;
mod rng;
mod tape;

pub use gradcheck::{
    check_gradients, finite_diff_coords, finite_diff_grad, relative_error, GradCheckReport,
    DEFAULT_STEP,
};
pub use params::{Binder, ParamId, ParamStore};
pub use rng::{derive_seed, mix, SplitMix64};
pub use tape::{BinaryKind, Gradients, OpTag, ReduceKind, ScanInputs, Tape, UnaryKind, Var};

use crate::error::{Result, SumError};

/// How [`Tensor::create`] fills a new tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fill {
    Zeros,
    Constant(f64),
    /// Uniform in `[lo, hi)` drawn from [`SplitMix64`] seeded with `seed`.
    SeededUniform { lo: f64, hi: f64, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(SumError::shape("rank-0 shape"));
    }
    if let Some(d) = shape.iter().find(|&&d| d == 0) {
        return Err(SumError::shape(format!("dimension {d} in {shape:?}")));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(SumError::shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn create(shape: &[usize], fill: Fill) -> Result<Self> {
        let n = check_shape(shape)?;
        let data = match fill {
            Fill::Zeros => vec![0.0; n],
            Fill::Constant(c) => vec![c; n],
            Fill::SeededUniform { lo, hi, seed } => {
                let mut rng = SplitMix64::new(seed);
                (0..n).map(|_| rng.uniform(lo, hi)).collect()
            }
        };
        Self::new(shape, data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::create(shape, Fill::Zeros)
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, on: bool) -> Self {
        self.requires_grad = on;
        self
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

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f64>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(SumError::shape(format!(
                    "gradient of length {} for tensor of {} values",
                    g.len(),
                    self.data.len()
                )));
            }
        }
        self.grad = grad;
        Ok(())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(SumError::shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Bitwise equality of shape and values.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Glorot-style uniform init in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, seed: u64) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::create(
        shape,
        Fill::SeededUniform {
            lo: -limit,
            hi: limit,
            seed,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_fills() {
        let z = Tensor::create(&[2, 2], Fill::Zeros).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);
        let c = Tensor::create(&[3], Fill::Constant(1.5)).unwrap();
        assert_eq!(c.data(), &[1.5, 1.5, 1.5]);
    }

    #[test]
    fn seeded_uniform_is_deterministic() {
        let f = Fill::SeededUniform {
            lo: 0.0,
            hi: 1.0,
            seed: 7,
        };
        let a = Tensor::create(&[4], f).unwrap();
        let b = Tensor::create(&[4], f).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.data().iter().all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(
            Tensor::create(&[2, 0], Fill::Zeros),
            Err(SumError::InvalidShape(_))
        ));
        assert!(Tensor::new(&[2], vec![1.0]).is_err());
    }

    #[test]
    fn grad_length_checked() {
        let mut t = Tensor::zeros(&[3]).unwrap();
        assert!(t.set_grad(Some(vec![0.0; 2])).is_err());
        t.set_grad(Some(vec![1.0; 3])).unwrap();
        assert_eq!(t.grad(), Some(&[1.0, 1.0, 1.0][..]));
    }
}
