//! Dense f64 tensors with a reverse-mode autodiff tape.

pub mod checkpoint;
pub mod conv;
pub mod expand;
pub mod gradcheck;
pub mod interp;
pub mod optim;
pub mod tape;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, BoundParams, Checkpoint, ParamStore};
pub use expand::{ExpansionBlock, ExpansionPlan};
pub use optim::{Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};

/// Contiguous row-major array of f64.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.random_range(lo..hi))
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|v| f(*v)).collect() }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }

    /// `‖a − b‖ / ‖b‖` (or the absolute norm when `b` is zero).
    pub fn rel_diff(&self, reference: &Tensor) -> f64 {
        assert_eq!(self.shape, reference.shape);
        let num = self.data.iter().zip(&reference.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = reference.norm();
        if den > 0.0 {
            num / den
        } else {
            num
        }
    }

    /// Spatial extents of a `[N, C, D, H, W]` tensor.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        dims5(&self.shape)
    }
}

pub(crate) fn dims5(shape: &[usize]) -> Result<[usize; 5]> {
    <[usize; 5]>::try_from(shape).map_err(|_| Error::Shape(format!("expected a 5-D [N,C,D,H,W] tensor, got {shape:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_is_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::new(vec![2, 3], vec![1.0; 6]).unwrap();
        assert_eq!(t.numel(), 6);
        assert!(t.clone().reshape(&[3, 2]).is_ok());
        assert!(t.reshape(&[4]).is_err());
    }

    #[test]
    fn clones_do_not_alias() {
        let a = Tensor::zeros(&[3]);
        let mut b = a.clone();
        b.data_mut()[0] = 1.0;
        assert_eq!(a.data()[0], 0.0);
    }
}
