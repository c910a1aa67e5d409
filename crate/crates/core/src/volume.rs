//! Dense 3-D arrays with voxel spacing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major `D × H × W` array; index `(z, y, x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    pub dims: [usize; 3],
    /// Millimetres per voxel along (z, y, x).
    pub spacing: [f64; 3],
    pub data: Vec<T>,
}

pub type ImageVolume = Volume<f64>;
pub type LabelVolume = Volume<i32>;

impl<T: Clone> Volume<T> {
    pub fn new(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        Self::with_spacing(dims, [1.0; 3], data)
    }

    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if data.len() != n {
            return Err(Error::Shape(format!("volume {dims:?} needs {n} voxels, got {}", data.len())));
        }
        Ok(Self { dims, spacing, data })
    }

    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Self { dims, spacing: [1.0; 3], data: vec![value; dims.iter().product()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> &T {
        &self.data[self.index(z, y, x)]
    }
}

impl ImageVolume {
    /// As a `[1, 1, D, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.dims;
        Tensor::new(vec![1, 1, d, h, w], self.data.clone()).expect("consistent volume")
    }
}
