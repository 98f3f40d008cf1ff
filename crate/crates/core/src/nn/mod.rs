//! Minimal CHW tensor and differentiable layers with explicit backward passes.
//!
//! Every layer exposes `forward` returning its output together with a cache,
//! and `backward` consuming that cache, accumulating parameter gradients into
//! a same-shaped gradient struct and returning the input gradient.

mod block;
mod conv;
mod init;
pub mod ops;

pub use block::{BlockCache, EfficientResidualBlock};
pub use conv::{Conv2d, ConvCache, DepthwiseConv3x3, DepthwiseCache};
pub use init::ParamInit;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense `channels x height x width` tensor for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_f64(channels: usize, height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(
            channels,
            height,
            width,
            data.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_spatial(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Channels `range` as a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Self {
        let n = self.plane_len();
        Self {
            channels: end - start,
            height: self.height,
            width: self.width,
            data: self.data[start * n..end * n].to_vec(),
        }
    }

    pub fn concat(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concatenating zero tensors"))?;
        if parts.iter().any(|p| !p.same_spatial(first)) {
            return Err(Error::shape("concatenated tensors differ in spatial size"));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            channels: parts.iter().map(|p| p.channels).sum(),
            height: first.height,
            width: first.width,
            data,
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: T) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        }
    }
}

/// Named parameter arrays, visited in a fixed order.
pub trait Params<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<T>
    where
        T: Copy,
    {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, d| out.extend_from_slice(d));
        out
    }

    /// Overwrites all parameters from a flat vector in visiting order.
    fn load_flat(&mut self, flat: &[T])
    where
        T: Copy,
    {
        let mut pos = 0;
        self.visit_mut("", &mut |_, _, d| {
            d.copy_from_slice(&flat[pos..pos + d.len()]);
            pos += d.len();
        });
        assert_eq!(pos, flat.len(), "flat parameter vector length mismatch");
    }

    fn fill_zero(&mut self)
    where
        T: Scalar,
    {
        self.visit_mut("", &mut |_, _, d| d.iter_mut().for_each(|v| *v = T::zero()));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T, P: Params<T>> Params<T> for Vec<P> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}
