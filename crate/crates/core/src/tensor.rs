//! Dense 64-bit tensors in row-major order.
//!
//! Images and latents use height x width x channels layout; convolution
//! weights use `[c_out, k, k, c_in]`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                expected: shape,
                actual: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Empty placeholder used by parameter-free layers.
    pub fn empty() -> Self {
        Tensor {
            shape: vec![0],
            data: Vec::new(),
        }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Height, width and channels of a rank-3 tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[h, w, c] => Ok((h, w, c)),
            other => Err(Error::Dimension {
                expected: vec![0, 0, 0],
                actual: other.to_vec(),
            }),
        }
    }

    pub fn ensure_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::dims(shape, &self.shape));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Tensor) -> Result<()> {
        other.ensure_shape(&self.shape)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data)
    }

    /// Split the channel axis of an h x w x c tensor at `at`.
    pub fn split_channels(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let (h, w, c) = self.hwc()?;
        if at > c {
            return Err(Error::Argument(format!(
                "channel split {at} beyond {c} channels"
            )));
        }
        let mut a = Vec::with_capacity(h * w * at);
        let mut b = Vec::with_capacity(h * w * (c - at));
        for px in self.data.chunks(c) {
            a.extend_from_slice(&px[..at]);
            b.extend_from_slice(&px[at..]);
        }
        Ok((
            Tensor::new(vec![h, w, at], a)?,
            Tensor::new(vec![h, w, c - at], b)?,
        ))
    }

    /// Inverse of [`Tensor::split_channels`].
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (h, w, ca) = a.hwc()?;
        let (hb, wb, cb) = b.hwc()?;
        if (h, w) != (hb, wb) {
            return Err(Error::dims(a.shape(), b.shape()));
        }
        let mut data = Vec::with_capacity(h * w * (ca + cb));
        for (pa, pb) in a.data.chunks(ca.max(1)).zip(b.data.chunks(cb.max(1))) {
            data.extend_from_slice(pa);
            data.extend_from_slice(pb);
        }
        Tensor::new(vec![h, w, ca + cb], data)
    }

    /// Tile an h x w x c tensor `ry` times vertically and `rx` times horizontally.
    pub fn tile(&self, ry: usize, rx: usize) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        let mut out = Tensor::zeros(&[h * ry, w * rx, c]);
        for y in 0..h * ry {
            for x in 0..w * rx {
                let src = ((y % h) * w + (x % w)) * c;
                let dst = (y * w * rx + x) * c;
                out.data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn channel_split_roundtrip() {
        let t = Tensor::from_fn(&[2, 3, 5], |i| i as f64);
        let (a, b) = t.split_channels(2).unwrap();
        assert_eq!(a.shape(), &[2, 3, 2]);
        assert_eq!(b.data()[0], 2.0);
        assert_eq!(Tensor::concat_channels(&a, &b).unwrap(), t);
    }

    #[test]
    fn tile_repeats_blocks() {
        let t = Tensor::from_fn(&[1, 2, 1], |i| i as f64);
        let tiled = t.tile(2, 2).unwrap();
        assert_eq!(tiled.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }
}
