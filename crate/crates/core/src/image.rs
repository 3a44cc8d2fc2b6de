//! Single-channel images and binary masks.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major single-channel intensity image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![T::zero(); height * width] }
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::shape(&[height * width], &[data.len()]));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn ensure_same_shape<U>(&self, other: &Image<U>) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(&[self.height, self.width], &[other.height, other.width]));
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination of two equally shaped images.
    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { height: self.height, width: self.width, data })
    }

    /// `a * self + b * other`, the shape of every diffusion update.
    pub fn affine(&self, a: T, other: &Self, b: T) -> Result<Self> {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image { height: self.height, width: self.width, data: self.data.iter().map(|v| U::of(v.f64())).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.data.len() as f64
    }

    pub fn min_max(&self) -> Option<(T, T)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a.f64() - b.f64()).abs()).fold(0.0, f64::max))
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v.f64() * v.f64()).sum()
    }
}

/// Binary mask with the same geometry as an [`Image`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![false; height * width] }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(&[height * width], &[bits.len()]));
        }
        Ok(Self { height, width, bits })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self { height, width, bits }
    }

    /// Reads a mask stored as an image with values in {0, 1}.
    pub fn from_image<T: Scalar>(image: &Image<T>) -> Result<Self> {
        let mut bits = Vec::with_capacity(image.len());
        for &v in image.as_slice() {
            if v == T::zero() {
                bits.push(false);
            } else if v == T::one() {
                bits.push(true);
            } else {
                return Err(Error::InvalidArgument(format!("non-binary mask value {v}")));
            }
        }
        Ok(Self { height: image.height(), width: image.width(), bits })
    }

    pub fn to_image<T: Scalar>(&self) -> Image<T> {
        Image {
            height: self.height,
            width: self.width,
            data: self.bits.iter().map(|&b| if b { T::one() } else { T::zero() }).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.shape() == other.shape() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        if self.shape() != other.shape() {
            return Err(Error::shape(&[self.height, self.width], &[other.height, other.width]));
        }
        Ok(self.bits.iter().zip(&other.bits).filter(|(&a, &b)| a && b).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Image::<f32>::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn mask_rejects_non_binary_values() {
        let img = Image::<f32>::from_vec(1, 3, vec![0.0, 1.0, 0.5]).unwrap();
        assert!(matches!(Mask::from_image(&img), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mask_image_round_trip() {
        let m = Mask::from_fn(3, 4, |y, x| (y + x) % 2 == 0);
        assert_eq!(Mask::from_image(&m.to_image::<f32>()).unwrap(), m);
        assert_eq!(m.count(), 6);
    }

    #[test]
    fn affine_is_elementwise() {
        let a = Image::<f64>::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Image::<f64>::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(a.affine(2.0, &b, 0.5).unwrap().as_slice(), &[3.5, 6.0]);
        assert!(a.affine(1.0, &Image::zeros(2, 1), 1.0).is_err());
    }
}
