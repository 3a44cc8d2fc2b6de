use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::net::Class;
use crate::scalar::Scalar;

use super::phantom::PhantomSample;

/// Square crop window in source coordinates; may extend past the borders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub top: isize,
    pub left: isize,
    pub size: usize,
}

impl CropWindow {
    /// Window of `size` centred on the mask centroid, rounded per axis with
    /// `floor(c + 0.5)`. The centre lands at output index `size / 2`.
    pub fn centered_on(mask: &Mask, size: usize) -> Result<Self> {
        let (mut sy, mut sx, mut n) = (0.0f64, 0.0f64, 0usize);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(y, x) {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyMask);
        }
        let cy = (sy / n as f64 + 0.5).floor() as isize;
        let cx = (sx / n as f64 + 0.5).floor() as isize;
        let half = (size / 2) as isize;
        Ok(Self { top: cy - half, left: cx - half, size })
    }

    fn source(&self, y: usize, x: usize, h: usize, w: usize) -> Option<(usize, usize)> {
        let sy = self.top + y as isize;
        let sx = self.left + x as isize;
        (sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w).then_some((sy as usize, sx as usize))
    }

    /// Crops `image`, zero-padding outside the source and zeroing pixels
    /// outside `keep`.
    pub fn apply<T: Scalar>(&self, image: &Image<T>, keep: &Mask) -> Result<Image<T>> {
        if image.shape() != keep.shape() {
            return Err(Error::shape(&[image.height(), image.width()], &[keep.height(), keep.width()]));
        }
        let (h, w) = image.shape();
        Ok(Image::from_fn(self.size, self.size, |y, x| match self.source(y, x, h, w) {
            Some((sy, sx)) if keep.get(sy, sx) => image.get(sy, sx),
            _ => T::zero(),
        }))
    }

    pub fn apply_mask(&self, mask: &Mask) -> Mask {
        let (h, w) = mask.shape();
        Mask::from_fn(self.size, self.size, |y, x| self.source(y, x, h, w).is_some_and(|(sy, sx)| mask.get(sy, sx)))
    }
}

/// Centres the organ in an `out_size` square and removes surrounding tissue.
pub fn center_crop_on_mask<T: Scalar>(image: &Image<T>, organ: &Mask, out_size: usize) -> Result<Image<T>> {
    CropWindow::centered_on(organ, out_size)?.apply(image, organ)
}

/// Min-max rescale over organ pixels; everything else is set to 0. A
/// constant organ maps to 0.5.
pub fn normalize_intensity<T: Scalar>(image: &Image<T>, organ: &Mask) -> Result<Image<T>> {
    image.ensure_finite("image")?;
    if image.shape() != organ.shape() {
        return Err(Error::shape(&[image.height(), image.width()], &[organ.height(), organ.width()]));
    }
    let vals = image.as_slice().iter().zip(organ.bits()).filter(|(_, &m)| m).map(|(v, _)| v.f64());
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let out = image
        .as_slice()
        .iter()
        .zip(organ.bits())
        .map(|(v, &m)| match m {
            false => T::zero(),
            true if hi > lo => T::of((v.f64() - lo) / (hi - lo)),
            true => T::of(0.5),
        })
        .collect();
    Image::from_vec(image.height(), image.width(), out)
}

/// Mean-intensity-deviation filter: diseased slices whose lesion differs from
/// the remaining organ by less than 0.1 are dropped.
pub fn keep_slice(sample: &PhantomSample) -> Result<bool> {
    if sample.label == Class::Healthy {
        return Ok(true);
    }
    if sample.lesion.is_empty() {
        return Err(Error::Invariant("diseased sample has an empty lesion mask".into()));
    }
    let (mut tissue, mut nt, mut lesion, mut nl) = (0.0, 0usize, 0.0, 0usize);
    for ((&v, &o), &l) in sample.image.as_slice().iter().zip(sample.organ.bits()).zip(sample.lesion.bits()) {
        if l {
            lesion += v as f64;
            nl += 1;
        } else if o {
            tissue += v as f64;
            nt += 1;
        }
    }
    if nt == 0 {
        return Err(Error::Invariant("lesion covers the whole organ".into()));
    }
    Ok(((tissue / nt as f64) - (lesion / nl as f64)).abs() >= 0.1)
}
