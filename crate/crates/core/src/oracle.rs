//! Closed-form noise predictors for Gaussian data, used to test samplers
//! without a trained network.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::anomaly::{decode_batch, encode_levels};
use crate::diffusion::GuidanceConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{EpsPredictor, GuidanceClassifier};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

/// Isotropic Gaussian data `x₀ ~ N(μ, s²·I)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianWorld {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianWorld {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite() && mean.is_finite()) {
            return Err(Error::InvalidArgument(format!("variance must be positive and finite, got {variance}")));
        }
        Ok(Self { mean, variance })
    }

    pub fn sample<T: Scalar, R: Rng>(&self, h: usize, w: usize, rng: &mut R) -> Image<T> {
        let sd = self.variance.sqrt();
        Image::from_fn(h, w, |_, _| T::of(self.mean + sd * rng.sample::<f64, _>(StandardNormal)))
    }

    /// Mean and variance of `x_n`.
    pub fn marginal(&self, n: usize, s: &NoiseSchedule) -> Result<(f64, f64)> {
        s.check_level(n)?;
        let ab = s.alpha_bar(n);
        Ok((ab.sqrt() * self.mean, ab * self.variance + 1.0 - ab))
    }

    /// `E[x₀ | x_n]` for one pixel.
    pub fn posterior_mean(&self, x_n: f64, n: usize, s: &NoiseSchedule) -> f64 {
        let ab = s.alpha_bar(n);
        let gain = ab.sqrt() * self.variance / (ab * self.variance + 1.0 - ab);
        self.mean + gain * (x_n - ab.sqrt() * self.mean)
    }

    /// `E[ε | x_n]` for one pixel.
    pub fn eps_star(&self, x_n: f64, n: usize, s: &NoiseSchedule) -> f64 {
        let ab = s.alpha_bar(n);
        (x_n - ab.sqrt() * self.posterior_mean(x_n, n, s)) / (1.0 - ab).sqrt()
    }
}

/// The MMSE noise prediction under `world`.
pub fn gaussian_oracle_eps<T: Scalar>(
    x_n: &Image<T>,
    n: usize,
    world: &GaussianWorld,
    s: &NoiseSchedule,
) -> Result<Image<T>> {
    s.check_step(n)?;
    Ok(x_n.map(|v| T::of(world.eps_star(v.f64(), n, s))))
}

/// [`gaussian_oracle_eps`] as an [`EpsPredictor`].
#[derive(Clone, Copy, Debug)]
pub struct GaussianOracle<'a> {
    pub world: GaussianWorld,
    pub schedule: &'a NoiseSchedule,
}

impl<T: Scalar> EpsPredictor<T> for GaussianOracle<'_> {
    fn predict_eps(&self, xs: &[Image<T>], n: usize) -> Result<Vec<Image<T>>> {
        xs.iter().map(|x| gaussian_oracle_eps(x, n, &self.world, self.schedule)).collect()
    }
}

/// Placeholder classifier type for unguided decodes.
pub enum NoClassifier {}

impl<T: Scalar> GuidanceClassifier<T> for NoClassifier {
    fn log_probs(&self, _xs: &[Image<T>], _n: usize) -> Result<Vec<[T; 2]>> {
        match *self {}
    }
    fn log_prob_grad(&self, _xs: &[Image<T>], _n: usize, _c: crate::net::Class) -> Result<Vec<Image<T>>> {
        match *self {}
    }
}

/// Encodes `N` steps and decodes them back with `σ = 0`, returning the
/// largest absolute pixel error over the batch.
pub fn roundtrip_error<T: Scalar>(
    x0s: &[Image<T>],
    level: usize,
    eps_fn: &(impl EpsPredictor<T> + ?Sized),
    s: &NoiseSchedule,
) -> Result<f64> {
    let latents = encode_levels(x0s, &[level], eps_fn, s)?.remove(0);
    let back = decode_batch::<T, NoClassifier>(&latents, level, eps_fn, None, &GuidanceConfig::disabled(), s)?;
    let mut err = 0.0f64;
    for (a, b) in x0s.iter().zip(&back) {
        err = err.max(a.max_abs_diff(b)?);
    }
    Ok(err)
}
