//! Built-in numerical checks, runnable from the command line without data
//! or trained models.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{decode_image, encode_image};
use crate::diffusion::denoiser_loss_and_grads;
use crate::error::Result;
use crate::image::Image;
use crate::net::{Architecture, Class, ClassifierNet, DenoiserNet, ParamSet, PerImage};
use crate::oracle::{roundtrip_error, GaussianOracle, GaussianWorld};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &'static str, measured: f64, tolerance: f64) -> Self {
        Self { name, measured, tolerance, passed: measured <= tolerance }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: measured {:.3e}, tolerance {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

/// Small architecture for f64 gradient checks.
pub fn tiny_arch(t_max: usize) -> Architecture {
    Architecture { height: 8, width: 8, base_width: 4, deep_width: 8, time_dim: 8, t_max }
}

fn jitter(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng, amount: f64) {
    for b in params.blocks_mut() {
        for v in &mut b.data {
            *v += amount * rng.sample::<f64, _>(StandardNormal);
        }
    }
}

fn random_images(count: usize, arch: &Architecture, rng: &mut ChaCha8Rng) -> Vec<Image<f64>> {
    (0..count).map(|_| Image::from_fn(arch.height, arch.width, |_, _| rng.random::<f64>())).collect()
}

fn max_norm_relative(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = numeric.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
    diff / scale
}

/// Max-norm relative error between `T`-precision backpropagated parameter
/// gradients of the denoiser loss and f64 central differences on the same
/// weights, over `per_block` random coordinates of every parameter block.
pub fn denoiser_gradient_error<T: Scalar>(arch: Architecture, seed: u64, per_block: usize) -> Result<f64> {
    let s = NoiseSchedule::default_linear();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DenoiserNet::<f64>::new(arch, seed)?;
    jitter(model.params_mut(), &mut rng, 0.1);
    let x0s = random_images(2, &arch, &mut rng);
    let eps: Vec<Image<f64>> =
        (0..2).map(|_| Image::from_fn(arch.height, arch.width, |_, _| rng.sample(StandardNormal))).collect();
    let steps = [rng.random_range(1..=s.t_max()), rng.random_range(1..=s.t_max())];
    let cast = |xs: &[Image<f64>]| xs.iter().map(Image::cast::<T>).collect::<Vec<_>>();
    let (_, grads) = denoiser_loss_and_grads(&model.cast::<T>(), &cast(&x0s), &steps, &cast(&eps), &s)?;
    let h = 1e-5;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for bi in 0..model.params().blocks().len() {
        let len = model.params().blocks()[bi].len();
        for _ in 0..per_block.min(len) {
            let i = rng.random_range(0..len);
            let orig = model.params().blocks()[bi].data[i];
            model.params_mut().blocks_mut()[bi].data[i] = orig + h;
            let (plus, _) = denoiser_loss_and_grads(&model, &x0s, &steps, &eps, &s)?;
            model.params_mut().blocks_mut()[bi].data[i] = orig - h;
            let (minus, _) = denoiser_loss_and_grads(&model, &x0s, &steps, &eps, &s)?;
            model.params_mut().blocks_mut()[bi].data[i] = orig;
            analytic.push(grads.blocks()[bi][i].f64());
            numeric.push((plus - minus) / (2.0 * h));
        }
    }
    Ok(max_norm_relative(&analytic, &numeric))
}

/// Max-norm relative error of the `T`-precision `∇ₓ log p(healthy | x, n)`
/// against f64 central differences over every pixel.
pub fn classifier_gradient_error<T: Scalar>(arch: Architecture, seed: u64) -> Result<f64> {
    let s = NoiseSchedule::default_linear();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ClassifierNet::<f64>::new(arch, seed)?;
    jitter(model.params_mut(), &mut rng, 0.1);
    let x = random_images(1, &arch, &mut rng).remove(0);
    let n = rng.random_range(1..=s.t_max());
    let grad = model.cast::<T>().input_gradient_one(&x.cast(), n, Class::Healthy)?;
    let h = 1e-5;
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.as_mut_slice()[i] += h;
        let mut xm = x.clone();
        xm.as_mut_slice()[i] -= h;
        let lp = model.log_probs_one(&xp, n)?[Class::Healthy.index()];
        let lm = model.log_probs_one(&xm, n)?[Class::Healthy.index()];
        numeric.push((lp - lm) / (2.0 * h));
    }
    let analytic: Vec<f64> = grad.as_slice().iter().map(|v| v.f64()).collect();
    Ok(max_norm_relative(&analytic, &numeric))
}

/// Largest bitwise-visible difference between batched and one-at-a-time
/// denoiser outputs.
pub fn batch_consistency_error(seed: u64) -> Result<f64> {
    let arch = tiny_arch(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = DenoiserNet::<f32>::new(arch, seed)?;
    let mut p = model.params().cast::<f64>();
    jitter(&mut p, &mut rng, 0.1);
    *model.params_mut() = p.cast();
    let xs: Vec<Image<f32>> = random_images(3, &arch, &mut rng).iter().map(Image::cast).collect();
    let steps = [1, 500, 1000];
    let batched = model.forward(&xs, &steps)?;
    let mut worst = 0.0f64;
    for ((x, &n), b) in xs.iter().zip(&steps).zip(&batched) {
        worst = worst.max(model.forward_one(x, n)?.max_abs_diff(b)?);
    }
    Ok(worst)
}

pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let s = NoiseSchedule::default_linear();
    let mut checks = Vec::new();

    let ab = s.alpha_bars();
    let monotone = ab.windows(2).all(|w| w[1] < w[0]) && ab[0] == 1.0;
    checks.push(Check::at_most("alpha-bar strictly decreasing from 1", if monotone { 0.0 } else { 1.0 }, 0.0));
    checks.push(Check::at_most("alpha-bar at T", s.alpha_bar(s.t_max()), 1e-4));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0s: Vec<Image<f64>> = (0..4).map(|_| Image::from_fn(8, 8, |_, _| rng.random::<f64>())).collect();
    let c = Image::<f64>::from_fn(8, 8, |y, x| ((y * 8 + x) as f64 * 0.37).sin());
    let constant = PerImage(move |_: &Image<f64>, _| c.clone());
    checks.push(Check::at_most(
        "constant-noise round trip at N=1000",
        roundtrip_error(&x0s, 1000, &constant, &s)?,
        1e-10,
    ));

    let world = GaussianWorld::new(0.5, 0.04)?;
    let oracle = GaussianOracle { world, schedule: &s };
    let samples: Vec<Image<f64>> = (0..4).map(|_| world.sample(8, 8, &mut rng)).collect();
    checks.push(Check::at_most(
        "Gaussian oracle round trip at N=300",
        roundtrip_error(&samples, 300, &oracle, &s)?,
        0.05,
    ));

    checks.push(Check::at_most(
        "denoiser parameter gradient",
        denoiser_gradient_error::<f64>(tiny_arch(1000), seed, 3)?,
        1e-4,
    ));
    checks.push(Check::at_most(
        "classifier input gradient",
        classifier_gradient_error::<f64>(tiny_arch(1000), seed)?,
        1e-4,
    ));
    checks.push(Check::at_most("batched equals single forward", batch_consistency_error(seed)?, 0.0));

    let img = Image::<f32>::from_fn(5, 7, |_, _| rng.random::<f32>());
    let back = decode_image(&encode_image(&img))?;
    checks.push(Check::at_most("image codec round trip", back.max_abs_diff(&img)?, 0.0));
    Ok(checks)
}
