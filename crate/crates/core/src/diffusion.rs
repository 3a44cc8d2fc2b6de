//! Forward noising, DDPM/DDIM steps, classifier guidance, and the
//! simplified ε-prediction loss.
//!
//! Step coefficients are evaluated in `f64` from the schedule and applied
//! elementwise in the image's scalar type.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{Class, DenoiserNet, ParamGrads};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

/// Classifier-guidance settings: gradient scale `S` and the class the
/// decoder is steered toward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub target: Class,
}

impl GuidanceConfig {
    pub fn new(scale: f64) -> Result<Self> {
        let g = Self { scale, target: Class::Healthy };
        g.validate()?;
        Ok(g)
    }

    pub fn disabled() -> Self {
        Self { scale: 0.0, target: Class::Healthy }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("guidance scale must be finite and >= 0, got {}", self.scale)));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.scale > 0.0
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale: 7.0, target: Class::Healthy }
    }
}

fn affine3<T: Scalar>(x: &Image<T>, a: f64, e: &Image<T>, b: f64, z: Option<(&Image<T>, f64)>) -> Result<Image<T>> {
    let (a, b) = (T::of(a), T::of(b));
    match z {
        None => x.affine(a, e, b),
        Some((z, c)) => {
            z.ensure_same_shape(x)?;
            let c = T::of(c);
            let mut out = x.affine(a, e, b)?;
            for (o, &zi) in out.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *o = *o + c * zi;
            }
            Ok(out)
        }
    }
}

/// `x_n = √ᾱ_n·x_0 + √(1−ᾱ_n)·ε`, the single-jump marginal sample.
pub fn forward_jump<T: Scalar>(x0: &Image<T>, n: usize, eps: &Image<T>, s: &NoiseSchedule) -> Result<Image<T>> {
    s.check_step(n)?;
    let ab = s.alpha_bar(n);
    x0.affine(T::of(ab.sqrt()), eps, T::of((1.0 - ab).sqrt()))
}

/// `x_n = √(1−β_n)·x_{n−1} + √β_n·ε`, one Markov noising step.
pub fn forward_step<T: Scalar>(x_prev: &Image<T>, n: usize, eps: &Image<T>, s: &NoiseSchedule) -> Result<Image<T>> {
    s.check_step(n)?;
    let b = s.beta(n);
    x_prev.affine(T::of((1.0 - b).sqrt()), eps, T::of(b.sqrt()))
}

/// Ancestral step `(1/√α_n)(x_n − β_n/√(1−ᾱ_n)·ε̂) + √β̃_n·z`.
pub fn ddpm_reverse_step<T: Scalar>(
    x_n: &Image<T>,
    n: usize,
    eps_hat: &Image<T>,
    noise: &Image<T>,
    s: &NoiseSchedule,
) -> Result<Image<T>> {
    s.check_step(n)?;
    let inv = 1.0 / s.alpha(n).sqrt();
    let ce = -inv * s.beta(n) / (1.0 - s.alpha_bar(n)).sqrt();
    affine3(x_n, inv, eps_hat, ce, Some((noise, s.beta_tilde(n).sqrt())))
}

/// Generalized decode `√ᾱ_{n−1}·x̂_0 + √(1−ᾱ_{n−1}−σ²)·ε̂ + σ·z` with
/// `x̂_0 = (x_n − √(1−ᾱ_n)·ε̂)/√ᾱ_n`. `sigma = 0` is the deterministic
/// sampler and needs no noise.
pub fn ddim_decode_step<T: Scalar>(
    x_n: &Image<T>,
    n: usize,
    eps_hat: &Image<T>,
    s: &NoiseSchedule,
    sigma: f64,
    noise: Option<&Image<T>>,
) -> Result<Image<T>> {
    s.check_step(n)?;
    let ab = s.alpha_bar(n);
    let ab_prev = s.alpha_bar(n - 1);
    let room = 1.0 - ab_prev;
    if !(sigma >= 0.0) || sigma * sigma > room * (1.0 + 1e-12) + f64::MIN_POSITIVE {
        return Err(Error::InvalidArgument(format!("sigma {sigma} exceeds sqrt(1 - alpha_bar_prev) at step {n}")));
    }
    let cx = (ab_prev / ab).sqrt();
    let ce = (room - sigma * sigma).max(0.0).sqrt() - ab_prev.sqrt() * (1.0 - ab).sqrt() / ab.sqrt();
    if sigma > 0.0 {
        let z = noise.ok_or_else(|| Error::InvalidArgument("sigma > 0 requires a noise image".into()))?;
        affine3(x_n, cx, eps_hat, ce, Some((z, sigma)))
    } else {
        affine3(x_n, cx, eps_hat, ce, None)
    }
}

/// Coefficients `(a, b)` of the deterministic encode `x_{n+1} = a·x_n + b·ε̂`.
pub fn encode_coefficients(s: &NoiseSchedule, n: usize) -> Result<(f64, f64)> {
    if n >= s.t_max() {
        return Err(Error::StepOutOfRange { n, lo: 0, hi: s.t_max() - 1 });
    }
    let ab = s.alpha_bar(n);
    let ab_next = s.alpha_bar(n + 1);
    let a = (ab_next / ab).sqrt();
    Ok((a, (1.0 - ab_next).sqrt() - a * (1.0 - ab).sqrt()))
}

/// Reversed-ODE encode from level `n` to `n + 1`, `n ∈ 0..T`.
pub fn ddim_encode_step<T: Scalar>(
    x_n: &Image<T>,
    n: usize,
    eps_hat: &Image<T>,
    s: &NoiseSchedule,
) -> Result<Image<T>> {
    let (a, b) = encode_coefficients(s, n)?;
    x_n.affine(T::of(a), eps_hat, T::of(b))
}

/// `ε' = ε̂ − S·√(1−ᾱ_n)·g` with `g = ∇_x log p_C(h | x_n, n)`.
/// With `S = 0` the estimate is returned unchanged.
pub fn guided_epsilon<T: Scalar>(
    eps_hat: &Image<T>,
    grad: &Image<T>,
    scale: f64,
    n: usize,
    s: &NoiseSchedule,
) -> Result<Image<T>> {
    eps_hat.ensure_same_shape(grad)?;
    s.check_step(n)?;
    if !(scale >= 0.0) {
        return Err(Error::InvalidArgument(format!("guidance scale {scale} is negative")));
    }
    if scale == 0.0 {
        return Ok(eps_hat.clone());
    }
    let k = T::of(scale * (1.0 - s.alpha_bar(n)).sqrt());
    eps_hat.zip_map(grad, |e, g| e - k * g)
}

/// `‖ε − ε_θ(x_n, n)‖²` with `x_n` from [`forward_jump`].
pub fn denoiser_loss<T: Scalar>(
    model: &DenoiserNet<T>,
    x0: &Image<T>,
    n: usize,
    eps: &Image<T>,
    s: &NoiseSchedule,
) -> Result<f64> {
    let xn = forward_jump(x0, n, eps, s)?;
    let pred = model.forward_one(&xn, n)?;
    Ok(pred.zip_map(eps, |a, b| a - b)?.squared_norm())
}

/// Batch mean of [`denoiser_loss`] and its parameter gradient.
pub fn denoiser_loss_and_grads<T: Scalar>(
    model: &DenoiserNet<T>,
    x0s: &[Image<T>],
    steps: &[usize],
    eps: &[Image<T>],
    s: &NoiseSchedule,
) -> Result<(f64, ParamGrads<T>)> {
    if x0s.len() != steps.len() || x0s.len() != eps.len() {
        return Err(Error::shape(&[x0s.len()], &[steps.len(), eps.len()]));
    }
    let xn =
        x0s.iter().zip(steps).zip(eps).map(|((x0, &n), e)| forward_jump(x0, n, e, s)).collect::<Result<Vec<_>>>()?;
    let rec = model.record(&xn, steps, false)?;
    let pred = rec.output();
    let target: Vec<T> = eps.iter().flat_map(|e| e.as_slice().iter().copied()).collect();
    let inv_b = 1.0 / x0s.len() as f64;
    let mut loss = 0.0;
    let k = T::of(2.0 * inv_b);
    let seed: Vec<T> = pred
        .iter()
        .zip(&target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss += d.f64() * d.f64();
            k * d
        })
        .collect();
    let (grads, _) = model.backprop(&rec, &seed)?;
    Ok((loss * inv_b, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn px(v: f64) -> Image<f64> {
        Image::filled(1, 1, v)
    }

    fn single(beta: f64) -> NoiseSchedule {
        NoiseSchedule::linear(1, beta, beta).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn forward_jump_scalar() {
        let s = single(0.36); // alpha_bar_1 = 0.64
        close(forward_jump(&px(1.0), 1, &px(0.5), &s).unwrap().get(0, 0), 1.1, 1e-12);
        close(forward_jump(&px(1.0), 1, &px(0.0), &s).unwrap().get(0, 0), 0.8, 1e-12);
    }

    #[test]
    fn forward_jump_at_the_end_is_nearly_pure_noise() {
        let s = NoiseSchedule::default_linear();
        let out = forward_jump(&px(1.0), 1000, &px(0.7), &s).unwrap().get(0, 0);
        close(out, 0.7, 0.02);
    }

    #[test]
    fn forward_step_scalar() {
        let s = single(0.19);
        close(forward_step(&px(1.0), 1, &px(0.0), &s).unwrap().get(0, 0), 0.9, 1e-12);
        let tiny = single(1e-12);
        close(forward_step(&px(0.3), 1, &px(0.0), &tiny).unwrap().get(0, 0), 0.3, 1e-12);
    }

    #[test]
    fn errors_on_shape_and_range() {
        let s = NoiseSchedule::default_linear();
        let a = Image::<f64>::zeros(2, 2);
        let b = Image::<f64>::zeros(2, 3);
        assert!(matches!(forward_jump(&a, 1, &b, &s), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(forward_jump(&a, 0, &a, &s), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(forward_step(&a, 1001, &a, &s), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(ddim_encode_step(&a, 1000, &a, &s), Err(Error::StepOutOfRange { .. })));
        assert!(ddim_encode_step(&a, 0, &a, &s).is_ok());
        assert!(ddpm_reverse_step(&a, 1, &a, &b, &s).is_err());
        assert!(guided_epsilon(&a, &b, 1.0, 1, &s).is_err());
    }

    #[test]
    fn ddpm_reverse_inverts_noiseless_forward_step() {
        let s = single(0.19);
        let out = ddpm_reverse_step(&px(0.9), 1, &px(0.0), &px(0.0), &s).unwrap();
        close(out.get(0, 0), 1.0, 1e-12);
    }

    #[test]
    fn ddpm_reverse_recovers_x0_at_first_step_with_true_noise() {
        let s = NoiseSchedule::default_linear();
        let (x0, eps) = (px(0.42), px(-1.3));
        let x1 = forward_jump(&x0, 1, &eps, &s).unwrap();
        let back = ddpm_reverse_step(&x1, 1, &eps, &px(0.0), &s).unwrap();
        close(back.get(0, 0), 0.42, 1e-12);
    }

    #[test]
    fn ddim_decode_scalar() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap(); // alpha_bar = 1, 0.5, 0.25
        let out = ddim_decode_step(&px(1.0), 2, &px(0.2), &s, 0.0, None).unwrap();
        let x0hat = (1.0 - 0.75f64.sqrt() * 0.2) / 0.5;
        close(x0hat, 1.653590, 1e-6);
        close(out.get(0, 0), 0.5f64.sqrt() * x0hat + 0.5f64.sqrt() * 0.2, 1e-12);
        close(out.get(0, 0), 1.310687, 2e-6);
        let plain = ddim_decode_step(&px(1.0), 2, &px(0.0), &s, 0.0, None).unwrap();
        close(plain.get(0, 0), 2f64.sqrt(), 1e-12);
    }

    #[test]
    fn ddim_decode_rejects_large_sigma_and_missing_noise() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert!(ddim_decode_step(&px(1.0), 2, &px(0.2), &s, 0.8, Some(&px(0.0))).is_err());
        assert!(ddim_decode_step(&px(1.0), 2, &px(0.2), &s, 0.3, None).is_err());
        assert!(ddim_decode_step(&px(1.0), 2, &px(0.2), &s, 0.3, Some(&px(0.1))).is_ok());
    }

    #[test]
    fn ddim_encode_scalar() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        let out = ddim_encode_step(&px(1.0), 1, &px(0.2), &s).unwrap();
        close(out.get(0, 0), 0.5f64.sqrt() + (0.75f64.sqrt() - 0.5) * 0.2, 1e-12);
        close(out.get(0, 0), 0.780312, 1e-6);
    }

    #[test]
    fn encode_from_clean_image_without_noise_matches_forward_jump() {
        let s = NoiseSchedule::default_linear();
        let x1 = ddim_encode_step(&px(0.6), 0, &px(0.0), &s).unwrap();
        let jump = forward_jump(&px(0.6), 1, &px(0.0), &s).unwrap();
        close(x1.get(0, 0), jump.get(0, 0), 1e-15);
    }

    #[test]
    fn encode_coefficients_match_bracketed_form() {
        let s = NoiseSchedule::default_linear();
        for n in [0usize, 1, 17, 500, 998] {
            let (ab, abn) = (s.alpha_bar(n), s.alpha_bar(n + 1));
            let (a, b) = encode_coefficients(&s, n).unwrap();
            let bracket_x = 1.0 + abn.sqrt() * ((1.0 / ab).sqrt() - (1.0 / abn).sqrt());
            let bracket_e = abn.sqrt() * ((1.0 / abn - 1.0).sqrt() - (1.0 / ab - 1.0).sqrt());
            close(a, bracket_x, 1e-12);
            close(b, bracket_e, 1e-12);
        }
    }

    #[test]
    fn frozen_eps_encode_decode_is_inverse() {
        let s = NoiseSchedule::default_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(0..1000);
            let x = px(rng.sample(StandardNormal));
            let e = px(rng.sample(StandardNormal));
            let up = ddim_encode_step(&x, n, &e, &s).unwrap();
            let back = ddim_decode_step(&up, n + 1, &e, &s, 0.0, None).unwrap();
            close(back.get(0, 0), x.get(0, 0), 1e-12);
        }
    }

    #[test]
    fn guided_epsilon_scalar_and_neutral_cases() {
        let s = single(0.25); // alpha_bar = 0.75
        close(guided_epsilon(&px(0.2), &px(0.1), 5.0, 1, &s).unwrap().get(0, 0), -0.05, 1e-12);
        let e = Image::<f32>::from_vec(1, 3, vec![0.1, -2.5, 3.3]).unwrap();
        let g = Image::<f32>::from_vec(1, 3, vec![9.0, -1.0, 0.5]).unwrap();
        assert_eq!(guided_epsilon(&e, &g, 0.0, 1, &s).unwrap(), e);
        assert_eq!(guided_epsilon(&e, &Image::zeros(1, 3), 4.0, 1, &s).unwrap(), e);
        assert!(guided_epsilon(&e, &g, -1.0, 1, &s).is_err());
    }

    #[test]
    fn zero_init_loss_is_noise_energy() {
        use crate::net::Architecture;
        let s = NoiseSchedule::default_linear();
        let net = DenoiserNet::<f64>::new(Architecture::reference(4, 4, 1000), 0).unwrap();
        let x0 = Image::filled(4, 4, 0.5);
        let eps = Image::from_fn(4, 4, |y, x| (y as f64 - x as f64) * 0.3);
        let loss = denoiser_loss(&net, &x0, 10, &eps, &s).unwrap();
        close(loss, eps.squared_norm(), 1e-12);
    }

    #[test]
    fn loss_vanishes_for_a_perfect_predictor() {
        let eps = Image::<f64>::from_vec(1, 2, vec![0.3, -0.4]).unwrap();
        let pred = eps.clone();
        assert_eq!(pred.zip_map(&eps, |a, b| a - b).unwrap().squared_norm(), 0.0);
    }

    #[test]
    fn loss_is_invariant_to_consistent_pixel_permutation() {
        use crate::net::Architecture;
        // Only centre taps of the full-resolution path are nonzero, so the
        // model acts on each pixel independently and commutes with swaps.
        let s = NoiseSchedule::default_linear();
        let arch = Architecture { height: 1, width: 2, base_width: 1, deep_width: 1, time_dim: 2, t_max: 1000 };
        let mut net = DenoiserNet::<f64>::new(arch, 1).unwrap();
        let names: Vec<_> = net.params().blocks().iter().map(|b| b.name.clone()).collect();
        for name in &names {
            net.params_mut().get_mut(name).unwrap().data.fill(0.0);
        }
        net.params_mut().get_mut("in.w").unwrap().data[4] = 1.3;
        net.params_mut().get_mut("out.w").unwrap().data[9 + 4] = 0.8;
        net.params_mut().get_mut("out.b").unwrap().data[0] = 0.25;
        let x0 = Image::from_vec(1, 2, vec![0.2, 0.9]).unwrap();
        let eps = Image::from_vec(1, 2, vec![-0.7, 1.1]).unwrap();
        let swap = |im: &Image<f64>| Image::from_vec(1, 2, vec![im.get(0, 1), im.get(0, 0)]).unwrap();
        let a = denoiser_loss(&net, &x0, 40, &eps, &s).unwrap();
        let b = denoiser_loss(&net, &swap(&x0), 40, &swap(&eps), &s).unwrap();
        close(a, b, 1e-15);
    }
}
