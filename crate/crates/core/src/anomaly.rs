//! Anomaly localization: deterministic noise encoding, classifier-guided
//! decoding toward the healthy class, and the difference map.
//!
//! The encoder evaluates `ε_θ` at `max(n, 1)`, so the first step from the
//! clean image uses the network's least-noisy level.

use crate::diffusion::{ddim_decode_step, ddim_encode_step, guided_epsilon, GuidanceConfig};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::net::{EpsPredictor, GuidanceClassifier};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectConfig {
    pub noise_level: usize,
    pub guidance: GuidanceConfig,
    pub threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { noise_level: 300, guidance: GuidanceConfig::default(), threshold: 0.35 }
    }
}

impl DetectConfig {
    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        if self.noise_level == 0 || self.noise_level > s.t_max() {
            return Err(Error::StepOutOfRange { n: self.noise_level, lo: 1, hi: s.t_max() });
        }
        check_threshold(self.threshold)?;
        self.guidance.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyResult<T> {
    pub reconstruction: Image<T>,
    pub raw_map: Image<T>,
    pub normalized_map: Image<T>,
    pub mask: Mask,
    /// `p(h | x, n = 1)`.
    pub confidence: f64,
    pub config: DetectConfig,
}

/// Noised image at level `N` with the L∞ norm of every intermediate state.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding<T> {
    pub latent: Image<T>,
    pub level: usize,
    pub linf_trajectory: Vec<f64>,
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("threshold {t} outside [0,1]")));
    }
    Ok(())
}

fn check_unit_range<T: Scalar>(x: &Image<T>) -> Result<()> {
    if x.as_slice().iter().any(|v| !(v.f64() >= 0.0 && v.f64() <= 1.0)) {
        return Err(Error::InvalidArgument("input image must lie in [0,1]".into()));
    }
    Ok(())
}

/// Encodes a batch, returning the states at each of `levels` (any order,
/// each in `0..=T`).
pub fn encode_levels<T: Scalar>(
    xs: &[Image<T>],
    levels: &[usize],
    model: &(impl EpsPredictor<T> + ?Sized),
    s: &NoiseSchedule,
) -> Result<Vec<Vec<Image<T>>>> {
    for &l in levels {
        s.check_level(l)?;
    }
    let top = levels.iter().copied().max().unwrap_or(0);
    let mut out: Vec<Vec<Image<T>>> = vec![Vec::new(); levels.len()];
    let mut cur = xs.to_vec();
    for n in 0..=top {
        for (slot, &l) in out.iter_mut().zip(levels) {
            if l == n {
                *slot = cur.clone();
            }
        }
        if n == top || xs.is_empty() {
            continue;
        }
        let eps = model.predict_eps(&cur, n.max(1))?;
        cur = cur.iter().zip(&eps).map(|(x, e)| ddim_encode_step(x, n, e, s)).collect::<Result<_>>()?;
    }
    Ok(out)
}

/// Deterministic encoding of one image to level `N`.
pub fn encode_image<T: Scalar>(
    x: &Image<T>,
    level: usize,
    model: &(impl EpsPredictor<T> + ?Sized),
    s: &NoiseSchedule,
) -> Result<Encoding<T>> {
    check_unit_range(x)?;
    s.check_level(level)?;
    let mut cur = x.clone();
    let mut traj = vec![linf(&cur)];
    for n in 0..level {
        let eps = model.predict_eps(std::slice::from_ref(&cur), n.max(1))?.remove(0);
        cur = ddim_encode_step(&cur, n, &eps, s)?;
        traj.push(linf(&cur));
    }
    Ok(Encoding { latent: cur, level, linf_trajectory: traj })
}

fn linf<T: Scalar>(x: &Image<T>) -> f64 {
    x.as_slice().iter().fold(0.0, |m, v| m.max(v.f64().abs()))
}

/// Decodes a batch from level `N` to 0 with the deterministic sampler,
/// correcting `ε̂` by the classifier gradient when guidance is active.
pub fn decode_batch<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    latents: &[Image<T>],
    level: usize,
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    classifier: Option<&C>,
    guidance: &GuidanceConfig,
    s: &NoiseSchedule,
) -> Result<Vec<Image<T>>> {
    guidance.validate()?;
    s.check_level(level)?;
    let classifier = match (guidance.is_active(), classifier) {
        (false, _) => None,
        (true, Some(c)) => Some(c),
        (true, None) => return Err(Error::InvalidArgument("guidance scale > 0 requires a classifier".into())),
    };
    let mut cur = latents.to_vec();
    if cur.is_empty() {
        return Ok(cur);
    }
    for n in (1..=level).rev() {
        let mut eps = denoiser.predict_eps(&cur, n)?;
        if let Some(c) = classifier {
            let grads = c.log_prob_grad(&cur, n, guidance.target)?;
            eps = eps
                .iter()
                .zip(&grads)
                .map(|(e, g)| guided_epsilon(e, g, guidance.scale, n, s))
                .collect::<Result<_>>()?;
        }
        cur = cur.iter().zip(&eps).map(|(x, e)| ddim_decode_step(x, n, e, s, 0.0, None)).collect::<Result<_>>()?;
    }
    Ok(cur)
}

pub fn decode_guided<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    latent: &Image<T>,
    level: usize,
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    classifier: Option<&C>,
    guidance: &GuidanceConfig,
    s: &NoiseSchedule,
) -> Result<Image<T>> {
    Ok(decode_batch(std::slice::from_ref(latent), level, denoiser, classifier, guidance, s)?.remove(0))
}

/// `|x − x₀|` elementwise.
pub fn anomaly_map<T: Scalar>(x: &Image<T>, reconstruction: &Image<T>) -> Result<Image<T>> {
    let a = x.zip_map(reconstruction, |p, q| (p - q).abs())?;
    a.ensure_finite("anomaly map")?;
    Ok(a)
}

/// Per-image min-max rescale to `[0,1]`; a constant map becomes all zeros.
pub fn normalize_map<T: Scalar>(a: &Image<T>) -> Result<Image<T>> {
    a.ensure_finite("anomaly map")?;
    let Some((lo, hi)) = a.min_max() else {
        return Ok(a.clone());
    };
    if hi <= lo {
        return Ok(Image::zeros(a.height(), a.width()));
    }
    let (lo, span) = (lo.f64(), hi.f64() - lo.f64());
    Ok(a.map(|v| T::of((v.f64() - lo) / span)))
}

/// `a_norm ≥ threshold`.
pub fn binarize_map<T: Scalar>(a_norm: &Image<T>, threshold: f64) -> Result<Mask> {
    check_threshold(threshold)?;
    a_norm.ensure_finite("normalized map")?;
    let bits = a_norm.as_slice().iter().map(|v| v.f64() >= threshold).collect();
    Mask::from_bits(a_norm.height(), a_norm.width(), bits)
}

/// Map, normalization, mask and confidence from an input and its
/// reconstruction.
pub fn assemble_result<T: Scalar>(
    x: &Image<T>,
    reconstruction: Image<T>,
    confidence: f64,
    config: DetectConfig,
) -> Result<AnomalyResult<T>> {
    let raw_map = anomaly_map(x, &reconstruction)?;
    let normalized_map = normalize_map(&raw_map)?;
    let mask = binarize_map(&normalized_map, config.threshold)?;
    Ok(AnomalyResult { reconstruction, raw_map, normalized_map, mask, confidence, config })
}

/// `p(h | x, n = 1)` for each image.
pub fn healthy_confidence<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    classifier: &C,
    xs: &[Image<T>],
) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    Ok(classifier.log_probs(xs, 1)?.into_iter().map(|lp| lp[0].f64().exp()).collect())
}

/// Batched [`detect`].
pub fn detect_batch<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    xs: &[Image<T>],
    config: &DetectConfig,
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    classifier: &C,
    s: &NoiseSchedule,
) -> Result<Vec<AnomalyResult<T>>> {
    config.validate(s)?;
    for x in xs {
        check_unit_range(x)?;
    }
    let latents = encode_levels(xs, &[config.noise_level], denoiser, s)?.remove(0);
    let recon = decode_batch(&latents, config.noise_level, denoiser, Some(classifier), &config.guidance, s)?;
    let conf = healthy_confidence(classifier, xs)?;
    xs.iter().zip(recon).zip(conf).map(|((x, r), c)| assemble_result(x, r, c, *config)).collect()
}

/// Encode to level `N`, decode toward the healthy class, and threshold the
/// normalized difference map.
pub fn detect<T: Scalar, C: GuidanceClassifier<T> + ?Sized>(
    x: &Image<T>,
    config: &DetectConfig,
    denoiser: &(impl EpsPredictor<T> + ?Sized),
    classifier: &C,
    s: &NoiseSchedule,
) -> Result<AnomalyResult<T>> {
    Ok(detect_batch(std::slice::from_ref(x), config, denoiser, classifier, s)?.remove(0))
}
