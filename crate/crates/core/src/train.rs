//! Seeded training loops for the denoiser and the noisy-image classifier.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffusion::{denoiser_loss_and_grads, forward_jump};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{
    adam_step, log_softmax2, AdamConfig, Architecture, Class, ClassifierNet, DenoiserNet, OptimizerState,
};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { iterations: 10_000, batch_size: 32, learning_rate: 1e-4, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("iterations and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Per-iteration scalar series, e.g. batch loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub values: Vec<f64>,
}

impl Trace {
    /// Trailing moving average ending at 1-based `iteration`.
    pub fn smoothed_at(&self, iteration: usize, window: usize) -> Option<f64> {
        if iteration == 0 || iteration > self.values.len() || window == 0 {
            return None;
        }
        let lo = iteration.saturating_sub(window);
        let slice = &self.values[lo..iteration];
        Some(slice.iter().sum::<f64>() / slice.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{v}", i + 1);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// A trained model with its loss trace and, for classifiers, the batch
/// accuracy trace.
#[derive(Clone, Debug)]
pub struct Trained<M> {
    pub model: M,
    pub loss: Trace,
    pub accuracy: Option<Trace>,
}

fn check_images<T: Scalar>(images: &[&Image<T>], arch: &Architecture, s: &NoiseSchedule) -> Result<()> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if arch.t_max != s.t_max() {
        return Err(Error::InvalidArgument(format!(
            "architecture t_max {} differs from schedule t_max {}",
            arch.t_max,
            s.t_max()
        )));
    }
    for x in images {
        if x.shape() != (arch.height, arch.width) {
            return Err(Error::shape(&[arch.height, arch.width], &[x.height(), x.width()]));
        }
        if x.as_slice().iter().any(|v| !(v.f64() >= 0.0 && v.f64() <= 1.0)) {
            return Err(Error::InvalidArgument("training images must lie in [0,1]".into()));
        }
    }
    Ok(())
}

fn gaussian<T: Scalar, R: Rng>(rng: &mut R, h: usize, w: usize) -> Image<T> {
    Image::from_fn(h, w, |_, _| T::of(rng.sample::<f64, _>(StandardNormal)))
}

/// Draws `(indices, steps)` for one batch.
fn draw_batch<R: Rng>(rng: &mut R, len: usize, batch: usize, t_max: usize) -> (Vec<usize>, Vec<usize>) {
    let idx: Vec<usize> = (0..batch).map(|_| rng.random_range(0..len)).collect();
    let steps: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=t_max)).collect();
    (idx, steps)
}

fn rngs(seed: u64) -> (u64, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = rng.random::<u64>();
    (init, rng)
}

/// Minimizes the simplified ε-prediction loss with Adam.
pub fn train_denoiser<T: Scalar>(
    images: &[Image<T>],
    s: &NoiseSchedule,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<Trained<DenoiserNet<T>>> {
    cfg.validate()?;
    check_images(&images.iter().collect::<Vec<_>>(), &arch, s)?;
    let (init, mut rng) = rngs(cfg.seed);
    let mut model = DenoiserNet::new(arch, init)?;
    let mut opt = OptimizerState::new(model.params(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut trace = Trace::default();
    for it in 0..cfg.iterations {
        let (idx, steps) = draw_batch(&mut rng, images.len(), cfg.batch_size, s.t_max());
        let x0s: Vec<Image<T>> = idx.iter().map(|&i| images[i].clone()).collect();
        let eps: Vec<Image<T>> = (0..cfg.batch_size).map(|_| gaussian(&mut rng, arch.height, arch.width)).collect();
        let (loss, grads) = denoiser_loss_and_grads(&model, &x0s, &steps, &eps, s)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("denoiser loss at iteration {}", it + 1)));
        }
        adam_step(model.params_mut(), &grads, &mut opt)?;
        trace.values.push(loss);
    }
    Ok(Trained { model, loss: trace, accuracy: None })
}

/// Cross-entropy training on images noised to a uniformly drawn level.
pub fn train_classifier<T: Scalar>(
    samples: &[(Image<T>, Class)],
    s: &NoiseSchedule,
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<Trained<ClassifierNet<T>>> {
    cfg.validate()?;
    check_images(&samples.iter().map(|(x, _)| x).collect::<Vec<_>>(), &arch, s)?;
    let healthy = samples.iter().filter(|(_, c)| *c == Class::Healthy).count();
    if healthy == 0 || healthy == samples.len() {
        return Err(Error::SingleClassDataset);
    }
    let (init, mut rng) = rngs(cfg.seed);
    let mut model = ClassifierNet::new(arch, init)?;
    let mut opt = OptimizerState::new(model.params(), AdamConfig::with_learning_rate(cfg.learning_rate));
    let mut loss_trace = Trace::default();
    let mut acc_trace = Trace::default();
    let b = cfg.batch_size;
    let inv_b = 1.0 / b as f64;
    for it in 0..cfg.iterations {
        let (idx, steps) = draw_batch(&mut rng, samples.len(), b, s.t_max());
        let mut xs = Vec::with_capacity(b);
        for (&i, &n) in idx.iter().zip(&steps) {
            let eps = gaussian(&mut rng, arch.height, arch.width);
            xs.push(forward_jump(&samples[i].0, n, &eps, s)?);
        }
        let rec = model.record(&xs, &steps, false)?;
        let mut seed = Vec::with_capacity(2 * b);
        let (mut loss, mut correct) = (0.0, 0usize);
        for (c, &i) in rec.output().chunks(2).zip(&idx) {
            let label = samples[i].1.index();
            let lp = log_softmax2([c[0], c[1]]);
            loss -= lp[label].f64();
            let pred = if lp[1] > lp[0] { 1 } else { 0 };
            correct += (pred == label) as usize;
            for (k, l) in lp.iter().enumerate() {
                let onehot = if k == label { 1.0 } else { 0.0 };
                seed.push(T::of((l.f64().exp() - onehot) * inv_b));
            }
        }
        loss *= inv_b;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("classifier loss at iteration {}", it + 1)));
        }
        let grads = model.backprop(&rec, &seed)?;
        adam_step(model.params_mut(), &grads, &mut opt)?;
        loss_trace.values.push(loss);
        acc_trace.values.push(correct as f64 * inv_b);
    }
    Ok(Trained { model, loss: loss_trace, accuracy: Some(acc_trace) })
}

/// Predicted class from `[log p(h), log p(d)]`; ties go to healthy.
pub fn predicted_class<T: Scalar>(log_probs: [T; 2]) -> Class {
    if log_probs[1] > log_probs[0] {
        Class::Diseased
    } else {
        Class::Healthy
    }
}

/// Fraction of `samples` classified correctly at step `n`.
pub fn accuracy<T: Scalar>(model: &ClassifierNet<T>, samples: &[(Image<T>, Class)], n: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0;
    for chunk in samples.chunks(64) {
        let xs: Vec<Image<T>> = chunk.iter().map(|(x, _)| x.clone()).collect();
        let lps = model.log_probs(&xs, &vec![n; xs.len()])?;
        correct += lps.iter().zip(chunk).filter(|(lp, (_, c))| predicted_class(**lp) == *c).count();
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_arch(t_max: usize) -> Architecture {
        Architecture { height: 1, width: 1, base_width: 4, deep_width: 4, time_dim: 8, t_max }
    }

    fn short(seed: u64) -> TrainConfig {
        TrainConfig { iterations: 30, batch_size: 4, learning_rate: 1e-3, seed }
    }

    #[test]
    fn rejects_bad_datasets() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        let a = tiny_arch(10);
        assert!(matches!(train_denoiser::<f32>(&[], &s, a, &short(0)), Err(Error::EmptyDataset)));
        let one: Vec<(Image<f32>, Class)> = vec![(Image::filled(1, 1, 0.5), Class::Healthy); 3];
        assert!(matches!(train_classifier(&one, &s, a, &short(0)), Err(Error::SingleClassDataset)));
        let out_of_range = vec![Image::<f32>::filled(1, 1, 1.5)];
        assert!(train_denoiser(&out_of_range, &s, a, &short(0)).is_err());
        let wrong_t = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
        assert!(train_denoiser(&[Image::<f32>::filled(1, 1, 0.5)], &wrong_t, a, &short(0)).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let s = NoiseSchedule::linear(10, 1e-3, 0.2).unwrap();
        let a = tiny_arch(10);
        let data: Vec<Image<f32>> = (0..5).map(|i| Image::filled(1, 1, i as f32 / 5.0)).collect();
        let r1 = train_denoiser(&data, &s, a, &short(7)).unwrap();
        let r2 = train_denoiser(&data, &s, a, &short(7)).unwrap();
        assert_eq!(r1.model, r2.model);
        assert_eq!(r1.loss, r2.loss);
        let r3 = train_denoiser(&data, &s, a, &short(8)).unwrap();
        assert_ne!(r1.model, r3.model);

        let labeled: Vec<(Image<f32>, Class)> =
            data.iter().enumerate().map(|(i, x)| (x.clone(), Class::from_index(i % 2).unwrap())).collect();
        let c1 = train_classifier(&labeled, &s, a, &short(3)).unwrap();
        let c2 = train_classifier(&labeled, &s, a, &short(3)).unwrap();
        assert_eq!(c1.model, c2.model);
        assert_eq!(c1.accuracy, c2.accuracy);
    }

    #[test]
    fn trace_csv_and_smoothing() {
        let t = Trace { values: vec![1.0, 2.0, 3.0, 4.0] };
        assert_eq!(t.to_csv(), "iteration,value\n1,1\n2,2\n3,3\n4,4\n");
        assert_eq!(t.smoothed_at(4, 2), Some(3.5));
        assert_eq!(t.smoothed_at(2, 10), Some(1.5));
        assert_eq!(t.smoothed_at(5, 2), None);
    }
}
