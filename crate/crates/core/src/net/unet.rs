//! Time-conditioned noise predictor and noisy-image classifier.
//!
//! Both networks share the encoder layout: a full-resolution stage, two
//! stride-2 stages, and a bottleneck, each followed by an additive
//! projection of the time embedding and a SiLU. The denoiser adds a mirrored
//! decoder with skip concatenation; the classifier pools the bottleneck and
//! applies a linear head producing (healthy, diseased) logits.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

use super::arch::Architecture;
use super::embed::sinusoidal;
use super::params::{ParamGrads, ParamSet};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Image-level label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Healthy,
    Diseased,
}

impl Class {
    pub fn index(self) -> usize {
        match self {
            Class::Healthy => 0,
            Class::Diseased => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Class::Healthy),
            1 => Ok(Class::Diseased),
            other => Err(Error::InvalidClass(other.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Healthy => "healthy",
            Class::Diseased => "diseased",
        }
    }
}

impl FromStr for Class {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "h" | "healthy" | "0" => Ok(Class::Healthy),
            "d" | "diseased" | "1" => Ok(Class::Diseased),
            other => Err(Error::InvalidClass(other.to_string())),
        }
    }
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const ENCODER_STAGES: [(&str, usize); 4] = [("in", 1), ("down1", 2), ("down2", 2), ("mid", 1)];

fn push_stage<R: rand::Rng, T: Scalar>(
    p: &mut ParamSet<T>,
    name: &str,
    cout: usize,
    cin: usize,
    time_dim: usize,
    rng: &mut R,
) {
    p.push_uniform(&format!("{name}.w"), &[cout, cin, 3, 3], cin * 9, rng);
    p.push_zeros(&format!("{name}.b"), &[cout]);
    p.push_uniform(&format!("{name}.t.w"), &[cout, time_dim], time_dim, rng);
    p.push_zeros(&format!("{name}.t.b"), &[cout]);
}

fn build_encoder<R: rand::Rng, T: Scalar>(arch: &Architecture, rng: &mut R) -> ParamSet<T> {
    let (c1, c2, td) = (arch.base_width, arch.deep_width, arch.time_dim);
    let mut p = ParamSet::new();
    p.push_uniform("time.w", &[td, td], td, rng);
    p.push_zeros("time.b", &[td]);
    push_stage(&mut p, "in", c1, 1, td, rng);
    push_stage(&mut p, "down1", c2, c1, td, rng);
    push_stage(&mut p, "down2", c2, c2, td, rng);
    push_stage(&mut p, "mid", c2, c2, td, rng);
    p
}

/// Node ids of the parameters recorded for one forward pass.
struct Bound<'a, T> {
    set: &'a ParamSet<T>,
    ids: Vec<NodeId>,
}

impl<T: Scalar> Bound<'_, T> {
    fn id(&self, name: &str) -> Result<NodeId> {
        self.set
            .index_of(name)
            .map(|i| self.ids[i])
            .ok_or_else(|| Error::Invariant(format!("missing parameter block {name}")))
    }

    fn stage(&self, tape: &mut Tape<T>, x: NodeId, name: &str, stride: usize, temb: NodeId) -> Result<NodeId> {
        let h = tape.conv(x, self.id(&format!("{name}.w"))?, self.id(&format!("{name}.b"))?, stride)?;
        let t = tape.linear(temb, self.id(&format!("{name}.t.w"))?, self.id(&format!("{name}.t.b"))?)?;
        let h = tape.add_channels(h, t)?;
        Ok(tape.silu(h))
    }
}

struct EncoderOut {
    temb: NodeId,
    full: NodeId,
    half: NodeId,
    bottleneck: NodeId,
}

/// A recorded forward pass, ready for [`Tape::backward`].
pub struct Recording<T> {
    pub tape: Tape<T>,
    pub input: NodeId,
    pub output: NodeId,
}

impl<T: Scalar> Recording<T> {
    pub fn output(&self) -> &[T] {
        self.tape.value(self.output).data()
    }
}

fn check_inputs<T: Scalar>(arch: &Architecture, xs: &[Image<T>], steps: &[usize]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if xs.len() != steps.len() {
        return Err(Error::shape(&[xs.len()], &[steps.len()]));
    }
    for x in xs {
        if x.shape() != (arch.height, arch.width) {
            return Err(Error::shape(&[arch.height, arch.width], &[x.height(), x.width()]));
        }
    }
    for &n in steps {
        if n == 0 || n > arch.t_max {
            return Err(Error::StepOutOfRange { n, lo: 1, hi: arch.t_max });
        }
    }
    Ok(())
}

fn record_encoder<'a, T: Scalar>(
    arch: &Architecture,
    params: &'a ParamSet<T>,
    tape: &mut Tape<T>,
    xs: &[Image<T>],
    steps: &[usize],
    input_grad: bool,
) -> Result<(Bound<'a, T>, NodeId, EncoderOut)> {
    check_inputs(arch, xs, steps)?;
    let (h, w, td) = (arch.height, arch.width, arch.time_dim);
    let mut pixels = Vec::with_capacity(xs.len() * h * w);
    for x in xs {
        pixels.extend_from_slice(x.as_slice());
    }
    let input = tape.input(Tensor::from_vec(&[xs.len(), 1, h, w], pixels)?, input_grad);
    let feats: Vec<T> = steps.iter().flat_map(|&n| sinusoidal(n, td)).map(T::of).collect();
    let feats = tape.input(Tensor::from_vec(&[xs.len(), td], feats)?, false);
    let bound = Bound { set: params, ids: params.record(tape)? };
    let temb = tape.linear(feats, bound.id("time.w")?, bound.id("time.b")?)?;
    let temb = tape.silu(temb);
    let mut cur = input;
    let mut outs = [input; 4];
    for (i, (name, stride)) in ENCODER_STAGES.iter().enumerate() {
        cur = bound.stage(tape, cur, name, *stride, temb)?;
        outs[i] = cur;
    }
    Ok((bound, input, EncoderOut { temb, full: outs[0], half: outs[1], bottleneck: outs[3] }))
}

fn unbatch<T: Scalar>(data: &[T], h: usize, w: usize) -> Result<Vec<Image<T>>> {
    data.chunks(h * w).map(|c| Image::from_vec(h, w, c.to_vec())).collect()
}

/// `ε_θ(x_n, n)`: predicts the noise in a noised image.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserNet<T> {
    arch: Architecture,
    params: ParamSet<T>,
}

impl<T: Scalar> DenoiserNet<T> {
    /// Fresh network; the output layer starts at zero so the untrained
    /// model predicts `ε̂ = 0`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = build_encoder::<_, T>(&arch, &mut rng);
        let (c1, c2, td) = (arch.base_width, arch.deep_width, arch.time_dim);
        push_stage(&mut params, "up1", c1, 2 * c2, td, &mut rng);
        params.push_zeros("out.w", &[1, 2 * c1, 3, 3]);
        params.push_zeros("out.b", &[1]);
        Ok(Self { arch, params })
    }

    pub fn from_parts(arch: Architecture, params: ParamSet<T>) -> Result<Self> {
        arch.validate()?;
        let reference = Self::new(arch, 0)?;
        reference.params.ensure_compatible(&params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> DenoiserNet<U> {
        DenoiserNet { arch: self.arch, params: self.params.cast() }
    }

    /// Records a batched forward pass with a step index per sample.
    pub fn record(&self, xs: &[Image<T>], steps: &[usize], input_grad: bool) -> Result<Recording<T>> {
        let mut tape = Tape::new();
        let (p, input, enc) = record_encoder(&self.arch, &self.params, &mut tape, xs, steps, input_grad)?;
        let half = tape.value(enc.half).dims4()?;
        let up = tape.resize(enc.bottleneck, half[2], half[3])?;
        let up = tape.concat(up, enc.half)?;
        let up = p.stage(&mut tape, up, "up1", 1, enc.temb)?;
        let full = tape.value(enc.full).dims4()?;
        let up = tape.resize(up, full[2], full[3])?;
        let up = tape.concat(up, enc.full)?;
        let output = tape.conv(up, p.id("out.w")?, p.id("out.b")?, 1)?;
        Ok(Recording { tape, input, output })
    }

    /// Batched `ε_θ(x_i, n_i)`.
    pub fn forward(&self, xs: &[Image<T>], steps: &[usize]) -> Result<Vec<Image<T>>> {
        let rec = self.record(xs, steps, false)?;
        unbatch(rec.output(), self.arch.height, self.arch.width)
    }

    pub fn forward_one(&self, x: &Image<T>, n: usize) -> Result<Image<T>> {
        Ok(self.forward(std::slice::from_ref(x), &[n])?.remove(0))
    }

    /// Parameter and input gradients of `<seed, output>`.
    pub fn backprop(&self, rec: &Recording<T>, seed: &[T]) -> Result<(ParamGrads<T>, Option<Vec<T>>)> {
        let g = rec.tape.backward(rec.output, seed)?;
        let input = g.of(rec.input).map(|v| v.to_vec());
        Ok((ParamGrads(g.into_param_grads(&self.params.sizes())), input))
    }
}

/// `p_C(c | x_n, n)`: the encoder path plus a pooled linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet<T> {
    arch: Architecture,
    params: ParamSet<T>,
}

/// Numerically stable `[log p(h), log p(d)]` from two logits.
pub fn log_softmax2<T: Scalar>(logits: [T; 2]) -> [T; 2] {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    [logits[0] - lse, logits[1] - lse]
}

impl<T: Scalar> ClassifierNet<T> {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = build_encoder::<_, T>(&arch, &mut rng);
        params.push_uniform("head.w", &[2, arch.deep_width], arch.deep_width, &mut rng);
        params.push_zeros("head.b", &[2]);
        Ok(Self { arch, params })
    }

    pub fn from_parts(arch: Architecture, params: ParamSet<T>) -> Result<Self> {
        arch.validate()?;
        let reference = Self::new(arch, 0)?;
        reference.params.ensure_compatible(&params)?;
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Scalar>(&self) -> ClassifierNet<U> {
        ClassifierNet { arch: self.arch, params: self.params.cast() }
    }

    /// Records a forward pass whose output is `[batch, 2]` logits.
    pub fn record(&self, xs: &[Image<T>], steps: &[usize], input_grad: bool) -> Result<Recording<T>> {
        let mut tape = Tape::new();
        let (p, input, enc) = record_encoder(&self.arch, &self.params, &mut tape, xs, steps, input_grad)?;
        let pooled = tape.mean_pool(enc.bottleneck)?;
        let output = tape.linear(pooled, p.id("head.w")?, p.id("head.b")?)?;
        Ok(Recording { tape, input, output })
    }

    pub fn logits(&self, xs: &[Image<T>], steps: &[usize]) -> Result<Vec<[T; 2]>> {
        let rec = self.record(xs, steps, false)?;
        Ok(rec.output().chunks(2).map(|c| [c[0], c[1]]).collect())
    }

    /// `[log p(h), log p(d)]` per sample.
    pub fn log_probs(&self, xs: &[Image<T>], steps: &[usize]) -> Result<Vec<[T; 2]>> {
        Ok(self.logits(xs, steps)?.into_iter().map(log_softmax2).collect())
    }

    pub fn log_probs_one(&self, x: &Image<T>, n: usize) -> Result<[T; 2]> {
        Ok(self.log_probs(std::slice::from_ref(x), &[n])?[0])
    }

    /// `∇_x log p_C(class | x_i, n_i)` per sample.
    pub fn input_log_prob_gradient(&self, xs: &[Image<T>], steps: &[usize], class: Class) -> Result<Vec<Image<T>>> {
        let rec = self.record(xs, steps, true)?;
        let mut seed = Vec::with_capacity(xs.len() * 2);
        for c in rec.output().chunks(2) {
            let lp = log_softmax2([c[0], c[1]]);
            for (k, l) in lp.iter().enumerate() {
                let target = if k == class.index() { T::one() } else { T::zero() };
                seed.push(target - l.exp());
            }
        }
        let g = rec.tape.backward(rec.output, &seed)?;
        let grad = g.of(rec.input).ok_or_else(|| Error::Invariant("input gradient missing".into()))?;
        unbatch(grad, self.arch.height, self.arch.width)
    }

    pub fn input_gradient_one(&self, x: &Image<T>, n: usize, class: Class) -> Result<Image<T>> {
        Ok(self.input_log_prob_gradient(std::slice::from_ref(x), &[n], class)?.remove(0))
    }

    pub fn backprop(&self, rec: &Recording<T>, seed: &[T]) -> Result<ParamGrads<T>> {
        let g = rec.tape.backward(rec.output, seed)?;
        Ok(ParamGrads(g.into_param_grads(&self.params.sizes())))
    }
}
