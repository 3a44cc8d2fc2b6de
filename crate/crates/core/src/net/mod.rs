//! Differentiable network substrate.

pub mod adam;
pub mod arch;
pub mod embed;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod unet;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use arch::Architecture;
pub use params::{ParamBlock, ParamGrads, ParamSet};
pub use tape::{NodeId, Tape, TapeGrads};
pub use tensor::Tensor;
pub use unet::{log_softmax2, Class, ClassifierNet, DenoiserNet, Recording};

use crate::error::Result;
use crate::image::Image;
use crate::scalar::Scalar;

/// Anything that predicts the noise component of a batch of images at a
/// shared step index.
pub trait EpsPredictor<T: Scalar> {
    fn predict_eps(&self, xs: &[Image<T>], n: usize) -> Result<Vec<Image<T>>>;
}

/// Source of class log-probabilities and their input gradients.
pub trait GuidanceClassifier<T: Scalar> {
    fn log_probs(&self, xs: &[Image<T>], n: usize) -> Result<Vec<[T; 2]>>;
    fn log_prob_grad(&self, xs: &[Image<T>], n: usize, class: Class) -> Result<Vec<Image<T>>>;
}

impl<T: Scalar> EpsPredictor<T> for DenoiserNet<T> {
    fn predict_eps(&self, xs: &[Image<T>], n: usize) -> Result<Vec<Image<T>>> {
        self.forward(xs, &vec![n; xs.len()])
    }
}

impl<T: Scalar> GuidanceClassifier<T> for ClassifierNet<T> {
    fn log_probs(&self, xs: &[Image<T>], n: usize) -> Result<Vec<[T; 2]>> {
        ClassifierNet::log_probs(self, xs, &vec![n; xs.len()])
    }

    fn log_prob_grad(&self, xs: &[Image<T>], n: usize, class: Class) -> Result<Vec<Image<T>>> {
        self.input_log_prob_gradient(xs, &vec![n; xs.len()], class)
    }
}

/// Adapts a per-image closure `f(x, n) -> ε̂` into an [`EpsPredictor`].
pub struct PerImage<F>(pub F);

impl<T: Scalar, F: Fn(&Image<T>, usize) -> Image<T>> EpsPredictor<T> for PerImage<F> {
    fn predict_eps(&self, xs: &[Image<T>], n: usize) -> Result<Vec<Image<T>>> {
        Ok(xs.iter().map(|x| (self.0)(x, n)).collect())
    }
}
