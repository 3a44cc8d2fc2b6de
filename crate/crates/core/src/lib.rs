//! Weakly supervised anomaly localization with denoising diffusion models.
//!
//! A time-conditioned noise predictor and a noisy-image classifier are
//! trained on image-level labels only. An input is encoded deterministically
//! into noise with the reversed DDIM ODE, decoded back while the classifier
//! gradient steers the noise estimate toward the healthy class, and the
//! per-pixel difference between input and reconstruction is the anomaly map.
//!
//! The numeric core is generic over [`Scalar`] (`f32` for training and
//! inference, `f64` for verification); the aliases below name the common
//! instantiations.

pub mod anomaly;
pub mod cli;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod image;
pub mod net;
pub mod oracle;
pub mod scalar;
pub mod schedule;
pub mod selftest;
pub mod train;

pub use error::{CodecError, Error, Result};
pub use image::{Image, Mask};
pub use net::{Architecture, Class, ClassifierNet, DenoiserNet};
pub use scalar::Scalar;
pub use schedule::NoiseSchedule;

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type Denoiser32 = DenoiserNet<f32>;
pub type Denoiser64 = DenoiserNet<f64>;
pub type Classifier32 = ClassifierNet<f32>;
pub type Classifier64 = ClassifierNet<f64>;
