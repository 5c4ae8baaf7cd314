//! Backprop-free deep generative learning.
//!
//! A chain-structured directed model `p(x, h) = p(x | h1) p(h1 | h2) ... p(hM)`
//! is paired with feedforward recognition maps. Latent states are improved
//! iteratively with the difference-targetprop update `f(x) - f(g(h))`, and
//! every layer is trained on purely local denoising reconstruction losses.
//!
//! - [`model`]: layer maps, priors, forward/feedback passes, joint log-likelihood
//! - [`inference`]: targetprop inference, including the clamped (in-painting) form
//! - [`training`]: corruption operators, local updates, the training loop, prior fitting
//! - [`generation`]: directed, refined and joint-DAE-chain samplers, PGM output
//! - [`eval`]: Parzen-window log-likelihood
//! - [`stdp`]: the spike-timing weight-change simulation
//! - [`data`], [`checkpoint`], [`config`]: file formats and run configuration
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod activation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod generation;
pub mod inference;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod stdp;
pub mod training;

pub use activation::{sigmoid, softplus, Activation};
pub use error::{Error, Result};
pub use inference::{
    infer, infer_batch, infer_clamped, infer_clamped_batch, inpaint_batch, targetprop_delta, InferenceConfig,
    InferenceTrace, Inpainting, VisibilityMask,
};
pub use model::{
    feedback_pass, feedforward_pass, joint_log_likelihood, Architecture, GaussianPrior, LatentBatch, LatentState,
    LayerMap, LayerPair, NetworkParams,
};
pub use rng::{gaussian_noise, RandomSource};
pub use scalar::Scalar;
pub use training::{corrupt, fit_top_prior, train, CorruptionSpec, TrainConfig, TrainMetrics};

pub type Network = NetworkParams<f64>;
pub type Network32 = NetworkParams<f32>;
pub type Latent = LatentState<f64>;
pub type Latents = LatentBatch<f64>;
pub type Prior = GaussianPrior<f64>;
pub type Layer = LayerPair<f64>;
pub type Mnist = data::Dataset<f64>;
