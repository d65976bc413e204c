//! Convolutional variational autoencoder.
//!
//! The encoder is a stack of stride-2 3x3 convolutions with ReLU, followed by
//! two affine heads producing the latent mean and log-variance. A latent
//! draw `z = mu + exp(logvar / 2) * eps` is mapped back by an affine layer
//! and a mirrored stack of transposed convolutions ending in a sigmoid.
//! Noise `eps` is always supplied by the caller.
//!
//! Everything is generic over [`Real`] so the same code runs in `f32` for
//! training and `f64` for gradient checking.

mod config;
pub mod layers;
mod loss;
mod model;
mod params;

use thiserror::Error;

pub use config::VaeConfig;
pub use layers::Real;
pub use loss::{kl_divergence, loss, recon_l1, LossBreakdown};
pub use model::{
    backward, batch_gradient, decode, encode, forward, reconstruct, reparameterize, sample_loss, ForwardTrace,
    LatentSample,
};
pub use params::{param_layout, ParamKind, ParamSpec, VaeParams};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VaeError {
    #[error("shape mismatch: expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("invalid architecture: {0}")]
    InvalidConfig(String),
}
