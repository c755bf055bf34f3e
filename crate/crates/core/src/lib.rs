//! Neural additive image models.
//!
//! An additive regression model over tabular features whose image covariate
//! enters through the latent code of a trained autoencoder. Image effects are
//! read off by decoding latent interpolations and attribute manipulations and
//! pairing each decoded image with the image head's prediction.

pub mod bench;
pub mod cli;
pub mod codec;
pub mod diffcore;
pub mod error;
pub mod lens;
pub mod nam;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
