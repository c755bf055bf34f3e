//! Image codec: the encoder/decoder pair that maps images to latent codes
//! and back, and attribute-direction extraction in latent space.

mod autoencoder;
mod direction;
mod image;
mod latent;

pub use autoencoder::{train_autoencoder, train_autoencoder_with, AutoencoderConfig, AutoencoderLog, AutoencoderModel, ConvLayer, MIN_TRAIN_IMAGES};
pub use direction::{attribute_direction, DIRECTION_L2};
pub use image::Image;
pub use latent::LatentCode;
