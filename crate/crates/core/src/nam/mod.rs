//! The additive model with tabular shape functions, optional pairwise
//! interactions, and an image head over latent codes.

mod model;
mod train;

pub use model::{Interaction, LatentScaler, Link, NaimModel, TermMeans};
pub use train::{train, train_on_dataset, train_with, NaimData, TrainConfig, TrainLog};
