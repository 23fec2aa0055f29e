//! Video layer separation trained on synthetically blended clips, with the
//! data generator, losses, training loop and evaluation harness around it.
//!
//! Numeric code is generic over the scalar type (`f32` or `f64`); the
//! aliases below pin the single-precision variants the CLI runs on.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod evalsuite;
pub mod losses;
pub mod model;
pub mod num;
pub mod tensor;
pub mod train;
pub mod videoio;

pub use error::{Error, Result};
pub use num::Scalar;

/// Single-precision clip, what the tooling reads and writes.
pub type Clip = videoio::VideoClip<f32>;
/// Double-precision clip, used by the exactness tests.
pub type ClipF64 = videoio::VideoClip<f64>;
/// Single-precision layer set.
pub type Layers = model::LayerSet<f32>;
/// The model as trained and shipped.
pub type Model = model::SeparationModel<f32>;
