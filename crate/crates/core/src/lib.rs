//! Language-free text-to-image generation at desk scale.
//!
//! Stage zero trains a small joint text-image embedding model. Stage one
//! trains a VQ image codec on images only; stage two trains a conditional
//! autoregressive transformer to predict an image's codec tokens from its
//! image embedding. At inference a text embedding takes the image
//! embedding's place.

pub mod checks;
pub mod clipkit;
pub mod congen;
pub mod error;
pub mod numkit;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod synthdata;
pub mod vqcodec;

pub use error::{Error, Result};
