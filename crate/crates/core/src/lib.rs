//! Image forgery localization with three attention U-Nets, a learnable
//! fusion layer and information-theoretic training constraints.

pub mod backbones;
pub mod datagen;
pub mod dataset;
mod error;
pub mod fusion;
pub mod layers;
pub mod model;
pub mod objectives;
pub mod params;
pub mod pipeline;
pub mod reasoning;
pub mod types;

pub use error::{Error, Result};
pub use forgeloc_tensor as tensor;
pub use model::{ForgeryModel, ModelConfig, ObjectiveConfig};
pub use types::{ForgeryMask, ImagePatch, PixelProbMap};
pub mod theory;
pub mod metrics;
