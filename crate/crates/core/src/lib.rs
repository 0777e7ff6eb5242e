//! Single-image generative modelling with a multi-scale upscaling network,
//! trained without adversarial losses.

pub mod error;
pub mod imaging;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod objective;
pub mod pretrained;
pub mod tasks;
pub mod trainer;
pub mod warp;

pub use error::{Error, FieldError, Result};
pub use imaging::{load_image, save_image, Dims, Image, ImagePyramid, PyramidLadder, PyramidSpec};
pub use model::{ConditionSource, LatentCode, Mode, ModelBundle, ModelConfig};
