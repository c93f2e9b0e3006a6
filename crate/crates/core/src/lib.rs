//! Unsupervised illumination-aware domain adaptation for person
//! re-identification, at desk scale.
//!
//! The pipeline has three steps: pick the synthetic illumination closest to
//! an unlabeled target camera by classifier voting, translate that synthetic
//! domain toward the camera with a regularized cycle-consistent adversarial
//! model, then fine-tune a re-identification embedding on the translated,
//! still-labeled images.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient verification); the aliases below fix the training precision.

pub mod domain_translation;
pub mod error;
pub mod eval;
pub mod illum_inference;
pub mod image;
pub mod nn;
pub mod pipeline;
pub mod reid_model;
pub mod scalar;
pub mod synth_data;
mod train;
pub mod util;

pub use error::{Error, Result};
pub use image::ImageTensor;
pub use scalar::Scalar;
pub use train::{FitReport, TrainConfig};

pub type FeatureExtractorF32 = reid_model::FeatureExtractor<f32>;
pub type IlluminationClassifierF32 = illum_inference::IlluminationClassifier<f32>;
pub type TranslationModelF32 = domain_translation::TranslationModel<f32>;
pub type TensorF32 = nn::Tensor<f32>;
