//! Audio super-resolution with a spectral U-Net whose encoder levels are
//! selective state-space (Mamba) blocks, trained adversarially against a
//! multi-scale waveform discriminator.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod infer;
pub mod kernels;
pub mod model;
pub mod scalar;
pub mod ssm;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type AudioBufferF32 = dsp::AudioBuffer<f32>;
pub type AudioBufferF64 = dsp::AudioBuffer<f64>;
pub type TensorF32 = autodiff::Tensor<f32>;
pub type TensorF64 = autodiff::Tensor<f64>;
pub type SsmParamsF32 = ssm::SsmParams<f32>;
pub type SsmParamsF64 = ssm::SsmParams<f64>;
pub type GeneratorF32 = model::Generator<f32>;
pub type GeneratorF64 = model::Generator<f64>;
pub type DiscriminatorF32 = model::Discriminator<f32>;
