//! Dense tensors, reverse-mode differentiation, Adam and spectral
//! normalization.

mod adam;
pub mod kernels;
mod params;
mod spectral;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use params::{glorot_uniform, Adam, ParamId, ParamStore, Session};
pub use spectral::{measure_sigma_max, spectral_normalize, SpectralNormState, SIGMA_FLOOR};
pub use tape::{BlockMap, NormGrad, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
