//! Speech enhancement by STFT-magnitude masking, conditioned on a
//! frame-level noise embedding drawn from a small bank of trainable noise
//! templates.

pub mod datakit;
pub mod dnat;
pub mod dsp;
pub mod enhancer;
pub mod error;
pub mod evalkit;
pub mod layers;
pub mod runner;
pub mod tensor;
pub mod tokens;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
