//! Kernels and pipelines for three video understanding tasks: multi-stream
//! action recognition with temporal pooling and late fusion, dense event
//! captioning with an attention decoder and self-critical fine-tuning, and
//! spatio-temporal action localization with relation reasoning.
//!
//! Everything runs on [`Tensor`], a dense `f64` array, and trains through the
//! tape in [`autodiff`].

pub mod autodiff;
pub mod backbone;
pub mod captioning;
pub mod conv;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod lstr;
pub mod optim;
pub mod quantization;
pub mod recognition;
pub mod rng;
pub mod tensor;

pub use autodiff::{Graph, ParamTree, Var};
pub use error::{Error, Result};
pub use rng::SplitMix64;
pub use tensor::Tensor;
