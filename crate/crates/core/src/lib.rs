//! Lexicon-enhanced sequence labeling with a non-flat lattice.
//!
//! Characters and lexicon-matched words stay in separate sequences. An
//! inter-attention encoder lets every character attend to the matched words
//! (plus a sentence-spanning `<non_word>` entry) using head/tail relative
//! offsets, a self-attention encoder then models character context, and a
//! linear-chain CRF decodes labels. A flat-lattice baseline, which appends
//! the words to the character sequence and runs full self-attention over
//! both, exists for cost comparisons.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision.

pub mod attention;
pub mod autodiff;
pub mod batch;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod context;
pub mod crf;
pub mod data;
pub mod error;
pub mod flat;
pub mod gradcheck;
pub mod infer;
pub mod interformer;
pub mod lexicon;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};

pub type Tensor64 = tensor::Tensor<f64>;
pub type Tensor32 = tensor::Tensor<f32>;
