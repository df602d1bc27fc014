//! Body-to-face motion generation.
//!
//! Given a body motion sequence and a facial style reference, the model
//! produces a facial expression sequence that follows the body's content
//! while carrying the reference's style. The crate contains the full
//! pipeline: a small autodiff substrate (`nn`), motion data handling and a
//! synthetic corpus (`motion`), the encoder/generator networks (`model`),
//! the training objective (`losses`), the dual-batch trainer (`trainer`),
//! offline/streaming/style-space inference (`inference`), a FLAME-to-ARKit
//! converter (`flame2arkit`), and evaluation metrics (`evalkit`).

pub mod convert;
pub mod error;
pub mod eval;
pub mod inference;
pub mod losses;
pub mod model;
pub mod motion;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
