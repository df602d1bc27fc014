//! Differentiable numeric substrate: tensors, seeded randomness, a
//! reverse-mode tape, the primitive ops the models need, layer modules, and
//! a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod ops;
pub mod rng;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, ParamSet};
pub use graph::{Graph, Var};
pub use layers::{
    random_uniform, Attention, Conv1d, DecoderBlock, EncoderBlock, FftBlock, LayerNorm, Linear,
    ParamModule,
};
pub use rng::{RngSnapshot, RngState};
pub use tensor::Tensor;
