//! Dense tensors, reverse-mode differentiation, masked attention, losses,
//! the Adam optimizer, learning-rate schedules and a finite-difference
//! gradient checker.

mod attention;
mod gradcheck;
mod graph;
mod loss;
pub mod nn;
mod optim;
mod params;
mod real;
mod schedule;
mod tensor;

pub use attention::{attention_weights, masked_attention, AttentionMask, MaskKind};
pub use gradcheck::{grad_check, GradCheckReport, MAX_COORDS_PER_PARAM};
pub use graph::{Gradients, Graph, Var, MASK_FILL};
pub use loss::cross_entropy;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use schedule::cosine_lr;
pub use tensor::Tensor;
