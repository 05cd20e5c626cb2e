//! Desk-scale video-to-soundtrack generation.
//!
//! A video clip, a transcript and a short reference recording go in; two
//! synchronized codec token streams (background audio and speech) come out,
//! followed by a flow-matching decoder that maps tokens to waveforms. The
//! crate also carries the evaluation metrics and a synthetic paired-data
//! world used for training and testing.

pub mod aligner;
pub mod curriculum;
pub mod dual_lm;
pub mod error;
pub mod flow_decoder;
pub mod frontend;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod synthdata;

pub use error::{Error, Result};
pub use numerics::{ParamStore, Real, Tensor};
