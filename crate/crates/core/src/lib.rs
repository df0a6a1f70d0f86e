//! Numerical core of the multi-speaker multi-style (MSMS) TTS laboratory.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without `std`: the differentiable tensor library, the audio analysis
//! pipeline, the synthetic corpus generator, the acoustic model and vocoder,
//! the training regimes, and the evaluation statistics. File formats, the CLI
//! and the listening-test service live in the `msms` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod trainer;
pub mod trials;
pub mod vocoder;

pub use error::{Error, Result};
pub use tensor::{Graph, Grads, ParamStore, Scalar, Session, Tensor, Var};
