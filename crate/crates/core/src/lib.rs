//! Multi-task neural toolkit: an LM-style knowledge graph triple classifier,
//! a fine-grained entity typer and an LSTM language model, trained jointly
//! through aliased parameters.
//!
//! The crate is `no_std` and only needs `alloc`. Everything runs on a small
//! tape-based reverse-mode differentiation engine ([`tape`]) that is generic
//! over the scalar type, so the same model code trains in `f32` and is
//! gradient-checked in `f64`.
#![cfg_attr(not(test), no_std)]
#![deny(missing_debug_implementations)]

extern crate alloc;

pub mod blocks;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod joint;
pub mod kge;
pub mod lm;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod real;
pub mod rng;
pub mod synth;
#[cfg(test)]
mod testing;
pub mod tape;
pub mod tensor;
pub mod typer;
pub mod vocab;

pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
