//! Latent-diffusion inverse problem solvers with prompt tuning and
//! encoder-range projection, plus the pixel- and latent-space baselines they
//! are compared against.
//!
//! Everything is dense `f64` and small enough that every gradient, adjoint
//! and posterior can be checked against an exact oracle.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adam;
pub mod codec;
pub mod diffmap;
pub mod error;
pub mod harness;
pub mod operators;
pub mod proximal;
pub mod score;
pub mod solvers;
pub mod vecops;

pub use error::{Error, Result};
