//! Domain-adaptive encoder-decoder segmentation.
//!
//! A small reverse-mode autodiff engine ([`tensor`]) drives a U-Net style
//! segmentation network ([`nn`]) trained with multi-level encoder feature
//! alignment (MMD, CORAL, DANN) or with an auxiliary reconstruction decoder
//! (Y-Net), see [`losses`] and [`train`]. [`data`] provides volumes and
//! synthetic domain-shifted pairs; [`eval`] scores and reports results.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod nn;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use par::Exec;
pub use tensor::{ConvSpec, Gradients, Tape, Tensor, Var};
