//! Tensor values, raw kernels and the autodiff tape.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod value;

pub use gradcheck::{grad_check, grad_check_report, grad_check_scaled, GradCheckReport, GRAD_CHECK_EPS};
pub use tape::{Elementwise, Function, Gradients, Tape, Var};
pub use value::{ConvSpec, Tensor};
