//! Motion-representation core: the persistence-of-appearance (PA) motion cue,
//! various-timescale aggregation pooling (VAP), a desk-scale PAN model with
//! hand-written backward passes, and a Horn–Schunck optical-flow baseline.
//!
//! The crate is `no_std` and needs only `alloc`. Enable the `std` feature to
//! use the platform's float routines instead of `libm`.
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod backbone;
mod error;
pub mod flow;
pub mod gradcheck;
pub mod gradsuite;
mod init;
pub mod loss;
pub mod model;
pub mod ops;
pub mod pa;
mod param;
pub mod sampler;
mod scalar;
mod tensor;
pub mod train;
pub mod vap;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheck};
pub use param::{Param, ParamId, ParamSet, Sgd};
pub use scalar::Scalar;
pub use tensor::Tensor;
