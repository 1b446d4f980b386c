//! Core of `rfloop`: a small CNN engine for raw I/Q classification with a
//! bit-exact fixed-point inference path, a native trainer, a synthetic RF
//! signal generator and an HLS-style latency/resource cost model.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! anything touching the OS live in the `rfloop` crate.

#![no_std]
// `!(x > 0.0)` is the NaN-rejecting check, and index loops walk several
// parallel buffers at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod dse;
pub mod fixed;
pub mod fxp;
pub mod infer;
pub mod model;
pub mod ops;
pub mod siggen;
pub mod tensor;
pub mod train;

use core::fmt::Debug;

/// Floating-point element type used by the float pipeline (`f32` or `f64`).
pub trait Real: num_traits::Float + Default + Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

pub use fxp::{FxpFormat, FxpWord};
pub use model::{LayerSpec, ModelError, ModelSpec, Params, WeightSet};
pub use tensor::{Shape, Tensor};
