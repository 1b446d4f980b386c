//! File formats and the `rfloop` command-line tool.
//!
//! Three independent on-disk formats, all little-endian with no
//! native-size fields:
//!
//! * RFDS datasets ([`rfds`]),
//! * TOML model manifests describing the architecture ([`manifest`]),
//! * RFLW weight blobs holding float or fixed-point parameters ([`blob`]).
//!
//! A manifest and a blob form a model ([`store`]); the blob records the
//! SHA-256 of the manifest it was written against so mismatched pairs refuse
//! to load. [`bram`] renders one layer's fixed-point parameters as the raw
//! word image a hardware weight BRAM would hold.

pub mod blob;
pub mod bram;
pub mod cli;
mod error;
pub mod manifest;
pub mod rfds;
pub mod store;
mod wire;

pub use error::FormatError;
pub use rfloop_core;
