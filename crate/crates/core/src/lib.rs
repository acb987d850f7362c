//! Allocation-only core of the ahfx pipeline.
//!
//! Everything here is pure computation over in-memory data: voxel-grid
//! volumetry, second-order gradient boosting, exact path-dependent TreeSHAP,
//! ROC evaluation, the grouped cross-validation training protocol, and the
//! analytic phantoms used to verify all of it. File formats, regex-based
//! report mining, thread pools and the command line live in the `ahfx`
//! companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod boost;
pub mod edt;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod grid;
pub mod phantom;
pub mod protocol;
pub mod shap;
pub mod stats;
pub mod table;
pub mod volumetry;

pub use error::{Error, Result};
