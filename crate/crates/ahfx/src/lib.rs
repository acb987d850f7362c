//! File formats, report mining, a rayon executor and the `ahfx` command
//! line on top of `ahfx-core`.

pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod export;
pub mod miner;
pub mod model_io;
pub mod parallel;
pub mod volume_io;

pub use error::{AppError, AppResult};
