//! End-to-end neural speaker diarization with encoder-decoder attractors,
//! plus an auxiliary loss that steers identity-like attention heads toward
//! per-speaker activity masks.

pub mod config;
pub mod container;
pub mod error;
pub mod frontend;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod perm;
pub mod scoring;
pub mod simulate;
pub mod train;

pub use error::{Error, Result};
