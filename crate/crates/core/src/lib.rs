//! Recurrent classification of crop spectral time series.
//!
//! Everything in this crate is deterministic: the same seed produces the
//! same bytes on every platform. Floating point goes through [`libm`] so
//! results do not depend on the host libm. The crate is `no_std` + `alloc`;
//! file formats and orchestration live in the companion CLI crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod adapt;
pub mod analysis;
pub mod classifier;
pub mod data;
pub mod digest;
pub mod dtw;
pub mod error;
pub(crate) mod fmath;
pub mod metrics;
pub mod optim;
pub mod phenology;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use error::CoreError;
