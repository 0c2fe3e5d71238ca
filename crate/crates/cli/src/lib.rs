//! File formats, plots, and the `cropseries` command line tool.
//!
//! The heavy lifting lives in `cropseries-core`; this crate adds what a
//! shell session needs: CSV datasets with JSON sidecars, model bundles on
//! disk, run manifests, SVG charts, and the six subcommands that tie them
//! together. All writes are atomic and all outputs are deterministic for a
//! fixed seed and config.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod fsio;
pub mod manifest;
pub mod modelio;
pub mod report;
pub mod svg;
