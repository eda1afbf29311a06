//! Watermark-based detection and user attribution for generated content.
//!
//! The crate covers four concerns:
//!
//! * [`bits`] and [`codebook`]: packed watermarks, bitwise accuracy and the
//!   per-user watermark database with its on-disk format.
//! * [`selection`]: assigning a new user the watermark farthest from the
//!   existing ones (Random, exact bounded search tree, NRG and the
//!   depth-capped, randomly initialised bounded search tree).
//! * [`detect`], [`channel`] and [`bounds`]: detection/attribution rules, a
//!   simulated β-accurate / γ-random decoder, and exact evaluation of the
//!   TDR/FDR/TAR bounds.
//! * [`experiment`]: the seeded Monte Carlo runner that ties everything
//!   together and checks empirical metrics against the bounds.
//!
//! Data-parallel loops go through [`exec::Exec`]; building without the
//! `parallel` feature turns every parallel path into its sequential
//! counterpart.

pub mod bits;
pub mod bounds;
pub mod channel;
pub mod codebook;
pub mod config;
pub mod detect;
mod error;
pub use error::ParseErrorKind;
pub mod exec;
pub mod experiment;
pub mod rng;
pub mod selection;
pub mod stats;

pub use bits::{Accuracy, Watermark};
pub use codebook::Codebook;
pub use error::{Error, Result};
pub use exec::Exec;
