//! Corpus preparation, curriculum scheduling, loss verification and scoring
//! for chain-of-thought speech emotion recognition.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`manifest`]: the line-delimited corpus format and preprocessing filters
//! - [`audio`]: WAV decoding and silence trimming
//! - [`features`]: pitch, loudness and speaking-rate extraction
//! - [`stats`]: mergeable corpus statistics and three-level discretization
//! - [`cotgen`]: explicit and implicit chain-of-thought text generation
//! - [`fusion`]: label harmonization and dual-annotation fusion
//! - [`curriculum`]: the explicit-to-implicit batch mixing schedule
//! - [`losskernel`]: the composed embedding objective with gradient checks
//! - [`metrics`]: label extraction and WA / UA / Macro-F1 scoring

pub mod audio;
pub mod cotgen;
pub mod curriculum;
pub mod error;
pub mod features;
pub mod fusion;
pub mod losskernel;
pub mod manifest;
pub mod metrics;
pub mod stats;

pub use error::{Error, Result};
pub use manifest::{EmotionLabel, Language, UtteranceRecord};
