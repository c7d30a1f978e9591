//! Classify-then-segment experiment framework for brachial plexus nerve
//! localization in neck ultrasound.
//!
//! A binary CNN gate decides whether a frame contains the nerve; frames it
//! passes are segmented by a U-net or M-net. The crate covers dataset
//! ingestion and curation, the networks themselves, the three experiment
//! protocols (no gate, CNN gate, oracle gate) under k-fold cross-validation,
//! and the metrics and significance tests used to compare them.

pub mod curation;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod grid;
pub mod models;
pub mod nn;
pub mod pipeline;

pub use error::{Error, Result};
pub use grid::{Grid, Image, Mask};
