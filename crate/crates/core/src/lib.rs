//! Staged vision-language training for visible-infrared person
//! re-identification.
//!
//! The pipeline has three stages that share one three-stream model:
//!
//! 1. **TSG** learns per-identity prompt tokens so the frozen text encoder
//!    describes visible images.
//! 2. **IFE** trains only the shared image encoder so infrared features line
//!    up with the cached text features.
//! 3. **HSA** fine-tunes the modality-specific encoders, text encoder,
//!    prompts and the identity classifier with the shared encoder frozen.
//!
//! Evaluation follows the SYSU-MM01 and RegDB retrieval protocols (CMC, mAP,
//! mINP). A synthetic dual-modality generator makes every stage runnable on
//! a laptop.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod prompts;
pub mod report;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
