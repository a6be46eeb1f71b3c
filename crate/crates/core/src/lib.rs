//! Region-constrained, text-conditioned image style transfer.
//!
//! A directive such as `apply cubism style to the building` is grounded to a
//! mask and a style phrase, then a small U-Net is optimized at inference time
//! against four masked objectives so only that region changes. Several
//! directives are applied one after another, each on the previous result.

pub mod cli;
pub mod config;
pub mod encoders;
pub mod engine;
pub mod error;
pub mod eval;
pub mod grounding;
pub mod imaging;
pub mod losses;
pub mod resample;

pub use error::{Error, GroundingStage, Result};
