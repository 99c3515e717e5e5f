//! Face presentation-attack detection with hand-crafted representations.
//!
//! Two descriptors are provided: a Fisher-weighted, spatial-pyramid coded
//! multi-scale LBP texture vector ([`spmt`]) and a binocular relative-depth
//! vector obtained by iteratively registering facial landmarks to a template
//! face ([`tfbd`]). Kernel SVM scoring, score fusion and biometric metrics
//! live in [`classify`]; [`cascade`] routes uncertain external detections to
//! the texture classifier; [`pipeline`] ties training and inference together.

pub mod cascade;
pub mod classify;
pub mod codebook;
pub mod error;
pub mod fisherface;
pub mod imagecore;
pub mod modelio;
pub mod pipeline;
pub mod spmt;
pub mod synth;
pub mod texture;
pub mod tfbd;

pub use error::{Error, Result};
