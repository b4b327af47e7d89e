//! Matcher-agnostic evaluation toolkit for infrared-visible image matching.
//!
//! Matchers run elsewhere and export correspondences; this crate ingests them,
//! estimates homographies and relative poses, scores the results, and trains a
//! small selector that picks a preprocessing branch per image pair.

pub mod cli;
pub mod estimate;
pub mod fixture;
pub mod gate;
pub mod geometry;
pub mod ingest;
pub mod metrics;
pub mod preprocess;
pub mod synth;
