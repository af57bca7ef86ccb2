//! Membrane-pattern cell segmentation for stacks of 2D tomogram slices.
//!
//! The pipeline enhances contrast with CLAHE, finds candidate cell centers
//! with a gradient-based circular Hough transform, segments each seed with
//! a geodesic graph cut driven by membrane-template cross-correlation,
//! merges the per-seed masks into labeled slices, removes inter-slice
//! inconsistencies with a sliding-window filter, re-aligns the stack by
//! frequency-domain cross-correlation, and scores the result against
//! expert annotations.
//!
//! Stage-level entry points live in the matching modules; [`pipeline`]
//! chains them end to end from a [`config::PipelineConfig`].

pub mod assembly;
pub mod clahe;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod graphcut;
pub mod image;
pub mod membrane;
pub mod pgm;
pub mod phantom;
pub mod pipeline;
pub mod postprocess;
pub mod seeding;

pub use error::{Error, Result};
pub use image::{GrayImage, SliceStack, VectorField};
