//! Fine-grained feature imitation for distilling anchor-based object detectors.
//!
//! The crate trains a small desk-scale single-stage detector (the teacher),
//! builds width-multiplied students, estimates near-object imitation masks
//! from ground-truth boxes and anchor priors, and trains students with a
//! masked feature-imitation loss on top of the ordinary detection loss.
//! Everything runs on a hand-rolled f64 numeric core with manual
//! backpropagation so gradients can be verified against finite differences.

pub mod analysis;
pub mod data;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod imitation;
pub mod mask;
pub mod numerics;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
