//! Ray-based cross-modal distillation on dense BEV feature maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] dense `D×H×W` feature maps, flat softmax and the RTF file format.
//! * [`geometry`] angular ray partition of the BEV grid and object rasterisation.
//! * [`sampling`] Gaussian negative sampling along rays and `m×m` region pooling.
//! * [`losses`] contrastive (RCD), KL-weighted (RWD), response and occupancy losses,
//!   each returning an analytic gradient with respect to the student.
//! * [`simulator`] synthetic LiDAR-like teacher and camera-like student inputs plus
//!   BEV-level corruption operators.
//! * [`harness`] toy per-cell affine student, optimizers, depth metrics and training.
//! * [`gradcheck`] central finite-difference verification of every loss gradient.
//! * [`cli`] the `raydistill` command line.
//!
//! Interchangeable strategies (corruptions, optimizers, gradient-check probes) are
//! trait objects registered by name in a [`registry::Registry`] and selected at
//! runtime from configuration.

pub mod cli;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod losses;
pub mod registry;
pub mod rng;
pub mod sampling;
pub mod simulator;
pub mod tensor;

pub use error::{Error, Result};
