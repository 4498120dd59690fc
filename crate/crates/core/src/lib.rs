//! Core library for fusing a CT-derived spine model with a body-surface
//! skeleton model and measuring spinal curvature on the result.
//!
//! The crate is organised as a pipeline of small modules:
//!
//! * [`mesh`] — triangle meshes, discrete Laplacians, vertex areas, OBJ/PLY I/O
//! * [`sparse`] — symmetric positive definite sparse solver
//! * [`transform`] — similarity transforms and weighted closed-form fits
//! * [`spatial`] — nearest-neighbour and point-to-surface queries
//! * [`registration`] — landmark-based coarse registration and ICP
//! * [`arap`] — as-rigid-as-possible deformation with handle constraints
//! * [`skinfit`] — bending-regularised fitting of a template surface to a wrap
//! * [`spine`] — labelled vertebra models, endplates and Cobb angles
//! * [`synth`] — synthetic spine generator with known ground truth
//!
//! All coordinates are in millimetres; angles in public APIs are degrees.

// Negated comparisons (`!(x > y)`) are used on purpose in the numeric
// guards so that NaN falls into the error branch; don't "simplify" them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Range loops indexing several parallel arrays at once read better than
// zipped iterator chains in the solver kernels.
#![allow(clippy::needless_range_loop)]

pub mod arap;
pub mod error;
pub mod mesh;
pub mod registration;
pub mod skinfit;
pub mod sparse;
pub mod spatial;
pub mod spine;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
