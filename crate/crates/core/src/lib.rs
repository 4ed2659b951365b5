//! Dimension theory of affine iterated function systems.
//!
//! * [`ifs`]: affine maps, symbolic composition and the coding map.
//! * [`measure`]: Bernoulli and Markov measures on the full shift.
//! * [`cocycle`]: Lyapunov spectra, Oseledets filtrations and angle diagnostics.
//! * [`dimension`]: Ledrappier-Young sums, Lyapunov and affinity dimensions,
//!   carpet closed forms.
//! * [`estimator`]: Monte Carlo point clouds and local, projected and sliced
//!   dimension estimates.
//! * [`cli`]: config-driven experiments and reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cocycle;
pub mod dimension;
pub mod error;
pub mod estimator;
pub mod ifs;
pub mod linalg;
pub mod measure;
pub mod provenance;
pub mod rng;
pub mod sentinel;
pub mod word;

pub use error::{Error, Result};
pub use ifs::{AffineIFS, AffineMap};
pub use measure::ShiftMeasure;
pub use word::Word;
