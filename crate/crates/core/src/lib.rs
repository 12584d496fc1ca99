//! Reflected state-dependent random walks in the quarter plane.
//!
//! The walk moves on pairs `(I, J)` with `I <= J`; drift coefficients
//! `α_(i,j)` tilt the four nearest-neighbour moves by `±α/N`. The crate
//! classifies such walks through the constant κ(a), solves the stationary
//! ratio equations, simulates the walk and its two-queue network form, and
//! tests birth-death chains with iterated-logarithm criteria.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alpha;
pub mod bd;
pub mod ctmc;
pub mod estimate;
pub mod error;
pub mod expr;
pub mod kappa;
pub mod rng;
pub mod stationary;
pub mod walk;

pub use alpha::{AlphaField, DiagonalLimits, FieldSpec};
pub use bd::{BDVerdict, BdClass, RateSequence};
pub use error::{Error, Result};
pub use kappa::{ClassificationReport, KappaEstimate, Verdict};
pub use walk::{StepDistribution, Trajectory, WalkState};
