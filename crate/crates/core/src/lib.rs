//! Differentially private synthetic tabular data for vertically partitioned
//! datasets, where some columns are public and the rest private.
//!
//! The crate provides the select-measure-generate engines (fully private
//! AIM, vertical JAM-PGM, conditional AIM, vertical PMW and a gradient-based
//! soft-dataset engine), the graphical-model substrate they share, zCDP
//! accounting, and the evaluation harness used to compare them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dp;
pub mod engine;
pub mod error;
pub mod eval;
pub mod factor;
pub mod gem;
pub mod mwem;
pub mod pgm;
pub mod tabular;

pub use error::{Error, ErrorClass, Result};
