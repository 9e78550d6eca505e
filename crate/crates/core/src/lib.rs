//! Precision-optimal H2/H∞ estimator design and sensor selection.
//!
//! The crate builds the linear-matrix-inequality programs that couple an
//! estimator's performance bound to per-sensor noise precisions, solves them
//! with a first-order ADMM scheme, recovers observers or filters from the
//! solution, and selects sensor subsets under a cardinality budget.
//!
//! `no_std` with `alloc` is supported by disabling the default `std` feature;
//! the `std` feature adds parallel subset evaluation.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod admm;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod lmi;
pub mod model;
pub mod selection;

pub use error::{Error, Result};
