//! File formats, benchmarks and the command-line front end for
//! [`precis_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod text;

pub use error::{Error, Result};
