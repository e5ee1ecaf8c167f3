//! Compiler and dual-mode execution engine for first-order logical queries
//! over knowledge graphs.
//!
//! The pipeline captures a grounded query as a FOL-level computation graph
//! ([`ir::capture`]), expands each FOL operator into primitive tensor ops
//! through model templates ([`pattern::expand`]), fuses operator modules into
//! single kernels ([`fuser`]) and runs either form on the instrumented
//! interpreter ([`exec`]).

pub mod beta;
pub mod error;
pub mod exec;
pub mod fuser;
pub mod harness;
pub mod ir;
pub mod kg;
pub mod pattern;
pub mod pipeline;
pub mod query;

pub use error::{Error, Result};
