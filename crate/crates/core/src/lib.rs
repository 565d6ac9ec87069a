//! Lock-free consistent parallel SGD.
//!
//! The crate provides a versioned shared [`param_vector::ParameterVector`]
//! with reader tracking and payload recycling, four SGD training loops
//! (sequential, lock-based asynchronous, Hogwild! and Leashed-SGD with a
//! persistence bound), a small neural-network core, dataset loaders, a
//! fluid model of retry-loop contention and an experiment harness.

// Negated comparisons deliberately reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod dynamics;
pub mod harness;
pub mod nn;
pub mod optimizers;
pub mod param_vector;
