// SPDX-License-Identifier: MIT OR Apache-2.0

//! Truthfulness-preserving pruning toolkit.

pub mod allocation;
pub mod corpus;
pub mod error;
pub mod importance;
pub mod interchange;
pub mod matrix;
pub mod metrics;
pub mod pipeline;
pub mod probes;
pub mod rng;
pub mod separability;
pub mod tensorio;
pub mod toymodel;

pub use error::{Error, Result};
pub use matrix::Matrix;
