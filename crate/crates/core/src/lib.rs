//! Transient simulation of a resonant-beam link that carries both charging
//! power and data: laser rate equations, pump and receiver transducers, an
//! AWGN channel with power splitting, and the experiment procedures built
//! on them.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod comms;
pub mod error;
pub mod laser;
pub mod ode;
pub mod output;
pub mod params;
pub mod transducers;

pub use error::{Error, Result};
