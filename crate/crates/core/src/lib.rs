//! Particle discretization of a one-parameter family of 1D nonlocal
//! drift-diffusion equations with attractive `|x|^-gamma` interaction.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod analysis;
pub mod criteria;
pub mod density;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod normal;
pub mod quadrature;

pub use error::{Error, Result};
