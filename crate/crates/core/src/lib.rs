//! Gray-box identification of grid-forming inverter dynamics with
//! Hammerstein-Wiener normal-form models.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod metrics;
pub mod normalform;
pub mod numerics;
pub mod plants;
pub mod scenarios;
pub mod signal;
pub mod sysid;

pub use error::{Error, Result};
