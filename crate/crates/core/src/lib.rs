// NaN-aware comparisons are written as `!(a <= b)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod ensemble;
pub mod error;
pub mod federated;
pub mod harness;
pub mod linalg;
pub mod lqr;
pub mod matio;
pub mod rng;
pub mod zo;

pub use error::{Error, Result};
