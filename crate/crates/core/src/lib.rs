#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod bank;
pub mod catalog;
pub mod error;
pub mod linalg;
pub mod lti;
pub mod metrics;
pub mod platoon;
pub mod scenario;
pub mod synthesis;

pub use error::{Error, Result};
