//! Complementary transformer toolkit.

pub mod attention;
pub mod bench;
pub mod blocks;
pub mod data;
pub mod error;
pub mod grad_suite;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;

pub use error::{Error, Result};
