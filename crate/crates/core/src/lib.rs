//! Core Attribute Evolution Network: CTR prediction that models how an
//! item's audience shifts as its price changes.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
