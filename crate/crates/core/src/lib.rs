#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mpc;
pub mod par;
pub mod regress;
pub mod sim;
pub mod tca;
pub mod weighting;

pub use error::{Error, Result};
