// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod gemd;
pub mod graph;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Result, RosaError};
