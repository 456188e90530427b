//! Storage-expansion planning for a grid-connected microgrid facing random
//! outages.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dispatch;
pub mod error;
pub mod finance;
pub mod forest;
pub mod mdp;
pub mod metamodel;
pub mod outage;
pub mod policy;
pub mod qlearn;
pub mod renewables;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
