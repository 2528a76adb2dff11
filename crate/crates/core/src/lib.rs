//! Flow-level simulation of multi-tenant GPU training clusters with
//! migration-based defragmentation and path-isolating routing.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod flowsim;
pub mod fragmentation;
pub mod jobmodel;
pub mod metrics;
pub mod routing;
pub mod scheduler;
pub mod sim;
pub mod solver;
pub mod topology;
pub mod workload;

pub use error::{Error, Result};
