//! Stall attribution and cost modelling for data-parallel training on cloud
//! GPU instances.
//!
//! The crate is organised bottom-up:
//!
//! - [`catalog`]: instance types and interconnect bandwidth sharing rules.
//! - [`dnnmodel`]: layer-level workload descriptors, presets and transforms.
//! - [`simcore`]: the deterministic epoch simulator and all-reduce cost model.
//! - [`stash`]: the five-run differencing profiler built on the simulator.
//! - [`analytic`]: closed-form multi-instance scaling model.
//! - [`advisor`]: cost model, budget-constrained recommendation and sweeps.
//!
//! Every operation is a pure function of its inputs. Simulated time is kept in
//! integer nanoseconds so that differences between runs are exact.

pub mod advisor;
pub mod analytic;
pub mod catalog;
pub mod dnnmodel;
mod error;
pub mod simcore;
pub mod stash;
pub mod units;

pub use error::{Error, Result};
