// SPDX-License-Identifier: MIT OR Apache-2.0

//! Change-point testing for integer-valued GARCH (INGARCH) time series.
//!
//! Observations follow a one-parameter exponential family whose conditional
//! mean evolves through a contractive recursion. The library simulates such
//! series, fits them by conditional maximum likelihood on a constrained
//! parameter space, and runs a CUSUM-type Wald test for a single change in
//! the parameter vector.
#![forbid(unsafe_code)]
#![allow(
    clippy::needless_range_loop,
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity
)]

pub mod cpt;
pub mod critval;
pub mod error;
pub mod expfam;
pub mod harness;
pub mod io;
pub mod likelihood;
pub mod mle;
pub mod models;
pub mod seed;
pub mod simulate;

pub use cpt::{run_test, TestOptions, TestReport, WeightFn};
pub use critval::{QuantileCache, QuantileConfig};
pub use error::{CptError, Result};
pub use expfam::ExponentialFamily;
pub use io::{read_series, ReadOptions, SeriesFile};
pub use likelihood::Segment;
pub use mle::{fit, FitOptions, FitResult, Start};
pub use models::{ModelSpec, ParamSpace, Recursion};
pub use simulate::{simulate_h0, simulate_h1, Trajectory};
