//! Existence, certificates and saddle-point policies for zero-sum
//! linear-quadratic difference games over randomly fading channels.

pub mod certifier;
pub mod error;
pub mod exec;
pub mod kernel_decomp;
pub mod matrix_core;
pub mod mgare;
pub mod policy;
pub mod report;
pub mod scenarios;
pub mod stochastic_model;

pub use error::{Error, Result};
pub use exec::Exec;
pub use matrix_core::{Mat, Vector};
pub use stochastic_model::{Model, SamplePool, Scenario};
