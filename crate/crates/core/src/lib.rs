pub mod config;
pub mod constants;
pub mod error;
pub mod factory;
pub mod general;
pub mod girsanov;
pub mod harness;
pub mod likelihood;
pub mod localize;
pub mod model;
pub mod multilevel;
pub mod report;
pub mod rng;
pub mod source;
pub mod stats;
pub mod tes;
