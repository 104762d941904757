//! Discrete-event simulator of vehicle/roadside cooperative driving over a
//! lossy V2X link.

pub mod config;
pub mod engine;
pub mod experiments;
pub mod fusion;
pub mod harness;
pub mod link;
pub mod metrics;
pub mod model;
pub mod prediction;
pub mod presets;
pub mod rng;
pub mod scenario;
