//! Library surface of the benchmark harness, exposed so integration tests
//! can drive runs without shelling out.

pub mod bench;
pub mod config;
pub mod engine;
