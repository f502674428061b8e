//! Experiment harness: configuration, synthetic corpus, training loops,
//! schedule inspection and the benchmark.

pub mod bench;
pub mod config;
pub mod corpus;
pub mod inspect;
pub mod train;

pub use bench::{run_benchmark, upsample, BenchmarkReport, BenchmarkRow, Check, Variant};
pub use config::Config;
pub use train::{LossRow, Phase, TrainState};
