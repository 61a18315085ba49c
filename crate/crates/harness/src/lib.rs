//! Adversary scenarios, conservativeness fuzzing and overhead reporting on
//! top of `tagguard-core`.

pub mod corpus;
pub mod fuzz;
pub mod overhead;
pub mod pipeline;
pub mod scenario;

pub use fuzz::{fuzz_conservativeness, FuzzConfig, FuzzReport};
pub use overhead::{corpus_overhead, measure_overhead, OverheadReport};
pub use pipeline::{prepare, prepare_source, PipelineConfig, PipelineError, Prepared};
