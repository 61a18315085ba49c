//! Stack-allocation safety analysis and deterministic memory-tagging
//! instrumentation for a small SSA IR, together with a tagged-memory machine
//! that executes the result.

pub mod analysis;
pub mod instrument;
pub mod interp;
pub mod ir;
pub mod mte;
