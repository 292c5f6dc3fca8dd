//! Simulated collective communication over a DIMM-based processing-in-memory
//! system with entangled-group byte lanes.

pub mod codec;
pub mod collectives;
pub mod data;
pub mod harness;
pub mod hypercube;
pub mod machine;
pub mod oracle;
pub mod report;
pub mod topology;
