//! Controlled distribution-shift benchmarks.
//!
//! Builds single and concurrent distribution shifts (spurious correlation, low
//! data drift, unseen data shift, and their compositions) from attribute
//! annotated instance pools, verifies the realized splits, ships a procedural
//! shapes dataset plus a linear reference classifier, and aggregates result
//! logs into comparison views.

pub mod aggregate;
pub mod apportion;
pub mod cli;
pub mod refmodel;
pub mod rng;
pub mod schema;
pub mod shiftgen;
pub mod synth;
pub mod verify;
