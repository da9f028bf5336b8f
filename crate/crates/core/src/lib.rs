//! Verification-audit harness: corpus handling, agent backends, metrics,
//! the run pipeline and report emission.

pub mod agents;
pub mod corpus;
pub mod metrics;
pub mod pipeline;
pub mod report;
