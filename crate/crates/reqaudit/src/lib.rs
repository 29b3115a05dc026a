//! Requirement-aware static analysis pipeline.
//!
//! Stage one mines verifiable rules from natural-language requirements while
//! quarantining defective requirement text; stage two audits a source tree
//! against the pooled rules, producing evidence-cited pass/fail/unknown
//! findings. All model interaction goes through a deterministic, replayable
//! backend so the pipeline is fully testable offline.

pub mod backend;
pub mod document;
pub mod index;
pub mod ingest;
pub mod miner;
pub mod model;
pub mod pooling;
pub mod report;
