//! Two-trader gilt market simulation driven by chat-completion models.

pub mod analysis;
pub mod llm;
pub mod model;
pub mod scenario;
pub mod orchestrator;
pub mod metrics;
pub mod batch;
pub mod report;
