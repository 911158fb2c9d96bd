//! Dual-population constrained multi-objective optimizer for top-k
//! recommendation lists.
//!
//! Lists are scored on relevance, intra-list diversity and novelty subject to
//! category-balance, seller-coverage and new-item-exposure constraints. An
//! exploitation population evolves under constrained dominance with a
//! decaying tolerance, an exploration population ignores constraints, and a
//! coordinator (rule-based or backed by a chat-completion endpoint) decides
//! how the population budget is split between them.

pub mod constraints;
pub mod coordinator;
pub mod dataio;
pub mod domain;
pub mod engine;
pub mod error;
pub mod evolution;
pub mod metrics;
pub mod objectives;

pub use coordinator::{
    AllocationDecision, Coordinator, LlmConfig, LlmCoordinator, OptimizationSummary,
    RuleCoordinator,
};
pub use domain::{
    Catalog, ConstraintReport, ConstraintThresholds, ItemId, ItemRecord, ObjectiveVector,
    Solution, UserContext,
};
pub use engine::{run, EngineConfig, GenerationTrace, Mode, OptimizationResult, RunOutcome};
pub use error::{Error, Result};
pub use metrics::MetricsReport;
