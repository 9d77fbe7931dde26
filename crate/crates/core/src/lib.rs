//! Knowledge-graph rule mining and chain-of-knowledge dataset synthesis.
//!
//! The crate is organized along the pipeline:
//!
//! - [`kg`]: interned triple store with forward and inverse adjacency.
//! - [`rule`], [`mining`]: chain rules, two-hop mining, scoring, composition.
//! - [`selection`]: balancing, leakage filtering, anonymization, probing.
//! - [`templates`], [`generation`]: natural-language rendering of samples.
//! - [`explore`]: the trial-and-error agent and its traces.
//! - [`client`]: fact-probe and polishing model clients (live or mock).
//! - [`eval`]: splits, exact match, rule-length usage, error taxonomy.

pub mod client;
pub mod eval;
pub mod explore;
pub mod generation;
pub mod kg;
pub mod mining;
pub mod rule;
pub mod selection;
pub mod synth;
pub mod templates;

pub use kg::{Direction, EntityId, KgError, KnowledgeGraph, RelationId, Triple};
pub use explore::{ExplorationTrace, FactOracle, KgOracle};
pub use generation::{CoKSample, CorpusDoc, Naming};
pub use mining::RuleFilter;
pub use rule::{Rule, RuleInstance, RuleStats, Threshold};
pub use selection::{SelectionPool, Setting};
pub use templates::{QuerySide, TemplateSet};
