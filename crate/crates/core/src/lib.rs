//! Experience graphs for agent memory.
//!
//! Finished attempts become [`case::Case`]s in an [`graph::ExperienceGraph`]:
//! grouped by task anchors, linked by weighted `similar_to` edges and by
//! `fixed_by` repair edges. Before each attempt the loop retrieves a
//! candidate pool, reranks it by one-hop propagation, and turns the top of
//! the ranking into budgeted hints injected into the prompt.

pub mod case;
pub mod embed;
pub mod engine;
pub mod eval;
pub mod exec;
pub mod graph;
pub mod hints;
#[cfg(feature = "http")]
pub mod http;
pub mod index;
pub mod rerank;
pub mod retrieve;
pub mod store;
pub mod task;

pub use case::{Case, CaseId, Reward, Signature, TaskId};
pub use embed::{Embedder, Embedding, HashBagEmbedder};
pub use exec::Execution;
pub use graph::{ExperienceGraph, GraphError, GraphStats};
pub use hints::{build_hints, HintConfig, HintKind, HintSet};
pub use rerank::{propagate_and_rank, RankedCase, RerankConfig};
pub use retrieve::{retrieve, CandidatePool, RetrievalConfig};
pub use engine::{AgentClient, Engine, Evaluator, LoopConfig, Mode, RunRecord};
pub use eval::{apply_ablation, compute_metrics, AblationConfig, MetricsReport};
pub use store::{ExperienceStore, LinkPolicy};
pub use task::Task;
