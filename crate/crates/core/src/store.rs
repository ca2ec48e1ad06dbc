//! The experience graph paired with its vector index.
//!
//! Every case in the graph has exactly one index entry and vice versa.
//! Mutations go through [`ExperienceStore`] so the pair never diverges:
//! embeddings are computed (the only fallible external step) before either
//! structure is touched.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{Case, CaseId, ProvisionalCase};
use crate::embed::{EmbedError, EmbeddedCase, Embedder};
use crate::exec::Execution;
use crate::graph::{ExperienceGraph, GraphError};
use crate::index::{IndexError, VectorIndex};
use crate::rerank::case_similarity;
use crate::retrieve::{retrieve, CandidatePool, RetrievalConfig, RetrieveError};

/// Insert-time `similar_to` policy: link to the `max_links` most similar
/// existing cases whose score reaches `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPolicy {
    pub alpha: f64,
    pub max_links: usize,
    pub threshold: f64,
}

impl Default for LinkPolicy {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            max_links: 5,
            threshold: 0.30,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

pub struct ExperienceStore {
    graph: ExperienceGraph,
    index: VectorIndex,
    embedder: Arc<dyn Embedder>,
}

impl std::fmt::Debug for ExperienceStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExperienceStore")
            .field("graph", &self.graph.stats())
            .field("indexed", &self.index.len())
            .finish()
    }
}

impl ExperienceStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            graph: ExperienceGraph::new(),
            index: VectorIndex::new(),
            embedder,
        }
    }

    /// Wraps an existing graph (e.g. a loaded snapshot), embedding every case.
    pub fn from_graph(
        graph: ExperienceGraph,
        embedder: Arc<dyn Embedder>,
        execution: Execution,
    ) -> Result<Self, StoreError> {
        let cases: Vec<&Case> = graph.cases().collect();
        let embedded = execution.map(&cases, |c| EmbeddedCase::from_case(c, embedder.as_ref()));
        let mut index = VectorIndex::with_execution(execution);
        for (case, e) in cases.iter().zip(embedded) {
            index.insert(e?, case.created_seq)?;
        }
        Ok(Self {
            graph,
            index,
            embedder,
        })
    }

    pub fn graph(&self) -> &ExperienceGraph {
        &self.graph
    }

    pub fn index(&self) -> &VectorIndex {
        &self.index
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.index.set_execution(execution);
    }

    pub fn freeze(&mut self) {
        self.graph.freeze();
    }

    pub fn into_graph(self) -> ExperienceGraph {
        self.graph
    }

    pub fn embed_case(&self, case: &Case) -> Result<EmbeddedCase, EmbedError> {
        EmbeddedCase::from_case(case, self.embedder.as_ref())
    }

    /// Existing cases `case` should link to, heaviest first, weights clipped
    /// to [0, 1]. Equal scores go to the older case.
    pub fn link_candidates(
        &self,
        case: &EmbeddedCase,
        policy: &LinkPolicy,
    ) -> Result<Vec<(CaseId, f64)>, EmbedError> {
        if policy.max_links == 0 {
            return Ok(Vec::new());
        }
        let entries: Vec<(&EmbeddedCase, u64)> = self.index.iter().collect();
        let scores = self
            .index
            .execution()
            .map(&entries, |(other, _)| case_similarity(case, other, policy.alpha));
        let mut kept = Vec::new();
        for ((other, seq), s) in entries.iter().zip(scores) {
            let s = s?;
            if s >= policy.threshold && other.case_id != case.case_id {
                kept.push((other.case_id.clone(), s.clamp(0.0, 1.0), *seq));
            }
        }
        kept.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        kept.truncate(policy.max_links);
        Ok(kept.into_iter().map(|(id, w, _)| (id, w)).collect())
    }

    /// Inserts `case` with the given links; on error nothing changes.
    pub fn insert(&mut self, case: Case, links: &[(CaseId, f64)]) -> Result<CaseId, StoreError> {
        let embedded = self.embed_case(&case)?;
        self.insert_embedded(case, embedded, links)
    }

    fn insert_embedded(
        &mut self,
        case: Case,
        embedded: EmbeddedCase,
        links: &[(CaseId, f64)],
    ) -> Result<CaseId, StoreError> {
        if let Some((first, _)) = self.index.iter().next() {
            if first.prompt.dim() != embedded.prompt.dim() {
                return Err(EmbedError::DimensionMismatch {
                    left: first.prompt.dim(),
                    right: embedded.prompt.dim(),
                }
                .into());
            }
        }
        let id = self.graph.insert_case(case, links)?;
        let seq = self.graph.seq_counter();
        self.index
            .insert(embedded, seq)
            .expect("graph accepted the case so the index must too");
        Ok(id)
    }

    /// Embeds, picks links under `policy`, inserts. Returns the links made.
    pub fn insert_linked(
        &mut self,
        case: Case,
        policy: &LinkPolicy,
    ) -> Result<(CaseId, Vec<(CaseId, f64)>), StoreError> {
        let embedded = self.embed_case(&case)?;
        let links = self.link_candidates(&embedded, policy)?;
        let id = self.insert_embedded(case, embedded, &links)?;
        Ok((id, links))
    }

    pub fn add_fixed_by(&mut self, warning: &CaseId, golden: &CaseId) -> Result<(), StoreError> {
        Ok(self.graph.add_fixed_by(warning, golden)?)
    }

    pub fn retrieve(
        &self,
        provisional: &ProvisionalCase,
        cfg: &RetrievalConfig,
    ) -> Result<CandidatePool, RetrieveError> {
        retrieve(&self.graph, &self.index, self.embedder.as_ref(), provisional, cfg)
    }
}
