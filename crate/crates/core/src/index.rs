//! Exact cosine top-k over case prompt embeddings.

use std::cmp::Ordering;
use std::collections::HashMap;

use thiserror::Error;

use crate::case::CaseId;
use crate::embed::{cosine, EmbedError, EmbeddedCase, Embedding};
use crate::exec::Execution;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("case {0} already indexed")]
    Duplicate(CaseId),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone)]
struct Entry {
    seq: u64,
    embedded: EmbeddedCase,
}

/// Embeddings of every case in the graph, searchable by prompt similarity.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    entries: Vec<Entry>,
    by_id: HashMap<CaseId, usize>,
    execution: Execution,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_execution(execution: Execution) -> Self {
        Self {
            execution,
            ..Self::default()
        }
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.execution = execution;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: &CaseId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn get(&self, id: &CaseId) -> Option<&EmbeddedCase> {
        self.by_id.get(id).map(|&i| &self.entries[i].embedded)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&EmbeddedCase, u64)> {
        self.entries.iter().map(|e| (&e.embedded, e.seq))
    }

    /// `seq` is the case's `created_seq`, used to break score ties.
    pub fn insert(&mut self, embedded: EmbeddedCase, seq: u64) -> Result<(), IndexError> {
        if self.by_id.contains_key(&embedded.case_id) {
            return Err(IndexError::Duplicate(embedded.case_id));
        }
        if let Some(first) = self.entries.first() {
            if first.embedded.prompt.dim() != embedded.prompt.dim() {
                return Err(EmbedError::DimensionMismatch {
                    left: first.embedded.prompt.dim(),
                    right: embedded.prompt.dim(),
                }
                .into());
            }
        }
        self.by_id.insert(embedded.case_id.clone(), self.entries.len());
        self.entries.push(Entry { seq, embedded });
        Ok(())
    }

    /// The `k` entries with the highest prompt cosine to `query`, best first;
    /// equal scores go to the older case.
    pub fn top_k(&self, query: &Embedding, k: usize) -> Result<Vec<(CaseId, f64)>, EmbedError> {
        self.top_k_with(query, k, self.execution)
    }

    pub fn top_k_with(
        &self,
        query: &Embedding,
        k: usize,
        execution: Execution,
    ) -> Result<Vec<(CaseId, f64)>, EmbedError> {
        if k == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let scores = execution.map(&self.entries, |e| cosine(query, &e.embedded.prompt));
        let mut scored = Vec::with_capacity(scores.len());
        for (i, s) in scores.into_iter().enumerate() {
            scored.push((s?, self.entries[i].seq, i));
        }
        let by_rank = |a: &(f64, u64, usize), b: &(f64, u64, usize)| -> Ordering {
            b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(s, _, i)| (self.entries[i].embedded.case_id.clone(), s))
            .collect())
    }
}
