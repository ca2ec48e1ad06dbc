//! Failure-aware case similarity and one-hop relevance propagation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::CaseId;
use crate::embed::{cosine, EmbedError, EmbeddedCase};
use crate::graph::ExperienceGraph;
use crate::retrieve::CandidatePool;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankConfig {
    /// Weight of prompt similarity against failure similarity.
    pub alpha: f64,
    /// Propagate seed relevance over `similar_to` edges. Off only in the
    /// no-similarity ablation.
    pub propagate: bool,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            propagate: true,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("rerank.alpha must lie in [0, 1], got {}", self.alpha));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCase {
    pub case_id: CaseId,
    pub relevance: f64,
    pub initial_relevance: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("candidate or seed {0} is not in the graph")]
    Dangling(CaseId),
}

/// `alpha * cos(prompts) + (1 - alpha) * h(a) * h(b) * cos(failures)`.
pub fn case_similarity(a: &EmbeddedCase, b: &EmbeddedCase, alpha: f64) -> Result<f64, EmbedError> {
    let prompt = cosine(&a.prompt, &b.prompt)?;
    let failure = match (&a.failure, &b.failure) {
        (Some(fa), Some(fb)) => cosine(fa, fb)?,
        _ => 0.0,
    };
    Ok(alpha * prompt + (1.0 - alpha) * failure)
}

/// Scores every candidate by `max(rho0(c), max_u [rho0(u) + w(u, c)])` over
/// seeds `u` adjacent to `c`, and sorts descending. Non-seeds start at 0.
/// Ties go to the larger initial relevance, then the older case.
pub fn propagate_and_rank(
    pool: &CandidatePool,
    graph: &ExperienceGraph,
    cfg: &RerankConfig,
) -> Result<Vec<RankedCase>, RerankError> {
    let mut seed_rho: HashMap<usize, f64> = HashMap::with_capacity(pool.seeds.len());
    for s in &pool.seeds {
        let ix = graph
            .index_of(&s.case_id)
            .ok_or_else(|| RerankError::Dangling(s.case_id.clone()))?;
        let slot = seed_rho.entry(ix).or_insert(s.initial_relevance);
        *slot = slot.max(s.initial_relevance);
    }

    let mut scored = Vec::with_capacity(pool.candidates.len());
    for c in &pool.candidates {
        let ix = graph
            .index_of(&c.case_id)
            .ok_or_else(|| RerankError::Dangling(c.case_id.clone()))?;
        let rho0 = seed_rho.get(&ix).copied().unwrap_or(0.0);
        let mut rho = rho0;
        if cfg.propagate {
            for &(u, w) in graph.neighbors_at(ix) {
                if let Some(&ru) = seed_rho.get(&u) {
                    rho = rho.max(ru + w);
                }
            }
        }
        scored.push((ix, rho, rho0));
    }
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(b.2.total_cmp(&a.2))
            .then(graph.case_at(a.0).created_seq.cmp(&graph.case_at(b.0).created_seq))
    });
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(i, (ix, relevance, initial_relevance))| RankedCase {
            case_id: graph.case_at(ix).case_id.clone(),
            relevance,
            initial_relevance,
            rank: i + 1,
        })
        .collect())
}
