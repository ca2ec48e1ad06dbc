//! Candidate-pool construction.
//!
//! Three sources feed the pool: the task's own cases (through its anchor),
//! a one-hop similarity neighborhood around semantic seeds, and the repair
//! targets of `fixed_by` edges leaving that neighborhood. Seeds come from
//! the query embedding (top-k) and from bridging out of warning-first
//! anchor cases.
//!
//! Pool order, which the cap truncates as a prefix:
//! 1. task cases, oldest first;
//! 2. for each seed by initial relevance (desc, then older first): the seed,
//!    then its `fanout_sim` heaviest neighbors;
//! 3. fix targets, in the order their sources appear in step 2.
//!
//! Duplicates keep their first position but accumulate source tags.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{Case, CaseId, ProvisionalCase};
use crate::embed::{EmbedError, Embedder, Embedding};
use crate::graph::ExperienceGraph;
use crate::index::VectorIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    /// Query-side seeds taken from the vector index.
    pub k_seeds: usize,
    /// One-hop similarity fanout per seed.
    pub fanout_sim: usize,
    /// Similarity fanout from each selected anchor case.
    pub fanout_bridge: usize,
    pub max_anchor_selected: usize,
    pub pool_cap: usize,
    /// Task-anchor cases and bridge seeding.
    pub use_task_anchor: bool,
    /// Bridge seeds and one-hop expansion.
    pub use_similarity: bool,
    /// Repair targets of `fixed_by` edges.
    pub use_fix_traces: bool,
    /// When false, every pool is empty.
    pub enabled: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_seeds: 10,
            fanout_sim: 5,
            fanout_bridge: 5,
            max_anchor_selected: 1,
            pool_cap: 30,
            use_task_anchor: true,
            use_similarity: true,
            use_fix_traces: true,
            enabled: true,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.pool_cap == 0 {
            return Err("retrieval.pool_cap must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedOrigin {
    QuerySeed,
    BridgeSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeededCase {
    pub case_id: CaseId,
    pub initial_relevance: f64,
    pub origin: SeedOrigin,
}

/// Which retrieval sources produced a candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceTags {
    pub task: bool,
    pub sim: bool,
    pub fix: bool,
}

impl SourceTags {
    pub fn only_task(&self) -> bool {
        self.task && !self.sim && !self.fix
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub case_id: CaseId,
    pub sources: SourceTags,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
    /// All seeds, highest initial relevance first.
    pub seeds: Vec<SeededCase>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &CaseId> {
        self.candidates.iter().map(|c| &c.case_id)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RetrieveError {
    #[error("vector index holds {index} cases but the graph holds {graph}")]
    IndexMismatch { graph: usize, index: usize },
    #[error("vector index returned case {0} which is not in the graph")]
    UnknownIndexed(CaseId),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Up to `max_n` anchor cases: warnings before goldens, most recent first
/// within each class.
pub fn select_anchor_seeds<'a>(anchor_cases: &[&'a Case], max_n: usize) -> Vec<&'a Case> {
    let mut sorted: Vec<&Case> = anchor_cases.to_vec();
    sorted.sort_by(|a, b| {
        b.is_warning()
            .cmp(&a.is_warning())
            .then(b.created_seq.cmp(&a.created_seq))
    });
    sorted.truncate(max_n);
    sorted
}

/// Builds the candidate pool for `provisional`, embedding its query text
/// with `embedder`. Never mutates the graph.
pub fn retrieve(
    graph: &ExperienceGraph,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    provisional: &ProvisionalCase,
    cfg: &RetrievalConfig,
) -> Result<CandidatePool, RetrieveError> {
    if !cfg.enabled {
        return Ok(CandidatePool::default());
    }
    let query = embedder.embed(&provisional.query_text)?;
    retrieve_with_query(graph, index, provisional, &query, cfg)
}

/// [`retrieve`] with the query embedding already computed.
pub fn retrieve_with_query(
    graph: &ExperienceGraph,
    index: &VectorIndex,
    provisional: &ProvisionalCase,
    query: &Embedding,
    cfg: &RetrievalConfig,
) -> Result<CandidatePool, RetrieveError> {
    if !cfg.enabled {
        return Ok(CandidatePool::default());
    }
    if graph.len() != index.len() {
        return Err(RetrieveError::IndexMismatch {
            graph: graph.len(),
            index: index.len(),
        });
    }

    let task_cases: &[usize] = if cfg.use_task_anchor {
        graph.anchor_members(&provisional.task_id)
    } else {
        &[]
    };

    // seeds: graph index -> (rho0, origin), first-seen order kept for stability
    let mut seed_at: HashMap<usize, usize> = HashMap::new();
    let mut seeds: Vec<(usize, f64, SeedOrigin)> = Vec::new();
    let mut offer = |ix: usize, rho0: f64, origin: SeedOrigin| match seed_at.get(&ix) {
        Some(&pos) => {
            if rho0 > seeds[pos].1 {
                seeds[pos].1 = rho0;
                seeds[pos].2 = origin;
            }
        }
        None => {
            seed_at.insert(ix, seeds.len());
            seeds.push((ix, rho0, origin));
        }
    };

    for (id, score) in index.top_k(query, cfg.k_seeds)? {
        let ix = graph
            .index_of(&id)
            .ok_or(RetrieveError::UnknownIndexed(id))?;
        offer(ix, score.max(0.0), SeedOrigin::QuerySeed);
    }
    if cfg.use_task_anchor && cfg.use_similarity {
        let anchor_cases: Vec<&Case> = task_cases.iter().map(|&ix| graph.case_at(ix)).collect();
        for a in select_anchor_seeds(&anchor_cases, cfg.max_anchor_selected) {
            let a_ix = graph.index_of(&a.case_id).expect("anchor member is in graph");
            for &(n, w) in graph.neighbors_at(a_ix).iter().take(cfg.fanout_bridge) {
                offer(n, w, SeedOrigin::BridgeSeed);
            }
        }
    }
    seeds.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then(graph.case_at(a.0).created_seq.cmp(&graph.case_at(b.0).created_seq))
    });

    let mut sim_list = Vec::new();
    for &(s, _, _) in &seeds {
        sim_list.push(s);
        if cfg.use_similarity {
            sim_list.extend(
                graph
                    .neighbors_at(s)
                    .iter()
                    .take(cfg.fanout_sim)
                    .map(|&(n, _)| n),
            );
        }
    }
    let fix_list: Vec<usize> = if cfg.use_fix_traces {
        sim_list.iter().filter_map(|&c| graph.fixed_at(c)).collect()
    } else {
        Vec::new()
    };

    let mut position: HashMap<usize, usize> = HashMap::new();
    let mut ordered: Vec<(usize, SourceTags)> = Vec::new();
    let mut add = |ix: usize, tag: fn(&mut SourceTags)| {
        let pos = *position.entry(ix).or_insert_with(|| {
            ordered.push((ix, SourceTags::default()));
            ordered.len() - 1
        });
        tag(&mut ordered[pos].1);
    };
    for &ix in task_cases {
        add(ix, |t| t.task = true);
    }
    for &ix in &sim_list {
        add(ix, |t| t.sim = true);
    }
    for &ix in &fix_list {
        add(ix, |t| t.fix = true);
    }
    ordered.truncate(cfg.pool_cap);

    Ok(CandidatePool {
        candidates: ordered
            .into_iter()
            .map(|(ix, sources)| Candidate {
                case_id: graph.case_at(ix).case_id.clone(),
                sources,
            })
            .collect(),
        seeds: seeds
            .into_iter()
            .map(|(ix, rho0, origin)| SeededCase {
                case_id: graph.case_at(ix).case_id.clone(),
                initial_relevance: rho0,
                origin,
            })
            .collect(),
    })
}
