//! The experience graph: cases grouped under task anchors, linked by
//! undirected `similar_to` edges and directed `fixed_by` edges.
//!
//! Cases are stored densely in insertion (`created_seq`) order. Every read
//! accessor is a pure function of the graph; mutations validate fully before
//! touching any state, so a rejected mutation leaves the graph unchanged.

mod snapshot;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{Case, CaseId, TaskAnchor, TaskId};

pub use snapshot::{
    read_snapshot, snapshot_bytes, snapshot_digest, write_snapshot, SnapshotError,
    SNAPSHOT_FORMAT_VERSION,
};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph is frozen")]
    Frozen,
    #[error("case {0} already exists")]
    DuplicateCase(CaseId),
    #[error("task {task} already has a case for attempt {attempt}")]
    DuplicateAttempt { task: TaskId, attempt: u32 },
    #[error("unknown case {0}")]
    UnknownCase(CaseId),
    #[error("similarity link from {from} targets unknown case {to}")]
    DanglingLink { from: CaseId, to: CaseId },
    #[error("similarity link {from} - {to} listed twice")]
    DuplicateLink { from: CaseId, to: CaseId },
    #[error("similarity weight {weight} for {from} - {to} outside [0, 1]")]
    WeightOutOfRange { from: CaseId, to: CaseId, weight: f64 },
    #[error("golden case {0} carries failure signals")]
    GoldenWithFailure(CaseId),
    #[error("fixed_by source {0} is not a warning case")]
    FixedBySourceNotWarning(CaseId),
    #[error("fixed_by destination {0} is not a golden case")]
    FixedByTargetNotGolden(CaseId),
    #[error("fixed_by edge {source_id} -> {target_id} crosses tasks")]
    FixedByTaskMismatch { source_id: CaseId, target_id: CaseId },
    #[error("warning case {0} already has an outgoing fixed_by edge")]
    DuplicateFixedBy(CaseId),
    #[error("case {0} has attempt index 0")]
    ZeroAttempt(CaseId),
}

/// Node counts and edge counts; `similar_to` edges are counted once.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub case_count: usize,
    pub golden_count: usize,
    pub warning_count: usize,
    pub anchor_count: usize,
    pub similar_to_count: usize,
    pub fixed_by_count: usize,
}

#[derive(Debug, Clone)]
struct AnchorEntry {
    anchor: TaskAnchor,
    members: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperienceGraph {
    cases: Vec<Case>,
    by_id: HashMap<CaseId, usize>,
    attempts: HashSet<(TaskId, u32)>,
    anchors: BTreeMap<TaskId, AnchorEntry>,
    /// Per node, sorted by weight descending then neighbor `created_seq` ascending.
    similar: Vec<Vec<(usize, f64)>>,
    similar_count: usize,
    fixed: Vec<Option<usize>>,
    fixed_count: usize,
    frozen: bool,
    seq_counter: u64,
}

impl ExperienceGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn seq_counter(&self) -> u64 {
        self.seq_counter
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn case(&self, id: &CaseId) -> Option<&Case> {
        self.by_id.get(id).map(|&ix| &self.cases[ix])
    }

    pub fn contains(&self, id: &CaseId) -> bool {
        self.by_id.contains_key(id)
    }

    /// All cases in insertion order.
    pub fn cases(&self) -> impl ExactSizeIterator<Item = &Case> {
        self.cases.iter()
    }

    pub fn anchor(&self, task: &TaskId) -> Option<&TaskAnchor> {
        self.anchors.get(task).map(|e| &e.anchor)
    }

    pub fn anchors(&self) -> impl Iterator<Item = &TaskAnchor> {
        self.anchors.values().map(|e| &e.anchor)
    }

    /// Contain-children of the task's anchor, oldest first. Empty for unseen tasks.
    pub fn anchor_cases(&self, task: &TaskId) -> Vec<&Case> {
        self.anchors
            .get(task)
            .map(|e| e.members.iter().map(|&ix| &self.cases[ix]).collect())
            .unwrap_or_default()
    }

    /// Up to `limit` similarity neighbors, heaviest first; ties go to the
    /// older neighbor.
    pub fn similar_neighbors(
        &self,
        id: &CaseId,
        limit: usize,
    ) -> Result<Vec<(&Case, f64)>, GraphError> {
        let ix = self.require(id)?;
        Ok(self.similar[ix]
            .iter()
            .take(limit)
            .map(|&(n, w)| (&self.cases[n], w))
            .collect())
    }

    pub fn similar_weight(&self, a: &CaseId, b: &CaseId) -> Option<f64> {
        let (ia, ib) = (*self.by_id.get(a)?, *self.by_id.get(b)?);
        self.similar[ia]
            .iter()
            .find(|&&(n, _)| n == ib)
            .map(|&(_, w)| w)
    }

    /// Every undirected similarity edge once, as `(a, b, weight)` with `a < b`.
    pub fn similar_edges(&self) -> Vec<(&CaseId, &CaseId, f64)> {
        let mut out = Vec::with_capacity(self.similar_count);
        for (ix, adj) in self.similar.iter().enumerate() {
            let a = &self.cases[ix].case_id;
            for &(n, w) in adj {
                let b = &self.cases[n].case_id;
                if a < b {
                    out.push((a, b, w));
                }
            }
        }
        out.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        out
    }

    /// Destination of the case's outgoing `fixed_by` edge, if any.
    pub fn fixed_target(&self, id: &CaseId) -> Result<Option<&Case>, GraphError> {
        let ix = self.require(id)?;
        Ok(self.fixed[ix].map(|t| &self.cases[t]))
    }

    /// All `fixed_by` edges as `(warning, golden)`, ordered by source id.
    pub fn fixed_edges(&self) -> Vec<(&CaseId, &CaseId)> {
        let mut out: Vec<_> = self
            .fixed
            .iter()
            .enumerate()
            .filter_map(|(s, t)| t.map(|t| (&self.cases[s].case_id, &self.cases[t].case_id)))
            .collect();
        out.sort();
        out
    }

    pub fn stats(&self) -> GraphStats {
        let golden_count = self.cases.iter().filter(|c| c.is_golden()).count();
        GraphStats {
            case_count: self.cases.len(),
            golden_count,
            warning_count: self.cases.len() - golden_count,
            anchor_count: self.anchors.len(),
            similar_to_count: self.similar_count,
            fixed_by_count: self.fixed_count,
        }
    }

    /// Most recent warning case of a task, by `created_seq`.
    pub fn latest_warning(&self, task: &TaskId) -> Option<&Case> {
        self.anchor_cases(task)
            .into_iter()
            .filter(|c| c.is_warning())
            .max_by_key(|c| c.created_seq)
    }

    /// Inserts a case, creating its task anchor on first sight and one
    /// symmetric `similar_to` edge per link. Returns the stored case id.
    pub fn insert_case(
        &mut self,
        mut case: Case,
        similarity_links: &[(CaseId, f64)],
    ) -> Result<CaseId, GraphError> {
        if self.frozen {
            return Err(GraphError::Frozen);
        }
        self.validate_new_case(&case)?;
        let mut targets = Vec::with_capacity(similarity_links.len());
        let mut seen = HashSet::new();
        for (to, w) in similarity_links {
            let Some(&t) = self.by_id.get(to) else {
                return Err(GraphError::DanglingLink {
                    from: case.case_id.clone(),
                    to: to.clone(),
                });
            };
            if !(0.0..=1.0).contains(w) {
                return Err(GraphError::WeightOutOfRange {
                    from: case.case_id.clone(),
                    to: to.clone(),
                    weight: *w,
                });
            }
            if !seen.insert(t) {
                return Err(GraphError::DuplicateLink {
                    from: case.case_id.clone(),
                    to: to.clone(),
                });
            }
            targets.push((t, *w));
        }

        self.seq_counter += 1;
        case.created_seq = self.seq_counter;
        let id = case.case_id.clone();
        let ix = self.push_case(case);
        for (t, w) in targets {
            self.link(ix, t, w);
        }
        Ok(id)
    }

    /// Adds the `fixed_by` edge `warning -> golden`.
    pub fn add_fixed_by(&mut self, warning: &CaseId, golden: &CaseId) -> Result<(), GraphError> {
        if self.frozen {
            return Err(GraphError::Frozen);
        }
        let s = self.require(warning)?;
        let t = self.require(golden)?;
        self.check_fixed(s, t)?;
        self.fixed[s] = Some(t);
        self.fixed_count += 1;
        Ok(())
    }

    fn require(&self, id: &CaseId) -> Result<usize, GraphError> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownCase(id.clone()))
    }

    fn validate_new_case(&self, case: &Case) -> Result<(), GraphError> {
        if self.by_id.contains_key(&case.case_id) {
            return Err(GraphError::DuplicateCase(case.case_id.clone()));
        }
        if case.attempt_index == 0 {
            return Err(GraphError::ZeroAttempt(case.case_id.clone()));
        }
        if self
            .attempts
            .contains(&(case.task_id.clone(), case.attempt_index))
        {
            return Err(GraphError::DuplicateAttempt {
                task: case.task_id.clone(),
                attempt: case.attempt_index,
            });
        }
        if case.is_golden() && !case.signature.is_clean() {
            return Err(GraphError::GoldenWithFailure(case.case_id.clone()));
        }
        Ok(())
    }

    fn check_fixed(&self, s: usize, t: usize) -> Result<(), GraphError> {
        let (src, dst) = (&self.cases[s], &self.cases[t]);
        if !src.is_warning() {
            return Err(GraphError::FixedBySourceNotWarning(src.case_id.clone()));
        }
        if !dst.is_golden() {
            return Err(GraphError::FixedByTargetNotGolden(dst.case_id.clone()));
        }
        if src.task_id != dst.task_id {
            return Err(GraphError::FixedByTaskMismatch {
                source_id: src.case_id.clone(),
                target_id: dst.case_id.clone(),
            });
        }
        if self.fixed[s].is_some() {
            return Err(GraphError::DuplicateFixedBy(src.case_id.clone()));
        }
        Ok(())
    }

    /// Appends a validated case and its contain edge. Cases must arrive in
    /// `created_seq` order.
    fn push_case(&mut self, case: Case) -> usize {
        let ix = self.cases.len();
        self.by_id.insert(case.case_id.clone(), ix);
        self.attempts
            .insert((case.task_id.clone(), case.attempt_index));
        self.anchors
            .entry(case.task_id.clone())
            .or_insert_with(|| AnchorEntry {
                anchor: TaskAnchor::for_task(&case.task_id),
                members: Vec::new(),
            })
            .members
            .push(ix);
        self.cases.push(case);
        self.similar.push(Vec::new());
        self.fixed.push(None);
        ix
    }

    fn link(&mut self, a: usize, b: usize, w: f64) {
        self.insert_sorted(a, b, w);
        self.insert_sorted(b, a, w);
        self.similar_count += 1;
    }

    fn insert_sorted(&mut self, at: usize, neighbor: usize, w: f64) {
        let seq = self.cases[neighbor].created_seq;
        let cases = &self.cases;
        let adj = &mut self.similar[at];
        let pos = adj.partition_point(|&(n, nw)| {
            nw > w || (nw == w && cases[n].created_seq < seq)
        });
        adj.insert(pos, (neighbor, w));
    }

    pub(crate) fn index_of(&self, id: &CaseId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub(crate) fn case_at(&self, ix: usize) -> &Case {
        &self.cases[ix]
    }

    pub(crate) fn neighbors_at(&self, ix: usize) -> &[(usize, f64)] {
        &self.similar[ix]
    }

    pub(crate) fn fixed_at(&self, ix: usize) -> Option<usize> {
        self.fixed[ix]
    }

    pub(crate) fn anchor_members(&self, task: &TaskId) -> &[usize] {
        self.anchors
            .get(task)
            .map(|e| e.members.as_slice())
            .unwrap_or(&[])
    }
}

impl PartialEq for ExperienceGraph {
    fn eq(&self, other: &Self) -> bool {
        self.frozen == other.frozen
            && self.seq_counter == other.seq_counter
            && self.cases == other.cases
            && self.anchors.len() == other.anchors.len()
            && self
                .anchors
                .iter()
                .zip(other.anchors.iter())
                .all(|((ta, a), (tb, b))| ta == tb && a.anchor == b.anchor)
            && self.similar_edges() == other.similar_edges()
            && self.fixed_edges() == other.fixed_edges()
    }
}
