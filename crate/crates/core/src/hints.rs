//! Budgeted hint selection and prompt assembly.
//!
//! Selection runs in two phases. First, warnings in the ranked list that
//! carry a `fixed_by` edge are emitted as repair hints, optionally followed
//! by their golden counterparts. Then the remaining budget is filled in
//! ranked order, warnings and goldens alike. No case appears twice and the
//! set never exceeds the budget.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::{Case, CaseId};
use crate::graph::{ExperienceGraph, GraphError};
use crate::rerank::RankedCase;

pub const MEMORY_HEADER: &str = "=== MEMORY HINTS (via EXG) ===";

const TASK_EXCERPT: usize = 400;
const OUTPUT_EXCERPT: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintKind {
    FixedBy,
    Warning,
    Golden,
}

impl HintKind {
    pub fn header(self) -> &'static str {
        match self {
            HintKind::FixedBy => "[FIXED_BY]",
            HintKind::Warning => "[WARNING]",
            HintKind::Golden => "[GOLDEN]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hint {
    pub kind: HintKind,
    pub source_case_id: CaseId,
    pub text: String,
    /// The golden target of a `FixedBy` hint, or the warning a counterpart
    /// golden was paired with.
    pub paired_case_id: Option<CaseId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HintSet {
    pub hints: Vec<Hint>,
    pub budget: usize,
}

impl HintSet {
    pub fn len(&self) -> usize {
        self.hints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hints.is_empty()
    }

    pub fn count(&self, kind: HintKind) -> usize {
        self.hints.iter().filter(|h| h.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HintConfig {
    pub budget: usize,
    pub include_counterparts: bool,
    /// Cap on repair hints; `None` means the budget.
    pub fix_limit: Option<usize>,
}

impl Default for HintConfig {
    fn default() -> Self {
        Self {
            budget: 5,
            include_counterparts: true,
            fix_limit: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HintError {
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Selects and renders hints from `ranked` (best first).
pub fn build_hints(
    ranked: &[RankedCase],
    graph: &ExperienceGraph,
    cfg: &HintConfig,
) -> Result<HintSet, HintError> {
    let budget = cfg.budget;
    let fix_limit = cfg.fix_limit.unwrap_or(budget);
    let mut set = HintSet {
        hints: Vec::new(),
        budget,
    };
    let mut used: HashSet<&CaseId> = HashSet::new();

    let mut repairs: Vec<(&Case, &Case)> = Vec::new();
    if fix_limit > 0 {
        for r in ranked {
            let case = lookup(graph, &r.case_id)?;
            if case.is_warning() {
                if let Some(golden) = graph.fixed_target(&case.case_id)? {
                    repairs.push((case, golden));
                    if repairs.len() == fix_limit {
                        break;
                    }
                }
            }
        }
    }

    for &(warning, golden) in &repairs {
        if set.hints.len() >= budget {
            return Ok(set);
        }
        if used.insert(&warning.case_id) {
            set.hints.push(Hint {
                kind: HintKind::FixedBy,
                source_case_id: warning.case_id.clone(),
                text: render_fixed_by(warning, golden),
                paired_case_id: Some(golden.case_id.clone()),
            });
        }
    }
    if cfg.include_counterparts {
        for &(warning, golden) in &repairs {
            if set.hints.len() >= budget {
                return Ok(set);
            }
            if used.insert(&golden.case_id) {
                set.hints.push(Hint {
                    kind: HintKind::Golden,
                    source_case_id: golden.case_id.clone(),
                    text: render_golden(golden),
                    paired_case_id: Some(warning.case_id.clone()),
                });
            }
        }
    }
    for r in ranked {
        if set.hints.len() >= budget {
            break;
        }
        let case = lookup(graph, &r.case_id)?;
        if !used.insert(&case.case_id) {
            continue;
        }
        let (kind, text) = if case.is_warning() {
            (HintKind::Warning, render_warning(case))
        } else {
            (HintKind::Golden, render_golden(case))
        };
        set.hints.push(Hint {
            kind,
            source_case_id: case.case_id.clone(),
            text,
            paired_case_id: None,
        });
    }
    Ok(set)
}

fn lookup<'g>(graph: &'g ExperienceGraph, id: &CaseId) -> Result<&'g Case, GraphError> {
    graph.case(id).ok_or_else(|| GraphError::UnknownCase(id.clone()))
}

/// First `n` characters of `s`.
pub fn excerpt(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

fn failure_line(case: &Case) -> String {
    let ftype = case.signature.failure_type.as_deref().unwrap_or("unknown");
    match case.signature.error_messages.first() {
        Some(msg) if !msg.is_empty() => format!("Failure: {ftype}: {msg}"),
        _ => format!("Failure: {ftype}"),
    }
}

fn push_feedback(out: &mut String, case: &Case) {
    if let Some(fb) = case.signature.corrective_feedback.as_deref() {
        if !fb.trim().is_empty() {
            out.push_str("\nFeedback: ");
            out.push_str(fb.trim());
        }
    }
}

fn render_warning(case: &Case) -> String {
    let mut out = format!(
        "{} {}\nTask: {}\n{}",
        HintKind::Warning.header(),
        case.case_id,
        excerpt(&case.input, TASK_EXCERPT),
        failure_line(case)
    );
    push_feedback(&mut out, case);
    out
}

fn render_fixed_by(warning: &Case, golden: &Case) -> String {
    let mut out = format!(
        "{} {} -> {}\nTask: {}\n{}",
        HintKind::FixedBy.header(),
        warning.case_id,
        golden.case_id,
        excerpt(&warning.input, TASK_EXCERPT),
        failure_line(warning)
    );
    push_feedback(&mut out, warning);
    out.push_str("\nRepaired output:\n");
    out.push_str(excerpt(&golden.output, OUTPUT_EXCERPT));
    out
}

fn render_golden(case: &Case) -> String {
    format!(
        "{} {}\nTask: {}\nOutput:\n{}",
        HintKind::Golden.header(),
        case.case_id,
        excerpt(&case.input, TASK_EXCERPT),
        excerpt(&case.output, OUTPUT_EXCERPT)
    )
}

/// Re-renders a hint from the current graph contents.
pub fn render_hint(hint: &Hint, graph: &ExperienceGraph) -> Result<String, HintError> {
    let case = lookup(graph, &hint.source_case_id)?;
    Ok(match hint.kind {
        HintKind::Warning => render_warning(case),
        HintKind::Golden => render_golden(case),
        HintKind::FixedBy => {
            let golden = match &hint.paired_case_id {
                Some(id) => lookup(graph, id)?,
                None => graph
                    .fixed_target(&case.case_id)?
                    .ok_or_else(|| GraphError::UnknownCase(case.case_id.clone()))?,
            };
            render_fixed_by(case, golden)
        }
    })
}

/// System text, user task, the hint section (omitted when empty), then the
/// instruction. Deterministic in its inputs.
pub fn assemble_prompt(system: &str, user_task: &str, hints: &HintSet, instruction: &str) -> String {
    let mut out = String::new();
    out.push_str("System:\n");
    out.push_str(system);
    out.push_str("\n\nUser:\n");
    out.push_str(user_task);
    out.push_str("\n\n");
    if !hints.is_empty() {
        out.push_str(MEMORY_HEADER);
        for h in &hints.hints {
            out.push('\n');
            out.push_str(&h.text);
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str(instruction);
    out
}
