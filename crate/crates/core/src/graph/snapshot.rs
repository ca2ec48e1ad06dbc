//! Line-delimited JSON snapshots.
//!
//! One record per line, discriminated by `kind`. The `meta` record comes
//! first; the rest are written in a canonical order so that equal graphs
//! produce identical bytes. The loader accepts any order after `meta` and
//! re-checks every structural invariant.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ExperienceGraph, GraphError};
use crate::case::{Case, CaseId, TaskAnchor, TaskId};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("snapshot does not start with a meta record")]
    MissingMeta,
    #[error("unsupported snapshot format version {found} (expected {SNAPSHOT_FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("line {line}: {message}")]
    Invariant { line: usize, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Record {
    Meta {
        format_version: u32,
        seq_counter: u64,
        frozen: bool,
    },
    Case(Case),
    Anchor {
        anchor_id: String,
        task_id: TaskId,
    },
    Contain {
        anchor_id: String,
        case_id: CaseId,
    },
    Similar {
        a: CaseId,
        b: CaseId,
        weight: f64,
    },
    Fixed {
        source: CaseId,
        target: CaseId,
    },
}

fn write_record<W: Write>(w: &mut W, record: &Record) -> io::Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n")
}

pub fn write_snapshot<W: Write>(graph: &ExperienceGraph, mut w: W) -> io::Result<()> {
    write_record(
        &mut w,
        &Record::Meta {
            format_version: SNAPSHOT_FORMAT_VERSION,
            seq_counter: graph.seq_counter,
            frozen: graph.frozen,
        },
    )?;
    for case in &graph.cases {
        write_record(&mut w, &Record::Case(case.clone()))?;
    }
    for entry in graph.anchors.values() {
        write_record(
            &mut w,
            &Record::Anchor {
                anchor_id: entry.anchor.anchor_id.clone(),
                task_id: entry.anchor.task_id.clone(),
            },
        )?;
    }
    for case in &graph.cases {
        let anchor = &graph.anchors[&case.task_id].anchor;
        write_record(
            &mut w,
            &Record::Contain {
                anchor_id: anchor.anchor_id.clone(),
                case_id: case.case_id.clone(),
            },
        )?;
    }
    for (a, b, weight) in graph.similar_edges() {
        write_record(
            &mut w,
            &Record::Similar {
                a: a.clone(),
                b: b.clone(),
                weight,
            },
        )?;
    }
    for (source, target) in graph.fixed_edges() {
        write_record(
            &mut w,
            &Record::Fixed {
                source: source.clone(),
                target: target.clone(),
            },
        )?;
    }
    w.flush()
}

pub fn snapshot_bytes(graph: &ExperienceGraph) -> Vec<u8> {
    let mut buf = Vec::new();
    write_snapshot(graph, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

/// Hex SHA-256 of the canonical snapshot bytes.
pub fn snapshot_digest(graph: &ExperienceGraph) -> String {
    Sha256::digest(snapshot_bytes(graph))
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn invariant(line: usize, message: impl Into<String>) -> SnapshotError {
    SnapshotError::Invariant {
        line,
        message: message.into(),
    }
}

fn graph_invariant(line: usize, err: GraphError) -> SnapshotError {
    invariant(line, err.to_string())
}

pub fn read_snapshot<R: BufRead>(reader: R) -> Result<ExperienceGraph, SnapshotError> {
    let mut meta = None;
    let mut cases: Vec<(usize, Case)> = Vec::new();
    let mut anchors: Vec<(usize, String, TaskId)> = Vec::new();
    let mut contains: Vec<(usize, String, CaseId)> = Vec::new();
    let mut similars: Vec<(usize, CaseId, CaseId, f64)> = Vec::new();
    let mut fixeds: Vec<(usize, CaseId, CaseId)> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| SnapshotError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        match record {
            Record::Meta {
                format_version,
                seq_counter,
                frozen,
            } => {
                if meta.is_some() || !cases.is_empty() || !anchors.is_empty() {
                    return Err(invariant(line_no, "meta record must appear exactly once, first"));
                }
                if format_version != SNAPSHOT_FORMAT_VERSION {
                    return Err(SnapshotError::VersionMismatch {
                        found: format_version,
                    });
                }
                meta = Some((seq_counter, frozen));
            }
            _ if meta.is_none() => return Err(SnapshotError::MissingMeta),
            Record::Case(c) => cases.push((line_no, c)),
            Record::Anchor { anchor_id, task_id } => anchors.push((line_no, anchor_id, task_id)),
            Record::Contain { anchor_id, case_id } => contains.push((line_no, anchor_id, case_id)),
            Record::Similar { a, b, weight } => similars.push((line_no, a, b, weight)),
            Record::Fixed { source, target } => fixeds.push((line_no, source, target)),
        }
    }
    let (seq_counter, frozen) = meta.ok_or(SnapshotError::MissingMeta)?;

    let mut graph = ExperienceGraph::new();
    graph.seq_counter = seq_counter;

    // cases, in created_seq order
    let mut seqs = HashSet::new();
    for (line, c) in &cases {
        if c.created_seq == 0 || c.created_seq > seq_counter {
            return Err(invariant(
                *line,
                format!("case {} has created_seq {} outside 1..={seq_counter}", c.case_id, c.created_seq),
            ));
        }
        if !seqs.insert(c.created_seq) {
            return Err(invariant(*line, format!("duplicate created_seq {}", c.created_seq)));
        }
    }
    cases.sort_by_key(|(_, c)| c.created_seq);
    for (line, c) in cases {
        graph
            .validate_new_case(&c)
            .map_err(|e| graph_invariant(line, e))?;
        graph.push_case(c);
    }

    // anchors: one per task present, no strays
    let mut anchor_task: HashMap<String, TaskId> = HashMap::new();
    let mut seen_tasks = HashSet::new();
    for (line, anchor_id, task_id) in anchors {
        if !graph.anchors.contains_key(&task_id) {
            return Err(invariant(line, format!("anchor {anchor_id} groups no cases")));
        }
        if !seen_tasks.insert(task_id.clone()) {
            return Err(invariant(line, format!("second anchor for task {task_id}")));
        }
        if anchor_task.insert(anchor_id.clone(), task_id.clone()).is_some() {
            return Err(invariant(line, format!("duplicate anchor id {anchor_id}")));
        }
        let entry = graph.anchors.get_mut(&task_id).expect("checked above");
        entry.anchor = TaskAnchor { anchor_id, task_id };
    }
    if seen_tasks.len() != graph.anchors.len() {
        return Err(invariant(0, "a task with cases has no anchor record"));
    }

    // contain: exactly one per case, from its own task's anchor
    let mut contained = HashSet::new();
    for (line, anchor_id, case_id) in contains {
        let ix = graph
            .index_of(&case_id)
            .ok_or_else(|| invariant(line, format!("contain edge to unknown case {case_id}")))?;
        let task = anchor_task
            .get(&anchor_id)
            .ok_or_else(|| invariant(line, format!("contain edge from unknown anchor {anchor_id}")))?;
        if *task != graph.cases[ix].task_id {
            return Err(invariant(
                line,
                format!("case {case_id} contained by anchor of another task"),
            ));
        }
        if !contained.insert(ix) {
            return Err(invariant(line, format!("case {case_id} has two contain edges")));
        }
    }
    if contained.len() != graph.cases.len() {
        return Err(invariant(0, "a case has no incoming contain edge"));
    }

    // similar: stored once, lexicographic ids, no self loops
    let mut pairs = HashSet::new();
    for (line, a, b, weight) in similars {
        let ia = graph
            .index_of(&a)
            .ok_or_else(|| invariant(line, format!("similar edge to unknown case {a}")))?;
        let ib = graph
            .index_of(&b)
            .ok_or_else(|| invariant(line, format!("similar edge to unknown case {b}")))?;
        if a == b {
            return Err(invariant(line, format!("self-loop similar edge on {a}")));
        }
        if a > b {
            return Err(invariant(line, format!("similar edge {a} - {b} not in lexicographic order")));
        }
        if !(0.0..=1.0).contains(&weight) {
            return Err(invariant(line, format!("similar weight {weight} outside [0, 1]")));
        }
        if !pairs.insert((ia, ib)) {
            return Err(invariant(line, format!("similar edge {a} - {b} listed twice")));
        }
        graph.link(ia, ib, weight);
    }

    for (line, source, target) in fixeds {
        let s = graph
            .index_of(&source)
            .ok_or_else(|| invariant(line, format!("fixed_by from unknown case {source}")))?;
        let t = graph
            .index_of(&target)
            .ok_or_else(|| invariant(line, format!("fixed_by to unknown case {target}")))?;
        graph.check_fixed(s, t).map_err(|e| graph_invariant(line, e))?;
        graph.fixed[s] = Some(t);
        graph.fixed_count += 1;
    }

    graph.frozen = frozen;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case::{Reward, Signature};

    fn case(task: &str, k: u32, reward: Reward) -> Case {
        Case {
            case_id: CaseId::for_attempt(&TaskId::from(task), k),
            task_id: TaskId::from(task),
            input: format!("solve {task}"),
            output: "out".into(),
            reward,
            signature: if reward.is_pass() {
                Signature::default()
            } else {
                Signature::failure("Timeout", "took too long")
            },
            attempt_index: k,
            created_seq: 0,
        }
    }

    fn small_graph() -> ExperienceGraph {
        let mut g = ExperienceGraph::new();
        g.insert_case(case("t", 1, Reward::Fail), &[]).unwrap();
        g.insert_case(case("t", 2, Reward::Pass), &[(CaseId::from("t#1"), 0.8)])
            .unwrap();
        g.insert_case(case("u", 1, Reward::Pass), &[(CaseId::from("t#2"), 0.123456789)])
            .unwrap();
        g.add_fixed_by(&CaseId::from("t#1"), &CaseId::from("t#2")).unwrap();
        g
    }

    fn load(bytes: &[u8]) -> Result<ExperienceGraph, SnapshotError> {
        read_snapshot(bytes)
    }

    #[test]
    fn empty_round_trip() {
        let g = ExperienceGraph::new();
        let back = load(&snapshot_bytes(&g)).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn small_round_trip_is_byte_stable() {
        let g = small_graph();
        let bytes = snapshot_bytes(&g);
        let back = load(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(snapshot_bytes(&back), bytes);
        let first = String::from_utf8(bytes).unwrap();
        assert!(first.starts_with(r#"{"kind":"meta","format_version":1,"seq_counter":3,"frozen":false}"#));
    }

    #[test]
    fn record_order_after_meta_is_irrelevant() {
        let g = small_graph();
        let text = String::from_utf8(snapshot_bytes(&g)).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[1..].reverse();
        let back = load(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn frozen_flag_survives() {
        let mut g = small_graph();
        g.freeze();
        assert!(load(&snapshot_bytes(&g)).unwrap().is_frozen());
    }

    fn replace(g: &ExperienceGraph, from: &str, to: &str) -> String {
        let text = String::from_utf8(snapshot_bytes(g)).unwrap();
        assert!(text.contains(from), "fixture missing {from}");
        text.replace(from, to)
    }

    #[test]
    fn fixed_edge_from_golden_is_rejected() {
        let g = small_graph();
        let bad = replace(
            &g,
            r#"{"kind":"fixed","source":"t#1","target":"t#2"}"#,
            r#"{"kind":"fixed","source":"t#2","target":"t#2"}"#,
        );
        assert!(matches!(load(bad.as_bytes()), Err(SnapshotError::Invariant { .. })));
    }

    #[test]
    fn version_and_meta_checks() {
        let g = small_graph();
        let bad = replace(&g, r#""format_version":1"#, r#""format_version":2"#);
        assert!(matches!(
            load(bad.as_bytes()),
            Err(SnapshotError::VersionMismatch { found: 2 })
        ));
        let text = String::from_utf8(snapshot_bytes(&g)).unwrap();
        let headless: String = text.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert!(matches!(load(headless.as_bytes()), Err(SnapshotError::MissingMeta)));
        assert!(matches!(
            load(b"{\"kind\":\"meta\"\n"),
            Err(SnapshotError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn asymmetric_similar_edge_is_rejected() {
        let g = small_graph();
        let text = String::from_utf8(snapshot_bytes(&g)).unwrap();
        let extra = format!("{text}{}\n", r#"{"kind":"similar","a":"t#1","b":"t#2","weight":0.5}"#);
        assert!(matches!(load(extra.as_bytes()), Err(SnapshotError::Invariant { .. })));
    }
}
