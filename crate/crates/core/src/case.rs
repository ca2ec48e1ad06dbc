//! Trajectories, cases and the small identifier types shared across the crate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque task identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

/// Opaque case identifier, unique within a graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CaseId(pub String);

impl TaskId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl CaseId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// The canonical id of attempt `attempt_index` on `task`.
    pub fn for_attempt(task: &TaskId, attempt_index: u32) -> Self {
        Self(format!("{}#{}", task.0, attempt_index))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<&str> for CaseId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Binary outcome of an attempt. Serialized as `0` / `1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Reward {
    Fail,
    Pass,
}

impl Reward {
    pub fn from_success(success: bool) -> Self {
        if success {
            Reward::Pass
        } else {
            Reward::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Reward::Pass
    }
}

impl From<Reward> for u8 {
    fn from(r: Reward) -> u8 {
        match r {
            Reward::Fail => 0,
            Reward::Pass => 1,
        }
    }
}

impl TryFrom<u8> for Reward {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Reward::Fail),
            1 => Ok(Reward::Pass),
            other => Err(format!("reward must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state_context: String,
    pub action: String,
    pub observation: String,
    pub step_index: u32,
}

/// One attempt's interaction history. Only terminal trajectories become cases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: TaskId,
    pub attempt_index: u32,
    pub steps: Vec<TrajectoryStep>,
    pub terminal: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory for task {0} is not terminal")]
    NotTerminal(TaskId),
    #[error("terminal trajectory for task {0} has no steps")]
    Empty(TaskId),
    #[error("step indices must run 1..=n, found {found} at position {position}")]
    StepIndex { position: usize, found: u32 },
    #[error("attempt index {attempt} outside 1..={max}")]
    AttemptIndex { attempt: u32, max: u32 },
}

impl Trajectory {
    pub fn new(task_id: TaskId, attempt_index: u32) -> Self {
        Self {
            task_id,
            attempt_index,
            steps: Vec::new(),
            terminal: false,
        }
    }

    /// Appends a step with the next contiguous index.
    pub fn push_step(
        &mut self,
        state_context: impl Into<String>,
        action: impl Into<String>,
        observation: impl Into<String>,
    ) {
        let step_index = self.steps.len() as u32 + 1;
        self.steps.push(TrajectoryStep {
            state_context: state_context.into(),
            action: action.into(),
            observation: observation.into(),
            step_index,
        });
    }

    pub fn finish(mut self) -> Self {
        self.terminal = true;
        self
    }

    pub fn validate(&self, max_attempts: u32) -> Result<(), TrajectoryError> {
        if self.attempt_index == 0 || self.attempt_index > max_attempts {
            return Err(TrajectoryError::AttemptIndex {
                attempt: self.attempt_index,
                max: max_attempts,
            });
        }
        if self.terminal && self.steps.is_empty() {
            return Err(TrajectoryError::Empty(self.task_id.clone()));
        }
        for (position, step) in self.steps.iter().enumerate() {
            if step.step_index as usize != position + 1 {
                return Err(TrajectoryError::StepIndex {
                    position,
                    found: step.step_index,
                });
            }
        }
        Ok(())
    }
}

/// Salient execution signals of an attempt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    #[serde(default)]
    pub error_messages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_type: Option<String>,
    /// Reflection text, when a reflector is attached to the loop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrective_feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_excerpt: Option<String>,
}

impl Signature {
    pub fn failure(failure_type: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            error_messages: vec![message.into()],
            failure_type: Some(failure_type.into()),
            ..Self::default()
        }
    }

    /// Text the failure embedding is computed from: error messages, then the
    /// failure type, then corrective feedback, newline separated.
    pub fn failure_text(&self) -> String {
        let mut parts: Vec<&str> = self.error_messages.iter().map(String::as_str).collect();
        if let Some(t) = &self.failure_type {
            parts.push(t);
        }
        if let Some(f) = &self.corrective_feedback {
            parts.push(f);
        }
        parts.retain(|p| !p.trim().is_empty());
        parts.join("\n")
    }

    pub fn has_failure_text(&self) -> bool {
        !self.failure_text().is_empty()
    }

    /// Golden cases must not carry error messages or a failure type.
    pub fn is_clean(&self) -> bool {
        self.error_messages.is_empty() && self.failure_type.is_none()
    }
}

/// The atomic unit of experience: one finished attempt on one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: CaseId,
    pub task_id: TaskId,
    pub input: String,
    pub output: String,
    pub reward: Reward,
    pub signature: Signature,
    pub attempt_index: u32,
    /// Assigned by the graph on insert; 0 until then.
    pub created_seq: u64,
}

impl Case {
    pub fn is_golden(&self) -> bool {
        is_golden(self)
    }

    pub fn is_warning(&self) -> bool {
        !self.is_golden()
    }
}

pub fn is_golden(case: &Case) -> bool {
    case.reward.is_pass()
}

/// Finalizes a terminal trajectory into a case. The case id is derived from
/// the task id and attempt index, so identical arguments give identical cases.
pub fn abstract_case(
    trajectory: &Trajectory,
    input: impl Into<String>,
    output: impl Into<String>,
    reward: Reward,
    signature: Signature,
) -> Result<Case, TrajectoryError> {
    if !trajectory.terminal {
        return Err(TrajectoryError::NotTerminal(trajectory.task_id.clone()));
    }
    if trajectory.steps.is_empty() {
        return Err(TrajectoryError::Empty(trajectory.task_id.clone()));
    }
    if trajectory.attempt_index == 0 {
        return Err(TrajectoryError::AttemptIndex {
            attempt: 0,
            max: u32::MAX,
        });
    }
    Ok(Case {
        case_id: CaseId::for_attempt(&trajectory.task_id, trajectory.attempt_index),
        task_id: trajectory.task_id.clone(),
        input: input.into(),
        output: output.into(),
        reward,
        signature,
        attempt_index: trajectory.attempt_index,
        created_seq: 0,
    })
}

/// Query-side partial case: input and context only, never stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvisionalCase {
    pub task_id: TaskId,
    pub input: String,
    pub context: Option<String>,
    pub query_text: String,
}

impl ProvisionalCase {
    pub fn new(task_id: TaskId, input: impl Into<String>, context: Option<String>) -> Self {
        let input = input.into();
        let query_text = match &context {
            Some(ctx) if !ctx.is_empty() => format!("{input}\n{ctx}"),
            _ => input.clone(),
        };
        Self {
            task_id,
            input,
            context,
            query_text,
        }
    }
}

/// Hub node grouping all cases of one task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskAnchor {
    pub anchor_id: String,
    pub task_id: TaskId,
}

impl TaskAnchor {
    pub fn for_task(task_id: &TaskId) -> Self {
        Self {
            anchor_id: format!("anchor:{}", task_id.0),
            task_id: task_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    /// anchor -> case
    Contain,
    /// undirected case - case, weight in [0, 1]
    SimilarTo,
    /// warning -> golden on the same task
    FixedBy,
}
