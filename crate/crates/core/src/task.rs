//! Task records, task files and the seeded collect/test split.

use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case::TaskId;
use crate::eval::suite::MockSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub task_id: TaskId,
    pub input: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Reference answer for the exact-match evaluator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
    /// Behavior of the scripted mock agent on this task; ignored by real
    /// backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock: Option<MockSpec>,
}

impl Task {
    pub fn new(task_id: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            task_id: TaskId::new(task_id),
            input: input.into(),
            context: None,
            expected: None,
            mock: None,
        }
    }

    /// The user block of the prompt.
    pub fn user_text(&self) -> String {
        match &self.context {
            Some(ctx) if !ctx.is_empty() => format!("{}\nContext: {}", self.input, ctx),
            _ => self.input.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum TaskFileError {
    #[error("reading tasks: {0}")]
    Io(#[from] io::Error),
    #[error("task line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("task line {line}: duplicate task id {task_id}")]
    Duplicate { line: usize, task_id: TaskId },
}

/// One JSON object per line; blank lines are skipped.
pub fn read_tasks<R: BufRead>(reader: R) -> Result<Vec<Task>, TaskFileError> {
    let mut tasks = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(&line).map_err(|e| TaskFileError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(task.task_id.clone()) {
            return Err(TaskFileError::Duplicate {
                line: i + 1,
                task_id: task.task_id,
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn write_tasks<W: Write>(tasks: &[Task], mut w: W) -> io::Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Shuffles with a seeded ChaCha8 stream and cuts at `round(n * ratio)`.
/// Returns (collect, test).
pub fn split_tasks(tasks: &[Task], ratio: f64, seed: u64) -> (Vec<Task>, Vec<Task>) {
    let ratio = ratio.clamp(0.0, 1.0);
    let mut shuffled = tasks.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = (tasks.len() as f64 * ratio).round() as usize;
    let test = shuffled.split_off(cut.min(tasks.len()));
    (shuffled, test)
}
