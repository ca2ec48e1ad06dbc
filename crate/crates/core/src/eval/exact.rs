//! Reference-answer grading for live backends.

use std::collections::HashMap;

use crate::case::{Reward, Signature, TaskId};
use crate::engine::{BackendError, Evaluation, Evaluator};
use crate::task::Task;

/// Passes an output equal to the task's `expected` answer after trimming
/// and case folding. Tasks without one always fail.
#[derive(Debug, Clone, Default)]
pub struct ExactMatchEvaluator {
    expected: HashMap<TaskId, String>,
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

impl ExactMatchEvaluator {
    pub fn new(tasks: &[Task]) -> Self {
        Self {
            expected: tasks
                .iter()
                .filter_map(|t| t.expected.as_ref().map(|e| (t.task_id.clone(), normalize(e))))
                .collect(),
        }
    }

    /// Tasks lacking a reference answer.
    pub fn missing(tasks: &[Task]) -> impl Iterator<Item = &TaskId> {
        tasks.iter().filter(|t| t.expected.is_none()).map(|t| &t.task_id)
    }
}

impl Evaluator for ExactMatchEvaluator {
    fn evaluate(&self, task_id: &TaskId, _input: &str, output: &str) -> Result<Evaluation, BackendError> {
        let Some(want) = self.expected.get(task_id) else {
            return Ok(Evaluation {
                reward: Reward::Fail,
                signature: Signature::failure("NoReference", format!("task {task_id} has no expected answer")),
            });
        };
        let got = normalize(output);
        Ok(if &got == want {
            Evaluation {
                reward: Reward::Pass,
                signature: Signature::default(),
            }
        } else {
            let mut sig = Signature::failure("WrongAnswer", format!("expected {want:?}"));
            sig.raw_excerpt = Some(crate::hints::excerpt(output.trim(), 200).to_string());
            Evaluation {
                reward: Reward::Fail,
                signature: sig,
            }
        })
    }
}
