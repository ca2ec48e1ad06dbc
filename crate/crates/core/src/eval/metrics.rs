//! Attempt-based pass@k, call accounting and learning curves.
//!
//! pass@1 is the fraction of tasks solved on their first attempt and pass@2
//! the fraction solved within two attempts of the retry loop. These are not
//! the sampling-based pass@k estimators.

use serde::{Deserialize, Serialize};

use crate::engine::RunRecord;
use crate::graph::GraphStats;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// 1-based position in the stream.
    pub task_index: usize,
    pub task_id: String,
    pub solved_at: Option<u32>,
    pub attempts: u32,
    pub llm_calls: u32,
    pub retrieval_ms: f64,
    pub inference_ms: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cum_pass_at_1: f64,
    pub cum_pass_at_2: f64,
    pub graph: GraphStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    /// 0 flags an empty run; every rate is then 0.
    pub task_count: usize,
    pub pass_at_1: f64,
    pub pass_at_2: f64,
    pub avg_llm_calls: f64,
    /// Mean per attempt.
    pub avg_retrieval_ms: f64,
    /// Mean per attempt.
    pub avg_inference_ms: f64,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub tokens_estimated: bool,
    pub learning_curve: Vec<CurvePoint>,
}

impl MetricsReport {
    pub fn empty() -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            task_count: 0,
            pass_at_1: 0.0,
            pass_at_2: 0.0,
            avg_llm_calls: 0.0,
            avg_retrieval_ms: 0.0,
            avg_inference_ms: 0.0,
            total_input_tokens: 0,
            total_output_tokens: 0,
            tokens_estimated: false,
            learning_curve: Vec::new(),
        }
    }

    /// Graph statistics after each task.
    pub fn graph_stats_timeline(&self) -> Vec<GraphStats> {
        self.learning_curve.iter().map(|p| p.graph).collect()
    }
}

pub fn compute_metrics(records: &[RunRecord]) -> MetricsReport {
    let mut report = MetricsReport::empty();
    if records.is_empty() {
        return report;
    }
    let n = records.len();
    let (mut solved1, mut solved2, mut calls) = (0usize, 0usize, 0u64);
    let (mut attempts, mut retrieval_ms, mut inference_ms) = (0usize, 0.0, 0.0);
    for (i, r) in records.iter().enumerate() {
        if r.solved_at == Some(1) {
            solved1 += 1;
        }
        if matches!(r.solved_at, Some(1) | Some(2)) {
            solved2 += 1;
        }
        let task_calls = r.llm_calls();
        calls += task_calls as u64;
        attempts += r.attempts.len();
        let r_ms: f64 = r.attempts.iter().map(|a| a.retrieval_ms).sum();
        let i_ms: f64 = r.attempts.iter().map(|a| a.inference_ms).sum();
        retrieval_ms += r_ms;
        inference_ms += i_ms;
        let in_tok: u64 = r.attempts.iter().map(|a| a.input_tokens).sum();
        let out_tok: u64 = r.attempts.iter().map(|a| a.output_tokens).sum();
        report.total_input_tokens += in_tok;
        report.total_output_tokens += out_tok;
        report.tokens_estimated |= r.attempts.iter().any(|a| a.tokens_estimated);
        report.learning_curve.push(CurvePoint {
            task_index: i + 1,
            task_id: r.task_id.to_string(),
            solved_at: r.solved_at,
            attempts: r.attempts.len() as u32,
            llm_calls: task_calls,
            retrieval_ms: r_ms,
            inference_ms: i_ms,
            input_tokens: in_tok,
            output_tokens: out_tok,
            cum_pass_at_1: solved1 as f64 / (i + 1) as f64,
            cum_pass_at_2: solved2 as f64 / (i + 1) as f64,
            graph: r.graph_after,
        });
    }
    report.task_count = n;
    report.pass_at_1 = solved1 as f64 / n as f64;
    report.pass_at_2 = solved2 as f64 / n as f64;
    report.avg_llm_calls = calls as f64 / n as f64;
    if attempts > 0 {
        report.avg_retrieval_ms = retrieval_ms / attempts as f64;
        report.avg_inference_ms = inference_ms / attempts as f64;
    }
    report
}

/// Rebuilds the summary fields from the curve rows, as the report parsers do.
pub(crate) fn summarize_curve(points: Vec<CurvePoint>, tokens_estimated: bool) -> MetricsReport {
    let mut report = MetricsReport::empty();
    let n = points.len();
    if n == 0 {
        return report;
    }
    let s1 = points.iter().filter(|p| p.solved_at == Some(1)).count();
    let s2 = points.iter().filter(|p| matches!(p.solved_at, Some(1) | Some(2))).count();
    let calls: u64 = points.iter().map(|p| p.llm_calls as u64).sum();
    report.tokens_estimated = tokens_estimated;
    report.task_count = n;
    report.pass_at_1 = s1 as f64 / n as f64;
    report.pass_at_2 = s2 as f64 / n as f64;
    report.avg_llm_calls = calls as f64 / n as f64;
    report.total_input_tokens = points.iter().map(|p| p.input_tokens).sum();
    report.total_output_tokens = points.iter().map(|p| p.output_tokens).sum();
    let attempts: usize = points.iter().map(|p| p.attempts as usize).sum();
    if attempts > 0 {
        report.avg_retrieval_ms = points.iter().map(|p| p.retrieval_ms).sum::<f64>() / attempts as f64;
        report.avg_inference_ms = points.iter().map(|p| p.inference_ms).sum::<f64>() / attempts as f64;
    }
    report.learning_curve = points;
    report
}
