//! CSV and JSON-lines report export.
//!
//! CSV carries one row per learning-curve point with a `schema_version`
//! column; the summary is recomputed from the rows on parse. JSON lines
//! start with a summary object, then one object per curve point.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{summarize_curve, CurvePoint, MetricsReport, REPORT_SCHEMA_VERSION};
use crate::graph::GraphStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    JsonLines,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json-lines" | "json_lines" => Ok(Self::JsonLines),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("report schema version {found} is not supported")]
    Version { found: u32 },
    #[error("malformed report: {0}")]
    Malformed(String),
}

pub const CSV_COLUMNS: [&str; 20] = [
    "schema_version",
    "task_index",
    "task_id",
    "solved_at",
    "attempts",
    "llm_calls",
    "retrieval_ms",
    "inference_ms",
    "input_tokens",
    "output_tokens",
    "tokens_estimated",
    "cum_pass_at_1",
    "cum_pass_at_2",
    "case_count",
    "golden_count",
    "warning_count",
    "anchor_count",
    "similar_to_count",
    "fixed_by_count",
    "solved",
];

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    schema_version: u32,
    task_index: usize,
    task_id: String,
    solved_at: Option<u32>,
    attempts: u32,
    llm_calls: u32,
    retrieval_ms: f64,
    inference_ms: f64,
    input_tokens: u64,
    output_tokens: u64,
    tokens_estimated: bool,
    cum_pass_at_1: f64,
    cum_pass_at_2: f64,
    case_count: usize,
    golden_count: usize,
    warning_count: usize,
    anchor_count: usize,
    similar_to_count: usize,
    fixed_by_count: usize,
    solved: bool,
}

impl CsvRow {
    fn from_point(p: &CurvePoint, tokens_estimated: bool) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            task_index: p.task_index,
            task_id: p.task_id.clone(),
            solved_at: p.solved_at,
            attempts: p.attempts,
            llm_calls: p.llm_calls,
            retrieval_ms: p.retrieval_ms,
            inference_ms: p.inference_ms,
            input_tokens: p.input_tokens,
            output_tokens: p.output_tokens,
            tokens_estimated,
            cum_pass_at_1: p.cum_pass_at_1,
            cum_pass_at_2: p.cum_pass_at_2,
            case_count: p.graph.case_count,
            golden_count: p.graph.golden_count,
            warning_count: p.graph.warning_count,
            anchor_count: p.graph.anchor_count,
            similar_to_count: p.graph.similar_to_count,
            fixed_by_count: p.graph.fixed_by_count,
            solved: p.solved_at.is_some(),
        }
    }

    fn into_point(self) -> CurvePoint {
        CurvePoint {
            task_index: self.task_index,
            task_id: self.task_id,
            solved_at: self.solved_at,
            attempts: self.attempts,
            llm_calls: self.llm_calls,
            retrieval_ms: self.retrieval_ms,
            inference_ms: self.inference_ms,
            input_tokens: self.input_tokens,
            output_tokens: self.output_tokens,
            cum_pass_at_1: self.cum_pass_at_1,
            cum_pass_at_2: self.cum_pass_at_2,
            graph: GraphStats {
                case_count: self.case_count,
                golden_count: self.golden_count,
                warning_count: self.warning_count,
                anchor_count: self.anchor_count,
                similar_to_count: self.similar_to_count,
                fixed_by_count: self.fixed_by_count,
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum JsonLine {
    Summary {
        schema_version: u32,
        task_count: usize,
        pass_at_1: f64,
        pass_at_2: f64,
        avg_llm_calls: f64,
        avg_retrieval_ms: f64,
        avg_inference_ms: f64,
        total_input_tokens: u64,
        total_output_tokens: u64,
        tokens_estimated: bool,
    },
    Curve(CurvePoint),
}

pub fn export_report<W: Write>(report: &MetricsReport, sink: W, format: ReportFormat) -> Result<(), ReportError> {
    match format {
        ReportFormat::Csv => export_csv(report, sink),
        ReportFormat::JsonLines => export_jsonl(report, sink),
    }
}

fn export_csv<W: Write>(report: &MetricsReport, sink: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
    w.write_record(CSV_COLUMNS)?;
    for p in &report.learning_curve {
        w.serialize(CsvRow::from_point(p, report.tokens_estimated))?;
    }
    w.flush()?;
    Ok(())
}

fn export_jsonl<W: Write>(report: &MetricsReport, mut sink: W) -> Result<(), ReportError> {
    let summary = JsonLine::Summary {
        schema_version: report.schema_version,
        task_count: report.task_count,
        pass_at_1: report.pass_at_1,
        pass_at_2: report.pass_at_2,
        avg_llm_calls: report.avg_llm_calls,
        avg_retrieval_ms: report.avg_retrieval_ms,
        avg_inference_ms: report.avg_inference_ms,
        total_input_tokens: report.total_input_tokens,
        total_output_tokens: report.total_output_tokens,
        tokens_estimated: report.tokens_estimated,
    };
    serde_json::to_writer(&mut sink, &summary)?;
    sink.write_all(b"\n")?;
    for p in &report.learning_curve {
        serde_json::to_writer(&mut sink, &JsonLine::Curve(p.clone()))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn parse_report<R: BufRead>(source: R, format: ReportFormat) -> Result<MetricsReport, ReportError> {
    match format {
        ReportFormat::Csv => parse_csv(source),
        ReportFormat::JsonLines => parse_jsonl(source),
    }
}

fn parse_csv<R: BufRead>(source: R) -> Result<MetricsReport, ReportError> {
    let mut r = csv::Reader::from_reader(source);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_COLUMNS {
        return Err(ReportError::Malformed(format!("unexpected CSV header {header:?}")));
    }
    let mut points = Vec::new();
    let mut estimated = false;
    for row in r.deserialize::<CsvRow>() {
        let row = row?;
        if row.schema_version != REPORT_SCHEMA_VERSION {
            return Err(ReportError::Version {
                found: row.schema_version,
            });
        }
        estimated |= row.tokens_estimated;
        points.push(row.into_point());
    }
    Ok(summarize_curve(points, estimated))
}

fn parse_jsonl<R: BufRead>(source: R) -> Result<MetricsReport, ReportError> {
    let mut lines = source.lines().filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
    let first = lines
        .next()
        .ok_or_else(|| ReportError::Malformed("missing summary line".into()))??;
    let mut report = match serde_json::from_str(&first)? {
        JsonLine::Summary {
            schema_version,
            task_count,
            pass_at_1,
            pass_at_2,
            avg_llm_calls,
            avg_retrieval_ms,
            avg_inference_ms,
            total_input_tokens,
            total_output_tokens,
            tokens_estimated,
        } => {
            if schema_version != REPORT_SCHEMA_VERSION {
                return Err(ReportError::Version { found: schema_version });
            }
            MetricsReport {
                schema_version,
                task_count,
                pass_at_1,
                pass_at_2,
                avg_llm_calls,
                avg_retrieval_ms,
                avg_inference_ms,
                total_input_tokens,
                total_output_tokens,
                tokens_estimated,
                learning_curve: Vec::new(),
            }
        }
        JsonLine::Curve(_) => return Err(ReportError::Malformed("first line must be the summary".into())),
    };
    for line in lines {
        match serde_json::from_str(&line?)? {
            JsonLine::Curve(p) => report.learning_curve.push(p),
            JsonLine::Summary { .. } => return Err(ReportError::Malformed("second summary line".into())),
        }
    }
    if report.learning_curve.len() != report.task_count {
        return Err(ReportError::Malformed(format!(
            "summary lists {} tasks but {} curve rows follow",
            report.task_count,
            report.learning_curve.len()
        )));
    }
    Ok(report)
}
