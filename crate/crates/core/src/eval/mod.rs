//! Metrics, ablations, synthetic suites and report export.

pub mod ablation;
pub mod exact;
pub mod metrics;
pub mod report;
pub mod suite;

use std::sync::Arc;

pub use ablation::{apply_ablation, AblationConfig};
pub use exact::ExactMatchEvaluator;
pub use metrics::{compute_metrics, CurvePoint, MetricsReport, REPORT_SCHEMA_VERSION};
pub use report::{export_report, parse_report, ReportError, ReportFormat};
pub use suite::{
    build_ablation_suite, build_designed_suite, build_synthetic_suite, FamilyKind, MockSpec, Requirement,
    ScriptedAgent, ScriptedEvaluator, ScriptedReflector, SyntheticSuite,
};

use crate::embed::HashBagEmbedder;
use crate::engine::{Engine, LoopConfig, ManualClock, RunRecord, StreamError};
use crate::exec::Execution;
use crate::store::ExperienceStore;

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub ablation: AblationConfig,
    pub records: Vec<RunRecord>,
    pub report: MetricsReport,
}

/// Runs the suite once per ablation, each on a fresh in-memory graph with
/// the hashed embedder and a still manual clock. Runs are independent, so
/// `execution` may spread them over threads; each stream stays sequential.
pub fn run_ablation_sweep(
    suite: &SyntheticSuite,
    base: &LoopConfig,
    ablations: &[AblationConfig],
    execution: Execution,
) -> Result<Vec<SweepResult>, StreamError> {
    execution
        .map_coarse(ablations, |&ab| {
            let cfg = apply_ablation(base, ab);
            let store = ExperienceStore::new(Arc::new(HashBagEmbedder::default()));
            let mut engine = Engine::new(store, suite.agent.clone(), suite.evaluator.clone())
                .with_clock(ManualClock::new())
                .with_reflector(ScriptedReflector);
            let records = engine.run_stream(&suite.tasks, &cfg)?;
            Ok(SweepResult {
                ablation: ab,
                report: compute_metrics(&records),
                records,
            })
        })
        .into_iter()
        .collect()
}
