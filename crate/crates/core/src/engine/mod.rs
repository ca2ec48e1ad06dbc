//! The self-evolution loop.
//!
//! Per attempt: retrieve, rerank, build hints, prompt the agent, evaluate,
//! optionally reflect, finalize the case, and (online only) write it back
//! into the graph with its similarity links and any repair edge.

mod backend;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    estimate_tokens, AgentClient, AgentReflector, AgentResponse, BackendError, Clock, Evaluation,
    Evaluator, ManualClock, Reflector, SystemClock,
};

use crate::case::{abstract_case, CaseId, ProvisionalCase, Reward, TaskId, Trajectory, TrajectoryError};
use crate::graph::GraphStats;
use crate::hints::{assemble_prompt, build_hints, HintConfig, HintError, HintKind, HintSet};
use crate::rerank::{propagate_and_rank, RankedCase, RerankConfig, RerankError};
use crate::retrieve::{CandidatePool, RetrievalConfig, RetrieveError};
use crate::store::{ExperienceStore, LinkPolicy, StoreError};
use crate::task::Task;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplate {
    pub system: String,
    pub instruction: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            system: "You are a careful assistant. Use the memory hints when they apply.".into(),
            instruction: "Respond with the final answer only.".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub max_attempts: u32,
    pub mode: Mode,
    pub retrieval: RetrievalConfig,
    pub rerank: RerankConfig,
    pub hint_budget: usize,
    pub include_counterparts: bool,
    /// Cap on repair hints; `None` means the hint budget.
    pub fix_limit: Option<usize>,
    pub reflection_enabled: bool,
    pub similarity_link_m: usize,
    pub similarity_link_threshold: f64,
    /// Off: no retrieval and no graph writes.
    pub memory_enabled: bool,
    /// Off: new cases get no `similar_to` links.
    pub link_similar: bool,
    /// Off: no `fixed_by` edges are added.
    pub link_fixed: bool,
    pub prompt: PromptTemplate,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            max_attempts: 2,
            mode: Mode::Online,
            retrieval: RetrievalConfig::default(),
            rerank: RerankConfig::default(),
            hint_budget: 5,
            include_counterparts: true,
            fix_limit: None,
            reflection_enabled: false,
            similarity_link_m: 5,
            similarity_link_threshold: 0.30,
            memory_enabled: true,
            link_similar: true,
            link_fixed: true,
            prompt: PromptTemplate::default(),
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts < 1 {
            return Err("max_attempts must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.similarity_link_threshold) {
            return Err(format!(
                "similarity_link_threshold must lie in [0, 1], got {}",
                self.similarity_link_threshold
            ));
        }
        self.retrieval.validate()?;
        self.rerank.validate()
    }

    pub fn hint_config(&self) -> HintConfig {
        HintConfig {
            budget: self.hint_budget,
            include_counterparts: self.include_counterparts,
            fix_limit: self.fix_limit,
        }
    }

    pub fn link_policy(&self) -> LinkPolicy {
        LinkPolicy {
            alpha: self.rerank.alpha,
            max_links: if self.link_similar { self.similarity_link_m } else { 0 },
            threshold: self.similarity_link_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt_index: u32,
    pub case_id: CaseId,
    pub reward: Reward,
    /// The attempt itself plus any reflection.
    pub llm_calls: u32,
    pub retrieval_ms: f64,
    pub inference_ms: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub tokens_estimated: bool,
    pub hint_count: usize,
    pub fixed_by_hints: usize,
    pub pool_size: usize,
    /// `similar_to` links created when this case was inserted.
    pub similar_links: usize,
    pub transport_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task_id: TaskId,
    pub attempts: Vec<AttemptRecord>,
    pub solved_at: Option<u32>,
    pub graph_after: GraphStats,
}

impl RunRecord {
    pub fn llm_calls(&self) -> u32 {
        self.attempts.iter().map(|a| a.llm_calls).sum()
    }

    /// Failed on some attempt and succeeded on the next one.
    pub fn repaired(&self) -> bool {
        self.attempts
            .windows(2)
            .any(|w| !w[0].reward.is_pass() && w[1].reward.is_pass())
    }
}

/// Everything computed for one attempt, handed to an optional observer.
#[derive(Debug)]
pub struct AttemptTrace<'a> {
    pub task_id: &'a TaskId,
    pub attempt_index: u32,
    pub pool: &'a CandidatePool,
    pub ranked: &'a [RankedCase],
    pub hints: &'a HintSet,
    pub prompt: &'a str,
    pub reward: Reward,
}

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid loop config: {0}")]
    Config(String),
    #[error("mode {mode:?} requires the graph to be {}", if *.mode == Mode::Offline { "frozen" } else { "writable" })]
    ModeMismatch { mode: Mode },
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Hints(#[from] HintError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Error)]
#[error("task {index} ({task_id}): {source}")]
pub struct StreamError {
    pub index: usize,
    pub task_id: TaskId,
    #[source]
    pub source: LoopError,
}

type Observer = Box<dyn FnMut(&AttemptTrace<'_>) + Send>;

pub struct Engine {
    store: ExperienceStore,
    agent: Box<dyn AgentClient>,
    evaluator: Box<dyn Evaluator>,
    reflector: Option<Box<dyn Reflector>>,
    clock: Box<dyn Clock>,
    observer: Option<Observer>,
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

impl Engine {
    pub fn new(
        store: ExperienceStore,
        agent: impl AgentClient + 'static,
        evaluator: impl Evaluator + 'static,
    ) -> Self {
        Self {
            store,
            agent: Box::new(agent),
            evaluator: Box::new(evaluator),
            reflector: None,
            clock: Box::new(SystemClock::default()),
            observer: None,
        }
    }

    pub fn with_reflector(mut self, reflector: impl Reflector + 'static) -> Self {
        self.reflector = Some(Box::new(reflector));
        self
    }

    pub fn with_clock(mut self, clock: impl Clock + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn with_observer(mut self, observer: impl FnMut(&AttemptTrace<'_>) + Send + 'static) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    pub fn store(&self) -> &ExperienceStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ExperienceStore {
        &mut self.store
    }

    pub fn into_store(self) -> ExperienceStore {
        self.store
    }

    /// Runs `task` for up to `cfg.max_attempts` attempts, stopping at the
    /// first success.
    pub fn run_task(&mut self, task: &Task, cfg: &LoopConfig) -> Result<RunRecord, LoopError> {
        cfg.validate().map_err(LoopError::Config)?;
        let frozen = self.store.graph().is_frozen();
        if frozen != (cfg.mode == Mode::Offline) {
            return Err(LoopError::ModeMismatch { mode: cfg.mode });
        }
        let writes = cfg.mode == Mode::Online && cfg.memory_enabled;
        let mut retrieval = cfg.retrieval.clone();
        retrieval.enabled &= cfg.memory_enabled;
        let hint_cfg = cfg.hint_config();
        let link_policy = cfg.link_policy();
        let user_text = task.user_text();

        let mut attempts = Vec::new();
        let mut solved_at = None;
        let mut previous_failed = false;
        for k in 1..=cfg.max_attempts {
            let provisional = ProvisionalCase::new(task.task_id.clone(), &task.input, task.context.clone());

            let t0 = self.clock.now();
            let pool = self.store.retrieve(&provisional, &retrieval)?;
            let ranked = propagate_and_rank(&pool, self.store.graph(), &cfg.rerank)?;
            let hints = build_hints(&ranked, self.store.graph(), &hint_cfg)?;
            let retrieval_time = self.clock.now().saturating_sub(t0);
            let prompt = assemble_prompt(&cfg.prompt.system, &user_text, &hints, &cfg.prompt.instruction);

            let t1 = self.clock.now();
            let acted = self.agent.act(&prompt);
            let mut inference_time = self.clock.now().saturating_sub(t1);
            let mut llm_calls = 1;
            let mut transport_error = false;
            let (output, mut input_tokens, mut output_tokens, mut tokens_estimated) = match &acted {
                Ok(r) => (r.output.clone(), r.input_tokens, r.output_tokens, r.tokens_estimated),
                Err(_) => {
                    transport_error = true;
                    (String::new(), estimate_tokens(&prompt), 0, true)
                }
            };
            let evaluation = match &acted {
                Err(e) => Evaluation {
                    reward: Reward::Fail,
                    signature: e.signature(),
                },
                Ok(_) => match self.evaluator.evaluate(&task.task_id, &task.input, &output) {
                    Ok(ev) => ev,
                    Err(e) => {
                        transport_error = true;
                        Evaluation {
                            reward: Reward::Fail,
                            signature: e.signature(),
                        }
                    }
                },
            };

            let mut trajectory = Trajectory::new(task.task_id.clone(), k);
            trajectory.push_step(prompt.as_str(), output.as_str(), format!("reward={}", u8::from(evaluation.reward)));
            let trajectory = trajectory.finish();
            trajectory.validate(cfg.max_attempts)?;
            let mut case = abstract_case(&trajectory, &task.input, output, evaluation.reward, evaluation.signature)?;

            if cfg.reflection_enabled && !case.reward.is_pass() && k < cfg.max_attempts {
                if let Some(reflector) = &self.reflector {
                    let t2 = self.clock.now();
                    let reflected = reflector.reflect(&case);
                    inference_time += self.clock.now().saturating_sub(t2);
                    if reflector.counts_as_llm_call() {
                        llm_calls += 1;
                    }
                    match reflected {
                        Ok(r) => {
                            input_tokens += r.input_tokens;
                            output_tokens += r.output_tokens;
                            tokens_estimated |= r.tokens_estimated;
                            if !r.output.trim().is_empty() {
                                case.signature.corrective_feedback = Some(r.output);
                            }
                        }
                        Err(_) => transport_error = true,
                    }
                }
            }

            let reward = case.reward;
            let case_id = case.case_id.clone();
            let mut similar_links = 0;
            if writes {
                let (_, links) = self.store.insert_linked(case, &link_policy)?;
                similar_links = links.len();
                if k > 1 && previous_failed && reward.is_pass() && cfg.link_fixed {
                    let source = self
                        .store
                        .graph()
                        .latest_warning(&task.task_id)
                        .map(|c| c.case_id.clone());
                    if let Some(source) = source {
                        self.store.add_fixed_by(&source, &case_id)?;
                    }
                }
            }

            if let Some(observer) = &mut self.observer {
                observer(&AttemptTrace {
                    task_id: &task.task_id,
                    attempt_index: k,
                    pool: &pool,
                    ranked: &ranked,
                    hints: &hints,
                    prompt: &prompt,
                    reward,
                });
            }
            attempts.push(AttemptRecord {
                attempt_index: k,
                case_id,
                reward,
                llm_calls,
                retrieval_ms: millis(retrieval_time),
                inference_ms: millis(inference_time),
                input_tokens,
                output_tokens,
                tokens_estimated,
                hint_count: hints.len(),
                fixed_by_hints: hints.count(HintKind::FixedBy),
                pool_size: pool.len(),
                similar_links,
                transport_error,
            });
            if reward.is_pass() {
                solved_at = Some(k);
                break;
            }
            previous_failed = true;
        }

        Ok(RunRecord {
            task_id: task.task_id.clone(),
            attempts,
            solved_at,
            graph_after: self.store.graph().stats(),
        })
    }

    /// Runs tasks strictly in order; in online mode each task sees the
    /// graph left by the previous ones.
    pub fn run_stream(&mut self, tasks: &[Task], cfg: &LoopConfig) -> Result<Vec<RunRecord>, StreamError> {
        tasks
            .iter()
            .enumerate()
            .map(|(index, task)| {
                self.run_task(task, cfg).map_err(|source| StreamError {
                    index,
                    task_id: task.task_id.clone(),
                    source,
                })
            })
            .collect()
    }
}
