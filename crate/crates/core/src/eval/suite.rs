//! Synthetic task families and the scripted agent that solves them.
//!
//! Every task belongs to a family with its own failure type. The scripted
//! agent reads the prompt, finds its task from the user block, and succeeds
//! only when the memory hints satisfy that task's requirement. Behavior is a
//! pure function of (task, prompt), so the loop's causal path from graph to
//! hints to outcome can be checked without a model.
//!
//! Task inputs are bags of pseudo-words chosen to land in distinct embedding
//! buckets (while buckets last), so cosine similarities between inputs are
//! exact ratios of shared words.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::case::{Case, Reward, Signature, TaskId};
use crate::embed::{tokenize, HashBagEmbedder};
use crate::engine::{AgentClient, AgentResponse, BackendError, Evaluation, Evaluator, Reflector};
use crate::hints::{HintKind, MEMORY_HEADER};
use crate::task::Task;

/// What the prompt's hints must contain for the scripted agent to succeed.
/// Only `[WARNING]` and `[FIXED_BY]` hints whose failure type equals the
/// task family's count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Requirement {
    Never,
    AnyFailureHint,
    AtLeast { count: usize },
    FixedBy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    pub family_id: String,
    pub failure_type: String,
    pub requirement: Requirement,
}

impl MockSpec {
    /// The task's own spec, or a generic one keyed on the first input word:
    /// family `w`, failure type `WError`, any matching failure hint.
    pub fn for_task(task: &Task) -> MockSpec {
        if let Some(spec) = &task.mock {
            return spec.clone();
        }
        let family = tokenize(&task.input).next().unwrap_or_else(|| "task".into());
        MockSpec {
            failure_type: format!("{}Error", capitalize(&family)),
            family_id: family,
            requirement: Requirement::AnyFailureHint,
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut cs = w.chars();
    match cs.next() {
        Some(c) => c.to_uppercase().chain(cs).collect(),
        None => String::new(),
    }
}

pub fn expected_output(task_id: &TaskId) -> String {
    format!("answer:{task_id}")
}

/// Hints as the scripted agent sees them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedHint {
    pub kind: HintKind,
    pub failure_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptView {
    pub user: String,
    pub hints: Vec<ParsedHint>,
}

/// Splits an assembled prompt into its user block and hint blocks.
pub fn parse_prompt(prompt: &str) -> PromptView {
    let after_user = prompt.split_once("User:\n").map(|(_, r)| r).unwrap_or("");
    let marker = format!("\n\n{MEMORY_HEADER}\n");
    let (user, hint_part) = match after_user.find(&marker) {
        Some(i) => (&after_user[..i], Some(&after_user[i + marker.len()..])),
        None => match after_user.rfind("\n\n") {
            Some(i) => (&after_user[..i], None),
            None => (after_user, None),
        },
    };
    let mut hints: Vec<ParsedHint> = Vec::new();
    if let Some(part) = hint_part {
        let part = part.rfind("\n\n").map(|i| &part[..i]).unwrap_or(part);
        for line in part.lines() {
            let kind = [HintKind::FixedBy, HintKind::Warning, HintKind::Golden]
                .into_iter()
                .find(|k| line.starts_with(k.header()));
            if let Some(kind) = kind {
                hints.push(ParsedHint {
                    kind,
                    failure_type: None,
                });
            } else if let (Some(rest), Some(h)) = (line.strip_prefix("Failure: "), hints.last_mut()) {
                if h.failure_type.is_none() {
                    h.failure_type = rest.split(':').next().map(|t| t.trim().to_string());
                }
            }
        }
    }
    PromptView {
        user: user.to_string(),
        hints,
    }
}

/// Whether `hints` satisfy `spec`.
pub fn requirement_met(spec: &MockSpec, hints: &[ParsedHint]) -> bool {
    let matching = |h: &&ParsedHint| h.failure_type.as_deref() == Some(spec.failure_type.as_str());
    let failure_hints = hints
        .iter()
        .filter(|h| matches!(h.kind, HintKind::Warning | HintKind::FixedBy))
        .filter(matching)
        .count();
    match spec.requirement {
        Requirement::Never => false,
        Requirement::AnyFailureHint => failure_hints >= 1,
        Requirement::AtLeast { count } => failure_hints >= count,
        Requirement::FixedBy => hints.iter().filter(|h| h.kind == HintKind::FixedBy).any(|h| matching(&h)),
    }
}

#[derive(Debug)]
struct Script {
    by_user_text: HashMap<String, (TaskId, MockSpec)>,
    by_task: HashMap<TaskId, MockSpec>,
}

impl Script {
    fn new(tasks: &[Task]) -> Self {
        let mut by_user_text = HashMap::new();
        let mut by_task = HashMap::new();
        for t in tasks {
            let spec = MockSpec::for_task(t);
            by_user_text.insert(t.user_text(), (t.task_id.clone(), spec.clone()));
            by_task.insert(t.task_id.clone(), spec);
        }
        Self { by_user_text, by_task }
    }
}

/// Deterministic stand-in for an LLM; see the module docs.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    script: Arc<Script>,
}

impl ScriptedAgent {
    pub fn new(tasks: &[Task]) -> Self {
        Self {
            script: Arc::new(Script::new(tasks)),
        }
    }
}

impl AgentClient for ScriptedAgent {
    fn act(&self, prompt: &str) -> Result<AgentResponse, BackendError> {
        let view = parse_prompt(prompt);
        let (task_id, spec) = self
            .script
            .by_user_text
            .get(&view.user)
            .ok_or_else(|| BackendError::Protocol("prompt names no scripted task".into()))?;
        let output = if requirement_met(spec, &view.hints) {
            expected_output(task_id)
        } else {
            format!("guess:{task_id}")
        };
        Ok(AgentResponse::estimated(prompt, output))
    }
}

/// Passes exactly the scripted answer; failures carry the family's type.
#[derive(Debug, Clone)]
pub struct ScriptedEvaluator {
    script: Arc<Script>,
}

impl ScriptedEvaluator {
    pub fn new(tasks: &[Task]) -> Self {
        Self {
            script: Arc::new(Script::new(tasks)),
        }
    }
}

impl Evaluator for ScriptedEvaluator {
    fn evaluate(&self, task_id: &TaskId, _input: &str, output: &str) -> Result<Evaluation, BackendError> {
        let spec = self
            .script
            .by_task
            .get(task_id)
            .ok_or_else(|| BackendError::Protocol(format!("unknown task {task_id}")))?;
        Ok(if output == expected_output(task_id) {
            Evaluation {
                reward: Reward::Pass,
                signature: Signature::default(),
            }
        } else {
            Evaluation {
                reward: Reward::Fail,
                signature: Signature::failure(&spec.failure_type, format!("{} raised", spec.failure_type)),
            }
        })
    }
}

/// Canned one-line feedback naming the failure type.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedReflector;

impl Reflector for ScriptedReflector {
    fn reflect(&self, case: &Case) -> Result<AgentResponse, BackendError> {
        let ftype = case.signature.failure_type.as_deref().unwrap_or("unknown");
        Ok(AgentResponse::estimated(&case.input, format!("Guard against {ftype} before answering.")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Member 0 never succeeds; the rest need one matching failure hint.
    Direct,
    /// Member 0 never succeeds, member 1 needs three matching failure
    /// hints, the rest need a matching repair hint.
    Repair,
    /// Like `Repair`, but later members share no words with member 1 and
    /// reach its repair only through member 0's similarity links.
    Bridge,
}

#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub tasks: Vec<Task>,
    pub agent: ScriptedAgent,
    pub evaluator: ScriptedEvaluator,
}

impl SyntheticSuite {
    fn from_tasks(tasks: Vec<Task>) -> Self {
        Self {
            agent: ScriptedAgent::new(&tasks),
            evaluator: ScriptedEvaluator::new(&tasks),
            tasks,
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const BLOCK: usize = 4;

/// Seeded pseudo-word source; words land in unused embedding buckets until
/// every bucket is taken.
struct Vocab {
    rng: ChaCha8Rng,
    embedder: HashBagEmbedder,
    words: HashSet<String>,
    buckets: HashSet<usize>,
}

impl Vocab {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            embedder: HashBagEmbedder::default(),
            words: HashSet::new(),
            buckets: HashSet::new(),
        }
    }

    fn candidate(&mut self) -> String {
        let mut w = String::new();
        for _ in 0..3 {
            w.push(CONSONANTS[self.rng.random_range(0..CONSONANTS.len())] as char);
            w.push(VOWELS[self.rng.random_range(0..VOWELS.len())] as char);
        }
        w
    }

    fn word(&mut self) -> String {
        let full = self.buckets.len() >= self.embedder.dim();
        loop {
            let w = self.candidate();
            if self.words.contains(&w) {
                continue;
            }
            let b = self.embedder.bucket(&w);
            if full || !self.buckets.contains(&b) {
                self.buckets.insert(b);
                self.words.insert(w.clone());
                return w;
            }
        }
    }

    fn block(&mut self) -> Vec<String> {
        (0..BLOCK).map(|_| self.word()).collect()
    }
}

fn family_tasks(vocab: &mut Vocab, family: usize, kind: FamilyKind, size: usize) -> Vec<Task> {
    let family_id = format!("fam{family}");
    let failure_type = format!("{}Error", capitalize(&vocab.word()));
    // Direct/Repair: [core]; Bridge: [a, b, c]
    let shared: Vec<Vec<String>> = match kind {
        FamilyKind::Bridge => (0..3).map(|_| vocab.block()).collect(),
        _ => vec![vocab.block()],
    };
    (0..size)
        .map(|j| {
            let words: Vec<String> = match (kind, j) {
                (FamilyKind::Bridge, 0) => [shared[1].clone(), shared[2].clone()].concat(),
                (FamilyKind::Bridge, 1) => [shared[0].clone(), shared[1].clone()].concat(),
                (FamilyKind::Bridge, _) => [shared[2].clone(), vocab.block()].concat(),
                _ => [shared[0].clone(), vocab.block()].concat(),
            };
            let requirement = match (kind, j) {
                (_, 0) => Requirement::Never,
                (FamilyKind::Direct, _) => Requirement::AnyFailureHint,
                (_, 1) => Requirement::AtLeast { count: 3 },
                _ => Requirement::FixedBy,
            };
            Task {
                task_id: TaskId::new(format!("{family_id}-t{j}")),
                input: words.join(" "),
                context: None,
                expected: None,
                mock: Some(MockSpec {
                    family_id: family_id.clone(),
                    failure_type: failure_type.clone(),
                    requirement,
                }),
            }
        })
        .collect()
}

/// `n_families` direct families of `tasks_per_family` tasks each. Every
/// family's first member fails regardless of hints; later members succeed
/// iff a warning or repair hint of their family is in the prompt. The first
/// members of all families come first, then the rest round-robin.
pub fn build_synthetic_suite(n_families: usize, tasks_per_family: usize, seed: u64) -> SyntheticSuite {
    let mut vocab = Vocab::new(seed);
    let families: Vec<Vec<Task>> = (0..n_families.max(1))
        .map(|f| family_tasks(&mut vocab, f, FamilyKind::Direct, tasks_per_family))
        .collect();
    let mut tasks = Vec::with_capacity(n_families * tasks_per_family);
    for j in 0..tasks_per_family {
        for fam in &families {
            tasks.push(fam[j].clone());
        }
    }
    SyntheticSuite::from_tasks(tasks)
}

/// One family per entry of `kinds`, each run as a contiguous block.
pub fn build_designed_suite(kinds: &[FamilyKind], tasks_per_family: usize, seed: u64) -> SyntheticSuite {
    let mut vocab = Vocab::new(seed);
    let tasks = kinds
        .iter()
        .enumerate()
        .flat_map(|(f, &kind)| family_tasks(&mut vocab, f, kind, tasks_per_family))
        .collect();
    SyntheticSuite::from_tasks(tasks)
}

/// Direct, repair and bridge families of five tasks each.
pub fn build_ablation_suite(seed: u64) -> SyntheticSuite {
    build_designed_suite(&[FamilyKind::Direct, FamilyKind::Repair, FamilyKind::Bridge], 5, seed)
}
