//! Agent, evaluator and reflector interfaces, plus the clock seam.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::case::{Case, Reward, Signature, TaskId};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub output: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// As reported by the backend.
    pub latency: Duration,
    /// Token counts are whitespace estimates, not provider usage.
    pub tokens_estimated: bool,
}

impl AgentResponse {
    /// A response whose token counts are estimated from the texts.
    pub fn estimated(prompt: &str, output: impl Into<String>) -> Self {
        let output = output.into();
        Self {
            input_tokens: estimate_tokens(prompt),
            output_tokens: estimate_tokens(&output),
            output,
            latency: Duration::ZERO,
            tokens_estimated: true,
        }
    }
}

/// Whitespace token count.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("unexpected response: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Signature recorded on an attempt that failed because of this error.
    pub fn signature(&self) -> Signature {
        Signature::failure("TransportError", self.to_string())
    }
}

/// One `act` call is one LLM call.
pub trait AgentClient: Send + Sync {
    fn act(&self, prompt: &str) -> Result<AgentResponse, BackendError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub reward: Reward,
    pub signature: Signature,
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, task_id: &TaskId, input: &str, output: &str) -> Result<Evaluation, BackendError>;
}

/// Produces corrective feedback for a failed attempt.
pub trait Reflector: Send + Sync {
    fn reflect(&self, case: &Case) -> Result<AgentResponse, BackendError>;

    /// Whether a reflection costs an LLM call.
    fn counts_as_llm_call(&self) -> bool {
        true
    }
}

/// Reflection through an agent client.
pub struct AgentReflector<A> {
    agent: A,
}

impl<A: AgentClient> AgentReflector<A> {
    pub fn new(agent: A) -> Self {
        Self { agent }
    }

    pub fn prompt(case: &Case) -> String {
        format!(
            "The following attempt failed.\nTask:\n{}\nOutput:\n{}\nFailure:\n{}\n\nIn one or two sentences, state what to do differently next time.",
            case.input,
            case.output,
            case.signature.failure_text()
        )
    }
}

impl<A: AgentClient> Reflector for AgentReflector<A> {
    fn reflect(&self, case: &Case) -> Result<AgentResponse, BackendError> {
        self.agent.act(&Self::prompt(case))
    }
}

impl<T: AgentClient + ?Sized> AgentClient for Box<T> {
    fn act(&self, prompt: &str) -> Result<AgentResponse, BackendError> {
        (**self).act(prompt)
    }
}

impl<T: AgentClient + ?Sized> AgentClient for std::sync::Arc<T> {
    fn act(&self, prompt: &str) -> Result<AgentResponse, BackendError> {
        (**self).act(prompt)
    }
}

/// Monotonic time since an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
}

/// Deterministic clock: advances only when told to, plus a fixed tick on
/// every reading.
#[derive(Debug, Default)]
pub struct ManualClock {
    nanos: AtomicU64,
    tick: u64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tick(tick: Duration) -> Self {
        Self {
            nanos: AtomicU64::new(0),
            tick: tick.as_nanos() as u64,
        }
    }

    pub fn advance(&self, by: Duration) {
        self.nanos.fetch_add(by.as_nanos() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        Duration::from_nanos(self.nanos.fetch_add(self.tick, Ordering::SeqCst))
    }
}
