//! TOML run configuration with dotted `key=value` overrides.

use std::path::Path;

use exg::engine::PromptTemplate;
use exg::http::{ChatConfig, EmbeddingConfig};
use exg::{Execution, LoopConfig, RerankConfig, RetrievalConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProvider {
    Hash,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ClockKind {
    /// Mock runs: still clock, so reruns are byte-identical.
    Auto,
    Manual,
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub max_attempts: u32,
    pub hint_budget: usize,
    pub include_counterparts: bool,
    pub fix_limit: Option<usize>,
    pub reflection_enabled: bool,
    pub similarity_link_m: usize,
    pub similarity_link_threshold: f64,
    pub memory_enabled: bool,
    pub link_similar: bool,
    pub link_fixed: bool,
    pub execution: Execution,
    pub clock: ClockKind,
}

impl Default for LoopSection {
    fn default() -> Self {
        let d = LoopConfig::default();
        Self {
            max_attempts: d.max_attempts,
            hint_budget: d.hint_budget,
            include_counterparts: d.include_counterparts,
            fix_limit: d.fix_limit,
            reflection_enabled: d.reflection_enabled,
            similarity_link_m: d.similarity_link_m,
            similarity_link_threshold: d.similarity_link_threshold,
            memory_enabled: d.memory_enabled,
            link_similar: d.link_similar,
            link_fixed: d.link_fixed,
            execution: Execution::default(),
            clock: ClockKind::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub agent: AgentKind,
    pub http: ChatConfig,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            agent: AgentKind::Mock,
            http: ChatConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: EmbeddingProvider,
    /// Dimension of the hashed embedder.
    pub dim: usize,
    pub http: EmbeddingConfig,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            provider: EmbeddingProvider::Hash,
            dim: exg::HashBagEmbedder::default().dim(),
            http: EmbeddingConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
    pub retrieval: RetrievalConfig,
    pub rerank: RerankConfig,
    pub prompt: PromptTemplate,
    pub backend: BackendSection,
    pub embedding: EmbeddingSection,
}

impl RunConfig {
    /// Reads `path` (if any), applies `overrides` in order, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, String> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| format!("config {}: {e}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| format!("config: {e}"))?;
        cfg.loop_config().validate().map_err(|e| format!("config: {e}"))?;
        if cfg.embedding.dim == 0 {
            return Err("config: embedding.dim must be positive".into());
        }
        Ok(cfg)
    }

    pub fn loop_config(&self) -> LoopConfig {
        let l = &self.loop_;
        LoopConfig {
            max_attempts: l.max_attempts,
            retrieval: self.retrieval.clone(),
            rerank: self.rerank.clone(),
            hint_budget: l.hint_budget,
            include_counterparts: l.include_counterparts,
            fix_limit: l.fix_limit,
            reflection_enabled: l.reflection_enabled,
            similarity_link_m: l.similarity_link_m,
            similarity_link_threshold: l.similarity_link_threshold,
            memory_enabled: l.memory_enabled,
            link_similar: l.link_similar,
            link_fixed: l.link_fixed,
            prompt: self.prompt.clone(),
            ..LoopConfig::default()
        }
    }
}

/// `a.b.c=value`; the value is read as a TOML literal, falling back to a
/// bare string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(format!("override `{spec}` has an empty key segment"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("override `{spec}`: `{p}` is not a section"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.loop_config(), LoopConfig::default());
    }

    #[test]
    fn overrides_nest_and_type() {
        let cfg = RunConfig::load(
            None,
            &[
                "loop.max_attempts=3".into(),
                "retrieval.pool_cap=12".into(),
                "prompt.system=be terse".into(),
                "backend.http.model=\"m\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.loop_.max_attempts, 3);
        assert_eq!(cfg.retrieval.pool_cap, 12);
        assert_eq!(cfg.prompt.system, "be terse");
        assert_eq!(cfg.backend.http.model, "m");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["loop.max_attempt=3".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense.x=1".into()]).is_err());
        assert!(RunConfig::load(None, &["retrieval.pool_cap=-1".into()]).is_err());
        assert!(RunConfig::load(None, &["noequals".into()]).is_err());
    }
}
