//! Ablation switches over a loop configuration.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::LoopConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationConfig {
    pub no_memory: bool,
    pub without_similar: bool,
    pub without_fix: bool,
    pub without_anchor: bool,
}

impl AblationConfig {
    pub const FULL: Self = Self {
        no_memory: false,
        without_similar: false,
        without_fix: false,
        without_anchor: false,
    };

    pub fn no_memory() -> Self {
        Self {
            no_memory: true,
            ..Self::FULL
        }
    }

    pub fn without_similar() -> Self {
        Self {
            without_similar: true,
            ..Self::FULL
        }
    }

    pub fn without_fix() -> Self {
        Self {
            without_fix: true,
            ..Self::FULL
        }
    }

    pub fn without_anchor() -> Self {
        Self {
            without_anchor: true,
            ..Self::FULL
        }
    }

    pub fn is_full(&self) -> bool {
        *self == Self::FULL
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = Vec::new();
        if self.no_memory {
            names.push("no_memory");
        }
        if self.without_similar {
            names.push("without_similar");
        }
        if self.without_fix {
            names.push("without_fix");
        }
        if self.without_anchor {
            names.push("without_anchor");
        }
        if names.is_empty() {
            f.write_str("full")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

impl FromStr for AblationConfig {
    type Err = String;

    /// `full`, or flag names joined by `+` or `,`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut ab = Self::FULL;
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "full" | "none" => {}
                "no_memory" => ab.no_memory = true,
                "without_similar" => ab.without_similar = true,
                "without_fix" => ab.without_fix = true,
                "without_anchor" => ab.without_anchor = true,
                other => return Err(format!("unknown ablation `{other}`")),
            }
        }
        Ok(ab)
    }
}

/// Flags compose; `no_memory` overrides the rest.
pub fn apply_ablation(cfg: &LoopConfig, ab: AblationConfig) -> LoopConfig {
    let mut out = cfg.clone();
    if ab.no_memory {
        out.memory_enabled = false;
        out.retrieval.enabled = false;
        return out;
    }
    if ab.without_similar {
        out.link_similar = false;
        out.retrieval.use_similarity = false;
        out.rerank.propagate = false;
    }
    if ab.without_fix {
        out.link_fixed = false;
        out.retrieval.use_fix_traces = false;
    }
    if ab.without_anchor {
        out.retrieval.use_task_anchor = false;
    }
    out
}
