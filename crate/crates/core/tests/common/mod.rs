//! Reference implementations and generators shared by the integration
//! tests and the acceptance runner.
//!
//! The oracles work from plain edge lists and recompute everything by
//! exhaustive scans; they share only the cosine primitive with the library.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use exg::case::{Case, CaseId, Reward, Signature, TaskId};
use exg::embed::{cosine, EmbeddedCase, Embedding};
use exg::graph::ExperienceGraph;
use exg::hints::{HintKind, HintSet};
use exg::index::VectorIndex;
use exg::rerank::RankedCase;
use exg::retrieve::{CandidatePool, RetrievalConfig, SourceTags};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A graph as flat lists, plus the same graph built through the library.
pub struct RawGraph {
    pub cases: Vec<Case>,
    pub prompts: Vec<Embedding>,
    /// (a, b, w) over positions in `cases`, each unordered pair once.
    pub similar: Vec<(usize, usize, f64)>,
    /// (warning, golden) positions.
    pub fixed: Vec<(usize, usize)>,
    pub graph: ExperienceGraph,
    pub index: VectorIndex,
}

pub struct GenParams {
    pub min_cases: usize,
    pub max_cases: usize,
    pub max_tasks: usize,
    pub dim: usize,
    pub link_prob: f64,
    pub fix_prob: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            min_cases: 0,
            max_cases: 50,
            max_tasks: 8,
            dim: 4,
            link_prob: 0.15,
            fix_prob: 0.6,
        }
    }
}

/// Small-integer vectors so that exact score ties are common.
pub fn tie_prone_embedding(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::from_raw((0..dim).map(|_| rng.random_range(0..3) as f64).collect())
}

/// Weights on a 0.05 grid, again to provoke ties.
pub fn grid_weight(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0..=20) as f64 / 20.0
}

pub fn random_graph(rng: &mut ChaCha8Rng, p: &GenParams) -> RawGraph {
    let n = rng.random_range(p.min_cases..=p.max_cases.max(p.min_cases));
    let n_tasks = rng.random_range(1..=p.max_tasks);
    let mut cases: Vec<Case> = Vec::new();
    let mut prompts = Vec::new();
    let mut similar = Vec::new();
    let mut fixed = Vec::new();
    let mut graph = ExperienceGraph::new();
    let mut index = VectorIndex::new();
    let mut attempts: HashMap<usize, u32> = HashMap::new();
    let mut has_fix: HashSet<usize> = HashSet::new();

    for i in 0..n {
        let t = rng.random_range(0..n_tasks);
        let k = attempts.entry(t).or_insert(0);
        *k += 1;
        let task = TaskId::new(format!("task{t}"));
        let reward = Reward::from_success(rng.random_bool(0.5));
        let case = Case {
            case_id: CaseId::for_attempt(&task, *k),
            task_id: task,
            input: format!("input {i}"),
            output: format!("output {i}"),
            reward,
            signature: if reward.is_pass() {
                Signature::default()
            } else {
                Signature::failure(format!("E{}", rng.random_range(0..3)), "msg")
            },
            attempt_index: *k,
            created_seq: 0,
        };
        let mut links = Vec::new();
        for (j, earlier) in cases.iter().enumerate() {
            if rng.random_bool(p.link_prob) {
                let w = grid_weight(rng);
                links.push((earlier.case_id.clone(), w));
                similar.push((j, i, w));
            }
        }
        let prompt = tie_prone_embedding(rng, p.dim);
        graph.insert_case(case.clone(), &links).unwrap();
        let seq = graph.seq_counter();
        index
            .insert(
                EmbeddedCase {
                    case_id: case.case_id.clone(),
                    prompt: prompt.clone(),
                    failure: None,
                },
                seq,
            )
            .unwrap();
        let mut stored = case;
        stored.created_seq = seq;
        if stored.is_golden() {
            // maybe repair an earlier warning of the same task
            let open: Vec<usize> = (0..i)
                .filter(|&j| cases[j].task_id == stored.task_id && cases[j].is_warning() && !has_fix.contains(&j))
                .collect();
            if !open.is_empty() && rng.random_bool(p.fix_prob) {
                let w = open[rng.random_range(0..open.len())];
                graph.add_fixed_by(&cases[w].case_id, &stored.case_id).unwrap();
                has_fix.insert(w);
                fixed.push((w, i));
            }
        }
        cases.push(stored);
        prompts.push(prompt);
    }
    RawGraph {
        cases,
        prompts,
        similar,
        fixed,
        graph,
        index,
    }
}

impl RawGraph {
    pub fn pos(&self, id: &CaseId) -> usize {
        self.cases.iter().position(|c| &c.case_id == id).unwrap()
    }

    /// All neighbors of `i` by scanning the edge list, heaviest first, then
    /// older first.
    pub fn neighbors(&self, i: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .similar
            .iter()
            .filter_map(|&(a, b, w)| {
                if a == i {
                    Some((b, w))
                } else if b == i {
                    Some((a, w))
                } else {
                    None
                }
            })
            .collect();
        out.sort_by(|x, y| {
            y.1.partial_cmp(&x.1)
                .unwrap()
                .then(self.cases[x.0].created_seq.cmp(&self.cases[y.0].created_seq))
        });
        out
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.similar
            .iter()
            .find(|&&(a, b, _)| (a == i && b == j) || (a == j && b == i))
            .map(|e| e.2)
    }

    pub fn fixed_of(&self, i: usize) -> Option<usize> {
        self.fixed.iter().find(|f| f.0 == i).map(|f| f.1)
    }
}

/// Candidate ids with tags, plus seeds as (id, rho0).
pub type OraclePool = (Vec<(CaseId, SourceTags)>, Vec<(CaseId, f64)>);

/// Candidate pool from first principles:
/// task cases, then each seed with its top neighbors, then fix targets of
/// that list; first occurrence wins; cap last.
pub fn oracle_retrieve(raw: &RawGraph, task: &TaskId, query: &Embedding, cfg: &RetrievalConfig) -> OraclePool {
    if !cfg.enabled {
        return (Vec::new(), Vec::new());
    }
    let seq = |i: usize| raw.cases[i].created_seq;

    let c_task: Vec<usize> = if cfg.use_task_anchor {
        let mut v: Vec<usize> = (0..raw.cases.len()).filter(|&i| &raw.cases[i].task_id == task).collect();
        v.sort_by_key(|&i| seq(i));
        v
    } else {
        vec![]
    };

    let mut anchor_sel = c_task.clone();
    anchor_sel.sort_by(|&a, &b| {
        let wa = raw.cases[a].is_warning();
        let wb = raw.cases[b].is_warning();
        wb.cmp(&wa).then(seq(b).cmp(&seq(a)))
    });
    anchor_sel.truncate(cfg.max_anchor_selected);

    let mut scored: Vec<(usize, f64)> = (0..raw.cases.len())
        .map(|i| (i, cosine(query, &raw.prompts[i]).unwrap()))
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(seq(a.0).cmp(&seq(b.0))));
    scored.truncate(cfg.k_seeds);

    // merged seeds in first-seen order, query side first
    let mut seeds: Vec<(usize, f64)> = Vec::new();
    let mut offer = |i: usize, r: f64| {
        if let Some(s) = seeds.iter_mut().find(|s| s.0 == i) {
            if r > s.1 {
                s.1 = r;
            }
        } else {
            seeds.push((i, r));
        }
    };
    for &(i, s) in &scored {
        offer(i, if s > 0.0 { s } else { 0.0 });
    }
    if cfg.use_task_anchor && cfg.use_similarity {
        for &a in &anchor_sel {
            for (n, w) in raw.neighbors(a).into_iter().take(cfg.fanout_bridge) {
                offer(n, w);
            }
        }
    }
    seeds.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(seq(a.0).cmp(&seq(b.0))));

    let mut c_sim = Vec::new();
    for &(s, _) in &seeds {
        c_sim.push(s);
        if cfg.use_similarity {
            for (n, _) in raw.neighbors(s).into_iter().take(cfg.fanout_sim) {
                c_sim.push(n);
            }
        }
    }
    let c_fix: Vec<usize> = if cfg.use_fix_traces {
        c_sim.iter().filter_map(|&c| raw.fixed_of(c)).collect()
    } else {
        vec![]
    };

    let in_task: BTreeSet<usize> = c_task.iter().copied().collect();
    let in_sim: BTreeSet<usize> = c_sim.iter().copied().collect();
    let in_fix: BTreeSet<usize> = c_fix.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let mut pool = Vec::new();
    for i in c_task.iter().chain(&c_sim).chain(&c_fix) {
        if seen.insert(*i) {
            pool.push(*i);
        }
    }
    pool.truncate(cfg.pool_cap);
    (
        pool.into_iter()
            .map(|i| {
                (
                    raw.cases[i].case_id.clone(),
                    SourceTags {
                        task: in_task.contains(&i),
                        sim: in_sim.contains(&i),
                        fix: in_fix.contains(&i),
                    },
                )
            })
            .collect(),
        seeds
            .into_iter()
            .map(|(i, r)| (raw.cases[i].case_id.clone(), r))
            .collect(),
    )
}

pub fn pool_as_oracle(pool: &CandidatePool) -> OraclePool {
    (
        pool.candidates.iter().map(|c| (c.case_id.clone(), c.sources)).collect(),
        pool.seeds
            .iter()
            .map(|s| (s.case_id.clone(), s.initial_relevance))
            .collect(),
    )
}

/// Exhaustive one-hop propagation: every (candidate, seed) pair is checked
/// against the edge list.
pub fn oracle_rank(raw: &RawGraph, pool: &CandidatePool, propagate: bool) -> Vec<(CaseId, f64)> {
    let seeds: Vec<(usize, f64)> = pool
        .seeds
        .iter()
        .map(|s| (raw.pos(&s.case_id), s.initial_relevance))
        .collect();
    let mut rows: Vec<(usize, f64, f64)> = pool
        .candidates
        .iter()
        .map(|c| {
            let i = raw.pos(&c.case_id);
            let rho0 = seeds
                .iter()
                .filter(|s| s.0 == i)
                .map(|s| s.1)
                .fold(0.0f64, f64::max);
            let mut best = f64::NEG_INFINITY;
            if propagate {
                for &(u, ru) in &seeds {
                    if let Some(w) = raw.weight(u, i) {
                        best = best.max(ru + w);
                    }
                }
            }
            (i, rho0.max(best), rho0)
        })
        .collect();
    rows.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then(b.2.partial_cmp(&a.2).unwrap())
            .then(raw.cases[a.0].created_seq.cmp(&raw.cases[b.0].created_seq))
    });
    rows.into_iter().map(|(i, r, _)| (raw.cases[i].case_id.clone(), r)).collect()
}

/// One selected hint: (kind, source, paired).
pub type OracleHint = (HintKind, CaseId, Option<CaseId>);

/// The two-phase selection written as a literal procedure over positions.
pub fn oracle_hints(raw: &RawGraph, ranked: &[RankedCase], budget: usize, counterparts: bool, fix_limit: usize) -> Vec<OracleHint> {
    let order: Vec<usize> = ranked.iter().map(|r| raw.pos(&r.case_id)).collect();
    let mut s: Vec<OracleHint> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();

    // W_fix <- warnings with a fix edge, in ranked order, at most fix_limit
    let mut w_fix: Vec<usize> = Vec::new();
    for &c in &order {
        if w_fix.len() >= fix_limit {
            break;
        }
        if raw.cases[c].is_warning() && raw.fixed_of(c).is_some() {
            w_fix.push(c);
        }
    }
    for &c in &w_fix {
        if s.len() >= budget {
            return s;
        }
        if !chosen.contains(&c) {
            chosen.push(c);
            let g = raw.fixed_of(c).unwrap();
            s.push((HintKind::FixedBy, raw.cases[c].case_id.clone(), Some(raw.cases[g].case_id.clone())));
        }
    }
    if counterparts {
        for &c in &w_fix {
            if s.len() >= budget {
                return s;
            }
            let g = raw.fixed_of(c).unwrap();
            if !chosen.contains(&g) {
                chosen.push(g);
                s.push((HintKind::Golden, raw.cases[g].case_id.clone(), Some(raw.cases[c].case_id.clone())));
            }
        }
    }
    for &c in &order {
        if s.len() >= budget {
            return s;
        }
        if chosen.contains(&c) {
            continue;
        }
        chosen.push(c);
        let kind = if raw.cases[c].reward == Reward::Fail {
            HintKind::Warning
        } else {
            HintKind::Golden
        };
        s.push((kind, raw.cases[c].case_id.clone(), None));
    }
    s
}

pub fn hints_as_oracle(set: &HintSet) -> Vec<OracleHint> {
    set.hints
        .iter()
        .map(|h| (h.kind, h.source_case_id.clone(), h.paired_case_id.clone()))
        .collect()
}

/// A random ranking over a random subset of the graph's cases.
pub fn random_ranking(rng: &mut ChaCha8Rng, raw: &RawGraph, max_len: usize) -> Vec<RankedCase> {
    let mut ids: Vec<usize> = (0..raw.cases.len()).collect();
    for i in (1..ids.len()).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    ids.truncate(rng.random_range(0..=max_len.min(ids.len())));
    ids.iter()
        .enumerate()
        .map(|(r, &i)| RankedCase {
            case_id: raw.cases[i].case_id.clone(),
            relevance: 1.0 / (r + 1) as f64,
            initial_relevance: 0.0,
            rank: r + 1,
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
