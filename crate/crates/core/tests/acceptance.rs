//! Acceptance suite: one line per criterion, non-zero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use common::*;
use exg::case::{Case, CaseId, ProvisionalCase, Reward, Signature, TaskId};
use exg::embed::EmbeddedCase;
use exg::engine::{Engine, LoopConfig, ManualClock, Mode, RunRecord};
use exg::eval::suite::{build_ablation_suite, build_designed_suite, build_synthetic_suite, FamilyKind};
use exg::eval::{apply_ablation, compute_metrics, export_report, AblationConfig, ReportFormat, SyntheticSuite};
use exg::graph::{read_snapshot, snapshot_bytes, snapshot_digest, ExperienceGraph};
use exg::hints::{assemble_prompt, build_hints, HintConfig};
use exg::rerank::{case_similarity, propagate_and_rank, RerankConfig};
use exg::retrieve::{retrieve_with_query, Candidate, CandidatePool, RetrievalConfig, SeedOrigin, SeededCase, SourceTags};
use exg::task::split_tasks;
use exg::{Embedding, Execution, ExperienceStore, HashBagEmbedder};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn engine(suite: &SyntheticSuite) -> Engine {
    let store = ExperienceStore::new(Arc::new(HashBagEmbedder::default()));
    Engine::new(store, suite.agent.clone(), suite.evaluator.clone()).with_clock(ManualClock::new())
}

fn run(suite: &SyntheticSuite, ab: AblationConfig) -> Vec<RunRecord> {
    engine(suite)
        .run_stream(&suite.tasks, &apply_ablation(&LoopConfig::default(), ab))
        .expect("stream")
}

fn retrieval_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng(101);
    let mut sizes = 0;
    for trial in 0..200 {
        let raw = random_graph(&mut r, &GenParams::default());
        let task = TaskId::new(format!("task{}", r.random_range(0..9)));
        let query = tie_prone_embedding(&mut r, 4);
        let cfg = RetrievalConfig {
            pool_cap: usize::MAX,
            ..RetrievalConfig::default()
        };
        let pool = retrieve_with_query(&raw.graph, &raw.index, &ProvisionalCase::new(task.clone(), "q", None), &query, &cfg)
            .map_err(|e| e.to_string())?;
        sizes += pool.len();
        check(pool_as_oracle(&pool) == oracle_retrieve(&raw, &task, &query, &cfg), || {
            format!("mismatch on graph {trial}")
        })?;
    }
    let took = started.elapsed();
    check(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("200 graphs equal, mean pool {:.1}, {took:.2?}", sizes as f64 / 200.0))
}

fn rerank_oracle() -> Outcome {
    let started = Instant::now();
    let mut r = rng(202);
    for trial in 0..500 {
        let raw = random_graph(
            &mut r,
            &GenParams {
                link_prob: 0.3,
                ..GenParams::default()
            },
        );
        let n = raw.cases.len();
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, r.random_range(0..=i));
        }
        let n_cand = r.random_range(0..=30usize.min(n));
        let cands = &order[..n_cand];
        let n_seed = r.random_range(0..=10usize.min(n_cand));
        let pool = CandidatePool {
            candidates: cands
                .iter()
                .map(|&i| Candidate {
                    case_id: raw.cases[i].case_id.clone(),
                    sources: SourceTags::default(),
                })
                .collect(),
            seeds: cands[..n_seed]
                .iter()
                .map(|&i| SeededCase {
                    case_id: raw.cases[i].case_id.clone(),
                    initial_relevance: grid_weight(&mut r),
                    origin: SeedOrigin::QuerySeed,
                })
                .collect(),
        };
        let got: Vec<(CaseId, f64)> = propagate_and_rank(&pool, &raw.graph, &RerankConfig::default())
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|x| (x.case_id, x.relevance))
            .collect();
        check(got == oracle_rank(&raw, &pool, true), || format!("mismatch on pool {trial}"))?;
    }
    let took = started.elapsed();
    check(took < Duration::from_secs(2), || format!("took {took:?}"))?;
    Ok(format!("500 pools equal, {took:.2?}"))
}

fn similarity_spots() -> Outcome {
    let case = |p: Vec<f64>, f: Option<Vec<f64>>| EmbeddedCase {
        case_id: "x".into(),
        prompt: Embedding::from_raw(p),
        failure: f.map(Embedding::from_raw),
    };
    let a = case(vec![0.3, 0.4, 0.5], Some(vec![1.0, 2.0, 0.0]));
    let b = case(vec![1.0, 0.0], None);
    let c = case(vec![0.5, 3f64.sqrt() / 2.0], Some(vec![1.0, 0.0]));
    let d = case(vec![1.0, 0.0], Some(vec![1.0, 0.0]));
    let e = case(vec![0.6, 0.8], Some(vec![0.9, 0.19f64.sqrt()]));
    let got = [
        case_similarity(&a, &a, 0.8).unwrap(),
        case_similarity(&b, &c, 0.8).unwrap(),
        case_similarity(&d, &e, 0.8).unwrap(),
    ];
    let want = [1.0, 0.40, 0.66];
    for (g, w) in got.iter().zip(want) {
        check((g - w).abs() <= 1e-12, || format!("got {g}, want {w}"))?;
    }
    Ok(format!("{:.12} {:.12} {:.12}", got[0], got[1], got[2]))
}

fn hints_oracle() -> Outcome {
    let mut r = rng(404);
    let mut max_len = 0;
    for trial in 0..300 {
        let raw = random_graph(
            &mut r,
            &GenParams {
                max_cases: 30,
                max_tasks: 4,
                ..GenParams::default()
            },
        );
        let ranked = random_ranking(&mut r, &raw, 15);
        let cfg = HintConfig::default();
        let set = build_hints(&ranked, &raw.graph, &cfg).map_err(|e| e.to_string())?;
        max_len = max_len.max(set.len());
        check(set.len() <= 5, || format!("trial {trial}: {} hints", set.len()))?;
        check(hints_as_oracle(&set) == oracle_hints(&raw, &ranked, 5, true, 5), || {
            format!("mismatch on list {trial}")
        })?;
    }
    Ok(format!("300 lists equal, max {max_len} hints"))
}

fn defaults_and_pool_bound() -> Outcome {
    let l = LoopConfig::default();
    let r = &l.retrieval;
    check(
        (r.k_seeds, r.fanout_sim, r.fanout_bridge, r.pool_cap, l.hint_budget, l.max_attempts) == (10, 5, 5, 30, 5, 2)
            && l.rerank.alpha == 0.8,
        || format!("{l:?}"),
    )?;
    let kinds: Vec<FamilyKind> = (0..100)
        .map(|i| [FamilyKind::Direct, FamilyKind::Repair, FamilyKind::Bridge][i % 3])
        .collect();
    let suite = build_designed_suite(&kinds, 5, 55);
    let largest = Arc::new(Mutex::new(0usize));
    let sink = largest.clone();
    let mut e = engine(&suite).with_observer(move |t| {
        let mut m = sink.lock().unwrap();
        *m = (*m).max(t.pool.len());
    });
    let records = e.run_stream(&suite.tasks, &l).map_err(|e| e.to_string())?;
    let max = *largest.lock().unwrap();
    check(records.len() == 500, || format!("{} tasks", records.len()))?;
    check(max <= 30, || format!("pool of {max}"))?;
    Ok(format!(
        "defaults ok, 500 tasks / {} cases, largest pool {max}",
        e.store().graph().len()
    ))
}

fn online_causality() -> Outcome {
    let suite = build_synthetic_suite(1, 5, 0);
    let full = compute_metrics(&run(&suite, AblationConfig::FULL));
    let bare = compute_metrics(&run(&suite, AblationConfig::no_memory()));
    let got = (full.pass_at_1, full.avg_llm_calls, bare.pass_at_1, bare.avg_llm_calls);
    check(
        (got.0 - 0.8).abs() < 1e-12 && (got.1 - 1.2).abs() < 1e-12 && got.2 == 0.0 && got.3 == 2.0,
        || format!("{got:?}"),
    )?;
    Ok(format!(
        "full pass@1 {:.1} calls {:.1}; no_memory pass@1 {:.1} calls {:.1}",
        got.0, got.1, got.2, got.3
    ))
}

fn ablation_ordering() -> Outcome {
    let suite = build_ablation_suite(0);
    let p = |ab| compute_metrics(&run(&suite, ab)).pass_at_1;
    let full = p(AblationConfig::FULL);
    let no_fix = p(AblationConfig::without_fix());
    let no_sim = p(AblationConfig::without_similar());
    let none = p(AblationConfig::no_memory());
    let anchorless = p(AblationConfig::without_anchor());
    let line = format!(
        "full {full:.3} > without_fix {no_fix:.3}; full > without_similar {no_sim:.3} > no_memory {none:.3} (without_anchor {anchorless:.3})"
    );
    let expected = [10.0 / 15.0, 4.0 / 15.0, 7.0 / 15.0, 0.0];
    check(
        full > no_fix && full > no_sim && no_sim > none,
        || line.clone(),
    )?;
    check(
        [full, no_fix, no_sim, none]
            .iter()
            .zip(expected)
            .all(|(g, w)| (g - w).abs() < 1e-12),
        || format!("{line}; hand-simulated values differ"),
    )?;
    Ok(line)
}

fn offline_purity() -> Outcome {
    let suite = build_synthetic_suite(10, 8, 5);
    let (collect, test) = split_tasks(&suite.tasks, 0.375, 8);
    check(test.len() == 50, || format!("{} test tasks", test.len()))?;
    let mut e = engine(&suite);
    e.run_stream(&collect, &LoopConfig::default()).map_err(|e| e.to_string())?;
    let mut graph = e.into_store().into_graph();
    graph.freeze();
    let before = snapshot_digest(&graph);
    let offline = LoopConfig {
        mode: Mode::Offline,
        ..LoopConfig::default()
    };
    let replay = |g: ExperienceGraph| -> Result<(Vec<u8>, String), String> {
        let store = ExperienceStore::from_graph(g, Arc::new(HashBagEmbedder::default()), Execution::default())
            .map_err(|e| e.to_string())?;
        let mut e = Engine::new(store, suite.agent.clone(), suite.evaluator.clone()).with_clock(ManualClock::new());
        let records = e.run_stream(&test, &offline).map_err(|e| e.to_string())?;
        let mut csv = Vec::new();
        export_report(&compute_metrics(&records), &mut csv, ReportFormat::Csv).map_err(|e| e.to_string())?;
        Ok((csv, snapshot_digest(e.store().graph())))
    };
    let (r1, d1) = replay(graph.clone())?;
    let (r2, d2) = replay(graph)?;
    check(d1 == before && d2 == before, || "snapshot digest changed".into())?;
    check(r1 == r2, || "reports differ".into())?;
    Ok(format!("50 tasks, digest {}.. unchanged, reports identical", &before[..12]))
}

fn same_graph(a: &ExperienceGraph, b: &ExperienceGraph) -> bool {
    a.cases().eq(b.cases())
        && a.similar_edges() == b.similar_edges()
        && a.fixed_edges() == b.fixed_edges()
        && a.anchors().eq(b.anchors())
        && a.stats() == b.stats()
        && a.seq_counter() == b.seq_counter()
        && a.is_frozen() == b.is_frozen()
}

/// Applies `edit` to the JSON record on line `line` of a valid snapshot.
fn tamper(base: &str, line: usize, edit: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut lines: Vec<String> = base.lines().map(str::to_string).collect();
    let mut v: serde_json::Value = serde_json::from_str(&lines[line]).unwrap();
    edit(&mut v);
    lines[line] = v.to_string();
    lines.join("\n") + "\n"
}

fn persistence() -> Outcome {
    let raw = random_graph(
        &mut rng(909),
        &GenParams {
            min_cases: 1000,
            max_cases: 1000,
            max_tasks: 300,
            link_prob: 0.004,
            ..GenParams::default()
        },
    );
    let bytes = snapshot_bytes(&raw.graph);
    let back = read_snapshot(&bytes[..]).map_err(|e| e.to_string())?;
    check(back.len() == 1000 && same_graph(&raw.graph, &back), || "round trip differs".into())?;
    check(snapshot_bytes(&back) == bytes, || "bytes differ".into())?;

    // small valid snapshot: w1 (fail), g2 (pass, fixes w1), other task g1
    let mut g = ExperienceGraph::new();
    let task = TaskId::new("t");
    let mk = |task: &TaskId, k: u32, pass: bool| Case {
        case_id: CaseId::for_attempt(task, k),
        task_id: task.clone(),
        input: format!("in {task}"),
        output: "out".into(),
        reward: Reward::from_success(pass),
        signature: if pass { Signature::default() } else { Signature::failure("E", "boom") },
        attempt_index: k,
        created_seq: 0,
    };
    g.insert_case(mk(&task, 1, false), &[]).unwrap();
    g.insert_case(mk(&task, 2, true), &[(CaseId::new("t#1"), 0.5)]).unwrap();
    let other = TaskId::new("u");
    g.insert_case(mk(&other, 1, true), &[(CaseId::new("t#1"), 0.25)]).unwrap();
    g.add_fixed_by(&CaseId::new("t#1"), &CaseId::new("t#2")).unwrap();
    let base = String::from_utf8(snapshot_bytes(&g)).unwrap();
    read_snapshot(base.as_bytes()).map_err(|e| format!("valid base rejected: {e}"))?;
    let find = |kind: &str| {
        base.lines()
            .position(|l| l.contains(&format!("\"kind\":\"{kind}\"")))
            .unwrap()
    };
    let golden_line = base.lines().position(|l| l.contains("\"case_id\":\"t#2\"") && l.contains("\"kind\":\"case\"")).unwrap();
    let crafted = [
        ("weight outside [0,1]", tamper(&base, find("similar"), |v| v["weight"] = 1.5.into())),
        ("dangling similar_to", tamper(&base, find("similar"), |v| v["b"] = "ghost#1".into())),
        ("golden with failure", tamper(&base, golden_line, |v| v["signature"]["failure_type"] = "E".into())),
        ("fixed_by across tasks", tamper(&base, find("fixed"), |v| v["target"] = "u#1".into())),
        ("duplicate case", {
            let dup = base.lines().nth(golden_line).unwrap().to_string();
            let mut lines: Vec<&str> = base.lines().collect();
            lines.insert(golden_line, &dup);
            lines.join("\n") + "\n"
        }),
    ];
    let mut rejected = Vec::new();
    for (name, text) in &crafted {
        match read_snapshot(text.as_bytes()) {
            Err(_) => rejected.push(*name),
            Ok(_) => return Err(format!("accepted snapshot with {name}")),
        }
    }
    Ok(format!("1000 cases round-trip; rejected {}", rejected.join(", ")))
}

fn growth_accounting() -> Outcome {
    let kinds = [FamilyKind::Direct, FamilyKind::Repair, FamilyKind::Bridge, FamilyKind::Repair];
    let suite = build_designed_suite(&kinds, 25, 10);
    let records = run(&suite, AblationConfig::FULL);
    check(records.len() == 100, || format!("{} tasks", records.len()))?;
    let attempts: usize = records.iter().map(|r| r.attempts.len()).sum();
    let stats = records.last().unwrap().graph_after;
    let max_links = records
        .iter()
        .flat_map(|r| &r.attempts)
        .map(|a| a.similar_links)
        .max()
        .unwrap_or(0);
    let repaired = records.iter().filter(|r| r.repaired()).count();
    check(stats.case_count == attempts, || format!("{} cases vs {attempts} attempts", stats.case_count))?;
    check(max_links <= 5, || format!("{max_links} insert-time links"))?;
    check(stats.fixed_by_count == repaired, || {
        format!("{} fixed_by vs {repaired} repaired", stats.fixed_by_count)
    })?;
    Ok(format!(
        "{} cases = attempts, max links {max_links}, fixed_by {} = repaired",
        stats.case_count, stats.fixed_by_count
    ))
}

fn retrieval_overhead() -> Outcome {
    let suite = build_synthetic_suite(100, 5, 1);
    let mut store = ExperienceStore::new(Arc::new(HashBagEmbedder::default()));
    let policy = LoopConfig::default().link_policy();
    for t in &suite.tasks {
        let case = |k: u32, pass: bool| Case {
            case_id: CaseId::for_attempt(&t.task_id, k),
            task_id: t.task_id.clone(),
            input: t.user_text(),
            output: format!("output {k} for {}", t.task_id),
            reward: Reward::from_success(pass),
            signature: if pass {
                Signature::default()
            } else {
                Signature::failure("ValueError", format!("bad value in {}", t.task_id))
            },
            attempt_index: k,
            created_seq: 0,
        };
        let (w, _) = store.insert_linked(case(1, false), &policy).map_err(|e| e.to_string())?;
        let (g, _) = store.insert_linked(case(2, true), &policy).map_err(|e| e.to_string())?;
        store.add_fixed_by(&w, &g).map_err(|e| e.to_string())?;
    }
    check(store.graph().len() == 1000, || format!("{} cases", store.graph().len()))?;
    let cfg = LoopConfig::default();
    let queries = build_synthetic_suite(100, 2, 2).tasks;
    let mut total = Duration::ZERO;
    let mut n = 0;
    for q in queries.iter().chain(suite.tasks.iter().take(100)) {
        let started = Instant::now();
        let prov = ProvisionalCase::new(q.task_id.clone(), q.input.clone(), q.context.clone());
        let pool = store.retrieve(&prov, &cfg.retrieval).map_err(|e| e.to_string())?;
        let ranked = propagate_and_rank(&pool, store.graph(), &cfg.rerank).map_err(|e| e.to_string())?;
        let hints = build_hints(&ranked, store.graph(), &cfg.hint_config()).map_err(|e| e.to_string())?;
        let prompt = assemble_prompt(&cfg.prompt.system, &q.user_text(), &hints, &cfg.prompt.instruction);
        total += started.elapsed();
        n += 1;
        std::hint::black_box(prompt);
    }
    let mean = total / n;
    check(mean <= Duration::from_millis(25), || format!("mean {mean:.2?}"))?;
    Ok(format!("{n} queries on 1000 cases, mean {mean:.2?}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("retrieval oracle", retrieval_oracle),
        ("rerank oracle", rerank_oracle),
        ("similarity spot values", similarity_spots),
        ("hint selection oracle", hints_oracle),
        ("defaults and pool bound", defaults_and_pool_bound),
        ("online loop causality", online_causality),
        ("ablation ordering", ablation_ordering),
        ("offline purity", offline_purity),
        ("persistence", persistence),
        ("graph growth accounting", growth_accounting),
        ("retrieval overhead", retrieval_overhead),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("[PASS] AC-{} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] AC-{} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
