mod config;

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use exg::case::ProvisionalCase;
use exg::embed::Embedder;
use exg::engine::{AgentReflector, Engine, ManualClock, Mode, SystemClock};
use exg::eval::suite::{build_designed_suite, build_synthetic_suite, FamilyKind};
use exg::eval::{
    export_report, ExactMatchEvaluator, ReportFormat, ScriptedAgent, ScriptedEvaluator, ScriptedReflector,
};
use exg::graph::{read_snapshot, snapshot_digest, write_snapshot};
use exg::hints::{assemble_prompt, render_hint};
use exg::http::{ChatCompletionClient, RemoteEmbedder};
use exg::task::{read_tasks, split_tasks, write_tasks, Task};
use exg::{
    apply_ablation, build_hints, compute_metrics, propagate_and_rank, AblationConfig, ExperienceGraph,
    ExperienceStore, HashBagEmbedder, LoopConfig, RunRecord, TaskId,
};
use serde::Serialize;

use config::{AgentKind, ClockKind, EmbeddingProvider, RunConfig};

#[derive(Parser)]
#[command(name = "exg", version, about = "Experience-graph agent runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run tasks in order, growing the graph; writes snapshot, records and report.
    RunOnline(RunArgs),
    /// Run tasks against a frozen snapshot; writes records and report.
    RunOffline(RunArgs),
    /// Show the pool, ranking and hints a query would get.
    Query(QueryArgs),
    /// Print graph statistics of a snapshot.
    Stats(StatsArgs),
    /// Seeded collect/test split of a task file.
    Split(SplitArgs),
    /// Recompute a report from a records file.
    Report(ReportArgs),
    /// Write a scripted synthetic task file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `retrieval.pool_cap=20`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    tasks: PathBuf,
    /// Starting graph for run-online; the frozen graph for run-offline.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_ablation)]
    ablation: Option<AblationConfig>,
    #[arg(long, value_enum)]
    agent: Option<AgentKind>,
    #[arg(long)]
    max_attempts: Option<u32>,
    #[arg(long)]
    hint_budget: Option<usize>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long)]
    input: String,
    #[arg(long)]
    context: Option<String>,
    #[arg(long, default_value = "query")]
    task_id: String,
    #[arg(long)]
    hint_budget: Option<usize>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    snapshot: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, default_value_t = 0.7)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving collect.jsonl and test.jsonl.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    families: usize,
    #[arg(long, default_value_t = 5)]
    per: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Family kinds (direct, repair, bridge), comma separated; overrides
    /// `--families`.
    #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
    kinds: Vec<FamilyKind>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_ablation(s: &str) -> Result<AblationConfig, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn parse_kind(s: &str) -> Result<FamilyKind, String> {
    match s.trim() {
        "direct" => Ok(FamilyKind::Direct),
        "repair" => Ok(FamilyKind::Repair),
        "bridge" => Ok(FamilyKind::Bridge),
        other => Err(format!("unknown family kind `{other}`")),
    }
}

/// Exit 2: bad configuration or inputs, nothing written.
/// Exit 1: the run itself failed or tripped a check.
enum Failure {
    Usage(String),
    Run(String),
}

type Res<T> = Result<T, Failure>;

fn usage<E: std::fmt::Display>(ctx: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Usage(format!("{ctx}: {e}"))
}

fn run_fail<E: std::fmt::Display>(ctx: &str) -> impl FnOnce(E) -> Failure + '_ {
    move |e| Failure::Run(format!("{ctx}: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RunOnline(a) => cmd_run(a, Mode::Online),
        Command::RunOffline(a) => cmd_run(a, Mode::Offline),
        Command::Query(a) => cmd_query(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Split(a) => cmd_split(a),
        Command::Report(a) => cmd_report(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(args: &ConfigArgs, extra: Vec<String>) -> Res<RunConfig> {
    let mut overrides = extra;
    overrides.extend(args.set.iter().cloned());
    RunConfig::load(args.config.as_deref(), &overrides).map_err(Failure::Usage)
}

fn load_tasks(path: &Path) -> Res<Vec<Task>> {
    let f = File::open(path).map_err(usage(&format!("cannot open task file {}", path.display())))?;
    read_tasks(BufReader::new(f)).map_err(usage(&format!("task file {}", path.display())))
}

fn load_graph(path: &Path) -> Res<ExperienceGraph> {
    let f = File::open(path).map_err(usage(&format!("cannot open snapshot {}", path.display())))?;
    read_snapshot(BufReader::new(f)).map_err(usage(&format!("snapshot {}", path.display())))
}

fn embedder(cfg: &RunConfig) -> Res<Arc<dyn Embedder>> {
    Ok(match cfg.embedding.provider {
        EmbeddingProvider::Hash => Arc::new(HashBagEmbedder::new(cfg.embedding.dim)),
        EmbeddingProvider::Http => {
            Arc::new(RemoteEmbedder::new(cfg.embedding.http.clone()).map_err(usage("embedding provider"))?)
        }
    })
}

fn build_engine(store: ExperienceStore, cfg: &RunConfig, tasks: &[Task]) -> Res<Engine> {
    let engine = match cfg.backend.agent {
        AgentKind::Mock => {
            let e = Engine::new(store, ScriptedAgent::new(tasks), ScriptedEvaluator::new(tasks));
            if cfg.loop_.reflection_enabled {
                e.with_reflector(ScriptedReflector)
            } else {
                e
            }
        }
        AgentKind::Http => {
            let missing: Vec<String> = ExactMatchEvaluator::missing(tasks).map(|t| t.to_string()).collect();
            if !missing.is_empty() {
                return Err(Failure::Usage(format!(
                    "http agent needs an `expected` answer on every task; missing for {}",
                    missing.join(", ")
                )));
            }
            let client = Arc::new(ChatCompletionClient::new(cfg.backend.http.clone()).map_err(usage("backend"))?);
            let e = Engine::new(store, client.clone(), ExactMatchEvaluator::new(tasks));
            if cfg.loop_.reflection_enabled {
                e.with_reflector(AgentReflector::new(client))
            } else {
                e
            }
        }
    };
    let manual = match cfg.loop_.clock {
        ClockKind::Auto => cfg.backend.agent == AgentKind::Mock,
        ClockKind::Manual => true,
        ClockKind::System => false,
    };
    Ok(if manual {
        engine.with_clock(ManualClock::new())
    } else {
        engine.with_clock(SystemClock::default())
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn write_reports(out: &Path, records: &[RunRecord]) -> Res<exg::MetricsReport> {
    write_jsonl(&out.join("records.jsonl"), records).map_err(run_fail("writing records"))?;
    let report = compute_metrics(records);
    for (name, format) in [("report.csv", ReportFormat::Csv), ("report.jsonl", ReportFormat::JsonLines)] {
        let f = File::create(out.join(name)).map_err(run_fail("writing report"))?;
        export_report(&report, BufWriter::new(f), format).map_err(run_fail("writing report"))?;
    }
    Ok(report)
}

fn cmd_run(a: RunArgs, mode: Mode) -> Res<()> {
    let mut extra = Vec::new();
    if let Some(agent) = a.agent {
        extra.push(format!("backend.agent=\"{}\"", if agent == AgentKind::Mock { "mock" } else { "http" }));
    }
    if let Some(n) = a.max_attempts {
        extra.push(format!("loop.max_attempts={n}"));
    }
    if let Some(h) = a.hint_budget {
        extra.push(format!("loop.hint_budget={h}"));
    }
    let cfg = load_config(&a.cfg, extra)?;
    let loop_cfg = LoopConfig {
        mode,
        ..apply_ablation(&cfg.loop_config(), a.ablation.unwrap_or(AblationConfig::FULL))
    };
    let tasks = load_tasks(&a.tasks)?;
    let (mut graph, file_bytes) = match (&a.snapshot, mode) {
        (Some(p), _) => (load_graph(p)?, Some(fs::read(p).map_err(usage("snapshot"))?)),
        (None, Mode::Online) => (ExperienceGraph::new(), None),
        (None, Mode::Offline) => return Err(Failure::Usage("run-offline requires --snapshot".into())),
    };
    match mode {
        Mode::Online if graph.is_frozen() => {
            return Err(Failure::Usage("snapshot is frozen; replay it with run-offline".into()))
        }
        Mode::Offline => graph.freeze(),
        Mode::Online => {}
    }
    let digest_before = snapshot_digest(&graph);
    let store = ExperienceStore::from_graph(graph, embedder(&cfg)?, cfg.loop_.execution)
        .map_err(usage("indexing snapshot"))?;
    let mut engine = build_engine(store, &cfg, &tasks)?;

    let records = engine.run_stream(&tasks, &loop_cfg).map_err(run_fail("run"))?;
    let graph = engine.into_store().into_graph();

    if mode == Mode::Offline {
        let on_disk = a.snapshot.as_deref().map(fs::read).transpose().map_err(run_fail("re-reading snapshot"))?;
        if snapshot_digest(&graph) != digest_before || on_disk != file_bytes {
            return Err(Failure::Run("snapshot changed during an offline run".into()));
        }
    }

    fs::create_dir_all(&a.out).map_err(run_fail("creating output directory"))?;
    if mode == Mode::Online {
        let f = File::create(a.out.join("snapshot.jsonl")).map_err(run_fail("writing snapshot"))?;
        let mut w = BufWriter::new(f);
        write_snapshot(&graph, &mut w)
            .and_then(|_| w.flush())
            .map_err(run_fail("writing snapshot"))?;
    }
    let report = write_reports(&a.out, &records)?;
    let stats = graph.stats();
    println!(
        "tasks {}  pass@1 {:.4}  pass@2 {:.4}  avg calls {:.4}",
        report.task_count, report.pass_at_1, report.pass_at_2, report.avg_llm_calls
    );
    println!(
        "graph cases {}  similar_to {}  fixed_by {}  digest {}",
        stats.case_count,
        stats.similar_to_count,
        stats.fixed_by_count,
        snapshot_digest(&graph)
    );
    let transport = records
        .iter()
        .flat_map(|r| &r.attempts)
        .filter(|x| x.transport_error)
        .count();
    if transport > 0 {
        return Err(Failure::Run(format!("{transport} attempt(s) failed at the backend after retries")));
    }
    Ok(())
}

fn cmd_query(a: QueryArgs) -> Res<()> {
    let extra = a.hint_budget.map(|h| vec![format!("loop.hint_budget={h}")]).unwrap_or_default();
    let cfg = load_config(&a.cfg, extra)?;
    let graph = load_graph(&a.snapshot)?;
    let store = ExperienceStore::from_graph(graph, embedder(&cfg)?, cfg.loop_.execution)
        .map_err(usage("indexing snapshot"))?;
    let loop_cfg = cfg.loop_config();
    let prov = ProvisionalCase::new(TaskId::new(a.task_id), a.input.clone(), a.context.clone());
    let pool = store.retrieve(&prov, &loop_cfg.retrieval).map_err(run_fail("retrieval"))?;
    let ranked = propagate_and_rank(&pool, store.graph(), &loop_cfg.rerank).map_err(run_fail("rerank"))?;
    let hints = build_hints(&ranked, store.graph(), &loop_cfg.hint_config()).map_err(run_fail("hints"))?;

    let mut out = io::stdout().lock();
    let mut emit = || -> io::Result<()> {
        writeln!(out, "pool: {} candidates, {} seeds", pool.len(), pool.seeds.len())?;
        for s in &pool.seeds {
            writeln!(out, "  seed {} rho0={:.4} {:?}", s.case_id, s.initial_relevance, s.origin)?;
        }
        for c in &pool.candidates {
            let mut tags = Vec::new();
            for (on, name) in [(c.sources.task, "task"), (c.sources.sim, "sim"), (c.sources.fix, "fix")] {
                if on {
                    tags.push(name);
                }
            }
            writeln!(out, "  candidate {} [{}]", c.case_id, tags.join(","))?;
        }
        writeln!(out, "ranking:")?;
        for r in &ranked {
            writeln!(out, "  {:>3}. {} rho={:.4} rho0={:.4}", r.rank, r.case_id, r.relevance, r.initial_relevance)?;
        }
        writeln!(out, "hints: {} of budget {}", hints.len(), hints.budget)?;
        for h in &hints.hints {
            let text = render_hint(h, store.graph()).map_err(io::Error::other)?;
            writeln!(out, "{text}\n")?;
        }
        if !hints.is_empty() {
            let user = match &a.context {
                Some(c) => format!("{}\nContext: {c}", a.input),
                None => a.input.clone(),
            };
            writeln!(out, "prompt:")?;
            write!(out, "{}", assemble_prompt(&cfg.prompt.system, &user, &hints, &cfg.prompt.instruction))?;
            writeln!(out)?;
        }
        Ok(())
    };
    emit().map_err(run_fail("writing output"))
}

#[derive(Serialize)]
struct StatsView {
    #[serde(flatten)]
    stats: exg::GraphStats,
    frozen: bool,
    digest: String,
}

fn cmd_stats(a: StatsArgs) -> Res<()> {
    let graph = load_graph(&a.snapshot)?;
    let view = StatsView {
        stats: graph.stats(),
        frozen: graph.is_frozen(),
        digest: snapshot_digest(&graph),
    };
    let text = serde_json::to_string_pretty(&view).map_err(run_fail("stats"))?;
    println!("{text}");
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Res<()> {
    if !(0.0..=1.0).contains(&a.ratio) {
        return Err(Failure::Usage(format!("ratio must lie in [0, 1], got {}", a.ratio)));
    }
    let tasks = load_tasks(&a.tasks)?;
    let (collect, test) = split_tasks(&tasks, a.ratio, a.seed);
    fs::create_dir_all(&a.out).map_err(run_fail("creating output directory"))?;
    for (name, part) in [("collect.jsonl", &collect), ("test.jsonl", &test)] {
        let f = File::create(a.out.join(name)).map_err(run_fail("writing split"))?;
        let mut w = BufWriter::new(f);
        write_tasks(part, &mut w)
            .and_then(|_| w.flush())
            .map_err(run_fail("writing split"))?;
    }
    println!("collect {}  test {}", collect.len(), test.len());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Res<()> {
    let text = fs::read_to_string(&a.records).map_err(usage(&format!("cannot read {}", a.records.display())))?;
    let records = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str::<RunRecord>(l).map_err(|e| Failure::Usage(format!("line {}: {e}", i + 1))))
        .collect::<Res<Vec<_>>>()?;
    let report = compute_metrics(&records);
    match &a.out {
        Some(p) => {
            let f = File::create(p).map_err(run_fail("writing report"))?;
            export_report(&report, BufWriter::new(f), a.format)
        }
        None => export_report(&report, io::stdout().lock(), a.format),
    }
    .map_err(run_fail("writing report"))
}

fn cmd_synth(a: SynthArgs) -> Res<()> {
    if a.per == 0 {
        return Err(Failure::Usage("--per must be positive".into()));
    }
    let suite = if a.kinds.is_empty() {
        build_synthetic_suite(a.families, a.per, a.seed)
    } else {
        build_designed_suite(&a.kinds, a.per, a.seed)
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(run_fail("creating output directory"))?;
    }
    let f = File::create(&a.out).map_err(run_fail("writing tasks"))?;
    let mut w = BufWriter::new(f);
    write_tasks(&suite.tasks, &mut w)
        .and_then(|_| w.flush())
        .map_err(run_fail("writing tasks"))?;
    println!("wrote {} tasks to {}", suite.tasks.len(), a.out.display());
    Ok(())
}
