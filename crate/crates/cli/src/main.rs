//! `tdorch`: run the hash-table microbenchmark under a chosen
//! orchestration strategy, run graph algorithms over the simulated
//! cluster, or generate synthetic graphs.
//!
//! Exit codes: 0 success, 2 usage error, 3 strategy/workload
//! incompatibility, 4 I/O error.

mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tdorch_core::baselines::{run_strategy, Strategy, StrategyError};
use tdorch_core::bsp::{Cluster, ClusterConfig};
use tdorch_core::graph::algos::{bc, bfs, cc, pr, sssp, AlgoStats};
use tdorch_core::graph::gen::{gen_ba, gen_er};
use tdorch_core::graph::io::{doubled, read_edge_list, write_edge_list};
use tdorch_core::graph::{ingest, Edge, GraphCluster, IngestConfig, Mode};
use tdorch_core::kv::{
    gen_zipf_tasks, gen_zipf_tasks_secondary, kv_shard_partition, kv_spec, ZipfSpec,
    DEFAULT_KEY_SPACE,
};
use tdorch_core::orchestrate::{OrchMachine, StageOptions};

use report::{fnv64, write_csv, RunReport};

#[derive(Parser)]
#[command(name = "tdorch", version, about = "Task-data orchestration benchmarks on a simulated cluster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the hash-table microbenchmark under one strategy.
    OrchBench(OrchBenchArgs),
    /// Ingest or generate a graph and run one algorithm.
    Graph(GraphArgs),
    /// Generate a synthetic graph file.
    GenGraph(GenGraphArgs),
}

#[derive(Args)]
struct OrchBenchArgs {
    #[arg(long, default_value_t = 8)]
    machines: usize,
    /// direct-push | direct-pull | sorting | td-orch
    #[arg(long, default_value = "td-orch")]
    strategy: String,
    /// Zipf exponent of the key distribution.
    #[arg(long, default_value_t = 1.5)]
    gamma: f64,
    #[arg(long, default_value_t = 10_000)]
    tasks_per_machine: u64,
    /// Key-space size.
    #[arg(long, default_value_t = DEFAULT_KEY_SPACE)]
    keys: u64,
    /// Falls back to $TDORCH_SEED, then 1.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    chunk_size: u32,
    /// Communication-forest fanout (default derived from the batch).
    #[arg(long)]
    fanout: Option<usize>,
    /// Fraction of tasks carrying a second address.
    #[arg(long, default_value_t = 0.0)]
    secondary_fraction: f64,
    /// Report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-machine counter rows (CSV).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GraphArgs {
    /// bfs | sssp | bc | cc | pr
    #[arg(long)]
    algo: String,
    /// Edge-list file; mutually exclusive with --gen.
    #[arg(long)]
    input: Option<PathBuf>,
    /// er | ba
    #[arg(long)]
    gen: Option<String>,
    /// Vertex count for --gen.
    #[arg(long)]
    n: Option<u32>,
    /// Edge probability for --gen er.
    #[arg(long)]
    p: Option<f64>,
    /// Edges per new vertex for --gen ba.
    #[arg(long)]
    edges_per_vertex: Option<u32>,
    #[arg(long, default_value_t = 4)]
    machines: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Start vertex (bfs, sssp, bc).
    #[arg(long)]
    start: Option<u32>,
    /// Iterations (pr).
    #[arg(long, default_value_t = 10)]
    iters: u32,
    /// Damping factor (pr).
    #[arg(long, default_value_t = 0.85)]
    damping: f64,
    /// auto | sparse | dense
    #[arg(long, default_value = "auto")]
    mode: String,
    /// Store each undirected input edge in both directions.
    #[arg(long)]
    undirected: bool,
    #[arg(long, default_value_t = 8)]
    chunk_size: u32,
    #[arg(long)]
    fanout: Option<usize>,
    /// Vertex values, one per line.
    #[arg(long)]
    out_values: Option<PathBuf>,
    /// Report file (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenGraphArgs {
    /// er | ba
    #[arg(long)]
    model: String,
    #[arg(long)]
    n: u32,
    /// Edge probability (er).
    #[arg(long)]
    p: Option<f64>,
    /// Edges per new vertex (ba).
    #[arg(long)]
    edges_per_vertex: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Incompatible(String),
    Io(String),
    Run(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Incompatible(_) => 3,
            CliError::Io(_) => 4,
            CliError::Run(_) => 1,
        }
    }
    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Incompatible(m) | CliError::Io(m) | CliError::Run(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn seed_or_env(seed: Option<u64>) -> u64 {
    seed.or_else(|| {
        std::env::var("TDORCH_SEED")
            .ok()
            .and_then(|s| s.parse().ok())
    })
    .unwrap_or(1)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::OrchBench(args) => cmd_orch_bench(args),
        Command::Graph(args) => cmd_graph(args),
        Command::GenGraph(args) => cmd_gen_graph(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tdorch: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

// ---------------------------------------------------------------------------
// orch-bench
// ---------------------------------------------------------------------------

fn cmd_orch_bench(args: OrchBenchArgs) -> Result<(), CliError> {
    let strategy = Strategy::parse(&args.strategy)
        .ok_or_else(|| CliError::Usage(format!("unknown strategy {:?}", args.strategy)))?;
    if args.machines == 0 || args.machines > 1 << 16 {
        return Err(CliError::Usage("machine count out of range".into()));
    }
    if args.gamma < 0.0 {
        return Err(CliError::Usage("gamma must be non-negative".into()));
    }
    if !(0.0..=1.0).contains(&args.secondary_fraction) {
        return Err(CliError::Usage("secondary fraction must be in [0,1]".into()));
    }
    let seed = seed_or_env(args.seed);
    let p = args.machines;

    let zipf = ZipfSpec {
        gamma: args.gamma,
        key_space: args.keys,
        tasks_per_machine: args.tasks_per_machine,
        seed,
    };
    let tasks = if args.secondary_fraction > 0.0 {
        gen_zipf_tasks_secondary(&zipf, p, args.secondary_fraction)
    } else {
        gen_zipf_tasks(&zipf, p)
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut cluster = Cluster::new(ClusterConfig::new(p, seed), move |m| OrchMachine::new(seed, m));
    let owner = kv_shard_partition(args.keys, p);
    let spec = kv_spec(args.chunk_size, args.fanout);
    let outcome = run_strategy(
        strategy,
        &mut cluster,
        &owner,
        tasks,
        &spec,
        &StageOptions::default(),
    )
    .map_err(|e| match e {
        StrategyError::MultiAddressUnsupported { .. } => CliError::Incompatible(e.to_string()),
        StrategyError::Orch(inner) => CliError::Run(inner.to_string()),
    })?;

    // Digest the final table state for determinism checks.
    let mut table_bytes = Vec::new();
    for machine in cluster.machines() {
        for (k, v) in &machine.shard {
            table_bytes.extend_from_slice(&k.to_le_bytes());
            table_bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut config = BTreeMap::new();
    config.insert("machines".into(), json!(p));
    config.insert("strategy".into(), json!(strategy.name()));
    config.insert("gamma".into(), json!(args.gamma));
    config.insert("tasks_per_machine".into(), json!(args.tasks_per_machine));
    config.insert("keys".into(), json!(args.keys));
    config.insert("seed".into(), json!(seed));
    config.insert("chunk_size".into(), json!(args.chunk_size));
    config.insert("fanout".into(), json!(args.fanout));
    config.insert("secondary_fraction".into(), json!(args.secondary_fraction));

    let per_phase: BTreeMap<String, u64> = outcome
        .stats
        .phase_words
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    let mut report = RunReport::from_counters(
        "orch-bench",
        config,
        &outcome.delta,
        per_phase,
        fnv64(&table_bytes),
    );
    report.orchestration = Some(report::OrchBlock {
        strategy: strategy.name().to_string(),
        executed_tasks: outcome.stats.executed_tasks,
        supersteps_used: outcome.stats.supersteps_used,
        superstep_budget: outcome.stats.superstep_budget,
        forest_height: outcome.stats.forest_height,
        fanout: outcome.stats.fanout,
        max_meta_level: outcome.stats.max_level,
    });
    report.validate().map_err(CliError::Run)?;
    emit_report(&report, args.out.as_deref())?;
    if let Some(path) = &args.csv {
        let mut f = std::fs::File::create(path)?;
        write_csv(&mut f, &outcome.delta)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// graph
// ---------------------------------------------------------------------------

fn load_graph(args: &GraphArgs, seed: u64) -> Result<(Vec<Edge>, usize), CliError> {
    match (&args.input, &args.gen) {
        (Some(path), None) => {
            let parsed =
                read_edge_list(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let edges = if args.undirected {
                parsed
                    .edges
                    .iter()
                    .flat_map(|e| [*e, Edge::new(e.dst, e.src, e.weight)])
                    .collect()
            } else {
                parsed.edges
            };
            Ok((edges, parsed.n))
        }
        (None, Some(model)) => {
            let n = args
                .n
                .ok_or_else(|| CliError::Usage("--gen requires --n".into()))?;
            let pairs = match model.as_str() {
                "er" => {
                    let prob = args
                        .p
                        .ok_or_else(|| CliError::Usage("--gen er requires --p".into()))?;
                    gen_er(n, prob, seed)
                }
                "ba" => {
                    let m = args.edges_per_vertex.ok_or_else(|| {
                        CliError::Usage("--gen ba requires --edges-per-vertex".into())
                    })?;
                    gen_ba(n, m, seed)
                }
                other => return Err(CliError::Usage(format!("unknown generator {other:?}"))),
            };
            // Generated graphs are undirected by construction.
            Ok((doubled(&pairs), n as usize))
        }
        _ => Err(CliError::Usage(
            "exactly one of --input or --gen is required".into(),
        )),
    }
}

fn cmd_graph(args: GraphArgs) -> Result<(), CliError> {
    let mode = Mode::parse(&args.mode)
        .ok_or_else(|| CliError::Usage(format!("unknown mode {:?}", args.mode)))?;
    let needs_start = matches!(args.algo.as_str(), "bfs" | "sssp" | "bc");
    if needs_start && args.start.is_none() {
        return Err(CliError::Usage(format!("--algo {} requires --start", args.algo)));
    }
    let seed = seed_or_env(args.seed);
    let (edges, n) = load_graph(&args, seed)?;
    let m_directed = edges.len() as u64;

    let mut cfg = IngestConfig::new(args.machines, seed);
    cfg.chunk_size = args.chunk_size;
    cfg.fanout = args.fanout;
    let mut gc = ingest(edges, n, &cfg).map_err(|e| CliError::Run(e.to_string()))?;
    let ingest_delta = gc.cluster.counters().clone();

    let start = args.start.unwrap_or(0);
    let run = |gc: &mut GraphCluster| -> Result<(String, AlgoStats), tdorch_core::graph::GraphError> {
        Ok(match args.algo.as_str() {
            "bfs" => {
                let (v, s) = bfs(gc, start, mode)?;
                (render_lines(&v), s)
            }
            "sssp" => {
                let (v, s) = sssp(gc, start, mode)?;
                (render_f64_lines(&v), s)
            }
            "bc" => {
                let (v, s) = bc(gc, start, mode)?;
                (render_f64_lines(&v), s)
            }
            "cc" => {
                let (v, s) = cc(gc, mode)?;
                (render_lines(&v), s)
            }
            "pr" => {
                let (v, s) = pr(gc, args.iters, args.damping, mode)?;
                (render_f64_lines(&v), s)
            }
            other => {
                return Err(tdorch_core::graph::GraphError::Parse {
                    line: 0,
                    reason: format!("unknown algorithm {other:?}"),
                })
            }
        })
    };
    let (values_text, stats) = run(&mut gc).map_err(|e| match e {
        tdorch_core::graph::GraphError::Parse { reason, .. } => CliError::Usage(reason),
        tdorch_core::graph::GraphError::BadStart { .. } => CliError::Usage(e.to_string()),
        other => CliError::Run(other.to_string()),
    })?;

    if let Some(path) = &args.out_values {
        std::fs::write(path, &values_text)?;
    }

    let delta = gc.cluster.counters().clone();
    let algo_delta = delta.delta_since(&ingest_delta);
    let mut config = BTreeMap::new();
    config.insert("algo".into(), json!(args.algo));
    config.insert("machines".into(), json!(args.machines));
    config.insert("seed".into(), json!(seed));
    config.insert("mode".into(), json!(args.mode));
    config.insert("chunk_size".into(), json!(args.chunk_size));
    config.insert(
        "source".into(),
        match (&args.input, &args.gen) {
            (Some(p), _) => json!(p.display().to_string()),
            (_, Some(m)) => json!(format!(
                "gen:{m}:n={},p={:?},epv={:?}",
                args.n.unwrap_or(0),
                args.p,
                args.edges_per_vertex
            )),
            _ => json!("?"),
        },
    );
    if needs_start {
        config.insert("start".into(), json!(start));
    }
    if args.algo == "pr" {
        config.insert("iters".into(), json!(args.iters));
        config.insert("damping".into(), json!(args.damping));
    }

    let mut report = RunReport::from_counters(
        "graph",
        config,
        &algo_delta,
        BTreeMap::new(),
        fnv64(values_text.as_bytes()),
    );
    report.graph = Some(report::GraphBlock {
        algo: args.algo.clone(),
        n,
        m_directed,
        rounds: stats.rounds,
        sparse_rounds: stats.sparse_rounds,
        dense_rounds: stats.dense_rounds,
        edge_visits: stats.edge_visits,
        f_applied: stats.f_applied,
    });
    report.validate().map_err(CliError::Run)?;
    emit_report(&report, args.out.as_deref())?;
    if let Some(path) = &args.csv {
        let mut f = std::fs::File::create(path)?;
        write_csv(&mut f, &algo_delta)?;
    }
    Ok(())
}

fn render_lines<T: std::fmt::Display>(values: &[T]) -> String {
    let mut out = String::new();
    for v in values {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    out
}

fn render_f64_lines(values: &[f64]) -> String {
    let mut out = String::new();
    for v in values {
        if v.is_infinite() {
            out.push_str("inf");
        } else {
            out.push_str(&format!("{v:.12e}"));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// gen-graph
// ---------------------------------------------------------------------------

fn cmd_gen_graph(args: GenGraphArgs) -> Result<(), CliError> {
    let seed = seed_or_env(args.seed);
    let pairs = match args.model.as_str() {
        "er" => {
            let p = args
                .p
                .ok_or_else(|| CliError::Usage("--model er requires --p".into()))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Usage("edge probability must be in [0,1]".into()));
            }
            gen_er(args.n, p, seed)
        }
        "ba" => {
            let m = args
                .edges_per_vertex
                .ok_or_else(|| CliError::Usage("--model ba requires --edges-per-vertex".into()))?;
            if m == 0 || args.n < m + 1 {
                return Err(CliError::Usage("need n >= edges-per-vertex + 1 > 1".into()));
            }
            gen_ba(args.n, m, seed)
        }
        other => return Err(CliError::Usage(format!("unknown model {other:?}"))),
    };
    match &args.out {
        Some(path) => {
            let mut f = std::fs::File::create(path)?;
            write_edge_list(&mut f, args.n, &pairs)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            write_edge_list(&mut stdout, args.n, &pairs)?;
        }
    }
    Ok(())
}

fn emit_report(report: &RunReport, path: Option<&std::path::Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Run(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}
