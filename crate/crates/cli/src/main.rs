use clap::{Args, Parser, Subcommand};
use overchain::analyzer::{solve_parameters, SolverInput};
use overchain::engine::{run, RunError, TOOL};
use overchain::scenario::Scenario;
use overchain::sweep::{aggregate, sweep, unique_seeds};
use serde_json::{json, Value};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_BREACH: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(
    name = "overchain",
    version,
    about = "Round-synchronous simulator for a blockchain-assisted hypercubic overlay"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario with one seed.
    Run(RunArgs),
    /// Run one scenario over many seeds and aggregate the summaries.
    Sweep(SweepArgs),
    /// Print the derived parameter table and the half-life floor.
    Params(ParamsArgs),
    /// Summarize a trace written by `run`.
    Analyze {
        /// Path to a trace.ndjson file.
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the scenario's run length.
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Shorthand for seeds 1..=n.
    #[arg(long)]
    seed_count: Option<u64>,
    #[arg(long)]
    rounds: Option<u64>,
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write each run's trace and summary under `out/seed-<s>/`.
    #[arg(long)]
    keep_traces: bool,
}

#[derive(Args)]
struct ParamsArgs {
    /// Maximum network size N.
    #[arg(long, default_value_t = 256)]
    max_peers: u64,
    /// Expected rounds per block.
    #[arg(long, default_value_t = 4.0)]
    block_interval: f64,
    #[arg(long, default_value_t = 0.1)]
    byz_fraction: f64,
    /// Join requests a bucket handles per round (default 4 log² N).
    #[arg(long)]
    join_capacity: Option<u64>,
    #[arg(long)]
    c_alpha: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("OVERCHAIN_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::Params(a) => cmd_params(&a),
        Cmd::Analyze { trace } => cmd_analyze(&trace),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn load(path: &Path) -> Result<Scenario, String> {
    let sc = Scenario::load(path).map_err(|e| e.to_string())?;
    sc.params.derive().map_err(|e| e.to_string())?;
    Ok(sc)
}

fn write_json(path: &Path, v: &Value) -> Result<(), String> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| format!("{}: {e}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, v).map_err(|e| e.to_string())?;
    f.write_all(b"\n").map_err(|e| e.to_string())
}

fn write_run(dir: &Path, trace: &overchain::trace::Trace) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let path = dir.join("trace.ndjson");
    let f = File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    trace.write_ndjson(BufWriter::new(f)).map_err(|e| e.to_string())?;
    write_json(&dir.join("summary.json"), &trace.summary_json())
}

fn run_error(e: RunError) -> String {
    e.to_string()
}

fn cmd_run(a: &RunArgs) -> Result<u8, String> {
    let sc = load(&a.scenario)?;
    let trace = run(&sc, a.seed, a.rounds).map_err(run_error)?;
    write_run(&a.out, &trace)?;
    if let Some(b) = &trace.summary.breach {
        eprintln!("invariant breach: {b}");
        return Ok(EXIT_BREACH);
    }
    log::info!("wrote {} and {}", a.out.join("trace.ndjson").display(), a.out.join("summary.json").display());
    Ok(0)
}

fn cmd_sweep(a: &SweepArgs) -> Result<u8, String> {
    let sc = load(&a.scenario)?;
    let mut seeds = a.seeds.clone();
    if let Some(n) = a.seed_count {
        seeds.extend(1..=n);
    }
    if seeds.is_empty() {
        return Err("sweep needs at least one seed (--seeds or --seed-count)".into());
    }
    let unique = unique_seeds(&seeds);
    if unique.len() < seeds.len() {
        log::warn!("dropped {} duplicate seed(s)", seeds.len() - unique.len());
    }
    let results = sweep(&sc, &unique, a.rounds, a.parallel);
    fs::create_dir_all(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    if a.keep_traces {
        for (seed, r) in &results {
            if let Ok(t) = r {
                write_run(&a.out.join(format!("seed-{seed}")), t)?;
            }
        }
    }
    for (seed, r) in &results {
        if let Err(e) = r {
            eprintln!("seed {seed}: {e}");
        }
    }
    let agg = aggregate(&sc, &results);
    let header = json!({ "tool": TOOL, "version": env!("CARGO_PKG_VERSION"), "scenario": sc.name,
                         "scenario_hash": sc.hash(), "seeds": unique });
    let doc = json!({ "header": header, "sweep": agg });
    write_json(&a.out.join("sweep.json"), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc["sweep"]).map_err(|e| e.to_string())?);
    if agg.failed_seeds.len() == results.len() {
        return Ok(EXIT_CONFIG);
    }
    Ok(if agg.breaches.is_empty() { 0 } else { EXIT_BREACH })
}

fn cmd_params(a: &ParamsArgs) -> Result<u8, String> {
    let mut input = SolverInput {
        max_peers: a.max_peers,
        block_interval: a.block_interval,
        byz_fraction: a.byz_fraction,
        join_capacity: a.join_capacity,
        ..SolverInput::default()
    };
    if let Some(c) = a.c_alpha {
        input.c_alpha = c;
    }
    let table = solve_parameters(&input).map_err(|e| e.to_string())?;
    println!("{:<28} {:>16}", "quantity", "value");
    let rows: [(&str, String); 12] = [
        ("N", table.max_peers.to_string()),
        ("beta (rounds/block)", table.block_interval.to_string()),
        ("alpha (half-life)", format!("{:.1}", table.halflife)),
        ("alpha lower bound", format!("{:.2}", table.halflife_floor)),
        ("buckets per directory", table.buckets.to_string()),
        ("active buckets", table.active_buckets.to_string()),
        ("bucket size (blocks)", table.bucket_size.to_string()),
        ("node lifetime (blocks)", table.node_lifetime.to_string()),
        ("dir node lifetime (blocks)", table.dir_lifetime.to_string()),
        ("join rate per peer/round", format!("{:.5}", table.join_rate)),
        ("join capacity per bucket", table.join_capacity.to_string()),
        ("capacity slack", format!("{:.1}", table.capacity_slack)),
    ];
    for (k, v) in rows {
        println!("{k:<28} {v:>16}");
    }
    Ok(0)
}

fn cmd_analyze(path: &Path) -> Result<u8, String> {
    let f = File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut header = Value::Null;
    let (mut rounds, mut resilient, mut isolated, mut max_msgs) = (0u64, 0u64, 0u64, 0u64);
    let mut ratios = Vec::new();
    let mut events = 0u64;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let v: Value = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        match v["type"].as_str() {
            Some("header") => header = v,
            Some("round") => {
                rounds += 1;
                resilient += u64::from(v["partition_resilient"].as_bool() == Some(true));
                isolated += u64::from(v["isolated"].as_u64().unwrap_or(0) > 0);
                max_msgs = max_msgs.max(v["max_msgs_per_peer"].as_u64().unwrap_or(0));
            }
            Some("epoch") if v["synchronized"].as_bool() == Some(true) => {
                ratios.extend(v["ratio"].as_f64());
            }
            Some("event") => events += 1,
            _ => {}
        }
    }
    let fraction = if rounds == 0 { 1.0 } else { resilient as f64 / rounds as f64 };
    let doc = json!({
        "header": header,
        "rounds": rounds,
        "resilience_fraction": fraction,
        "isolated_rounds": isolated,
        "max_msgs_per_peer": max_msgs,
        "synchronized_epochs": ratios.len(),
        "ratio_min": ratios.iter().copied().reduce(f64::min),
        "ratio_max": ratios.iter().copied().reduce(f64::max),
        "events": events,
    });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| e.to_string())?);
    Ok(0)
}
