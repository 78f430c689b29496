use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sloppy_heap::runner::{run, sweep, RunError, RunOptions, RunReport, SweepRow};
use sloppy_heap::workload::{KeyDist, Mix, QuantileDist, WorkloadSpec};

/// Drive a k-selectable sloppy heap with synthetic workloads.
#[derive(Parser, Debug)]
#[command(name = "sloppy-heap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one workload and print its metrics as a JSON line.
    Run(RunArgs),
    /// Run one workload checking every deletion against a brute-force oracle.
    Verify(RunArgs),
    /// Run a grid of initial sizes and k values and tabulate per-op work.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Number of operations after the initial build.
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// insert-only, delete-only, balanced, insert-heavy[:p], delete-heavy[:p]
    #[arg(long, default_value = "balanced")]
    mix: Mix,
    /// uniform, ascending, descending, clustered
    #[arg(long, default_value = "uniform")]
    dist: KeyDist,
    /// Quantile index distribution: uniform, fixed:<i>, front-loaded
    #[arg(long, default_value = "uniform")]
    qdist: QuantileDist,
    /// Work units per operation (at least 8).
    #[arg(long, default_value_t = 16)]
    budget: u32,
    /// Append the JSON metrics lines to this file as well.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true, default_value_t = 1)]
    split_scale: u32,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    k: usize,
    /// Initial number of items.
    #[arg(long, default_value_t = 100_000)]
    n0: usize,
    /// Check answers against the oracle (implied by `verify`).
    #[arg(long)]
    verify: bool,
    /// Audit the structure every this many operations when verifying.
    #[arg(long, default_value_t = 10_000)]
    audit_every: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Comma-separated initial sizes.
    #[arg(long, value_delimiter = ',', default_value = "16384,131072,1048576")]
    ns: Vec<usize>,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', default_value = "4,64,256")]
    ks: Vec<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct Line<'a, T: Serialize> {
    kind: &'static str,
    ok: bool,
    #[serde(flatten)]
    body: &'a T,
}

fn emit<T: Serialize>(
    out: &Option<PathBuf>,
    kind: &'static str,
    ok: bool,
    body: &T,
) -> io::Result<()> {
    let line = serde_json::to_string(&Line { kind, ok, body }).map_err(io::Error::other)?;
    println!("{line}");
    if let Some(path) = out {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

fn options(common: &Common, verify: bool, audit_every: u64) -> RunOptions {
    RunOptions {
        budget: common.budget,
        verify,
        audit_every,
        split_scale: common.split_scale,
    }
}

fn spec(common: &Common, k: usize, n0: usize) -> WorkloadSpec {
    WorkloadSpec {
        k,
        n0,
        ops: common.ops,
        seed: common.seed,
        mix: common.mix,
        dist: common.dist,
        qdist: common.qdist,
    }
}

fn summarize(r: &RunReport) {
    let s = &r.stats;
    eprintln!(
        "k={} n0={} ops={} n={} mode={} buckets={} max_work={} p99={} max_size/zeta={:.3} rounds={} splits={} merges={}",
        s.k,
        r.workload.n0,
        s.ops,
        s.n,
        s.mode,
        s.buckets,
        s.max_op_work,
        s.p99_op_work,
        s.max_size_zeta_ratio,
        s.rounds_completed,
        s.splits_completed,
        s.merges_completed
    );
    if r.options.verify {
        eprintln!(
            "verify: {} audits, {} oracle violations, {} exact-rank violations, {} audit failures",
            r.audits, r.oracle_violations, r.exact_rank_violations, r.audit_failures
        );
    }
    for m in &r.messages {
        eprintln!("  {m}");
    }
}

fn print_table(rows: &[SweepRow]) {
    println!(
        "{:>10} {:>6} {:>9} {:>8} {:>9} {:>8} {:>8} {:>8} {:>7}",
        "n0", "k", "max_work", "p99", "mean", "touches", "units", "buckets", "ratio"
    );
    for r in rows {
        let ratio = r
            .ratio
            .map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"));
        println!(
            "{:>10} {:>6} {:>9} {:>8} {:>9.2} {:>8} {:>8} {:>8} {:>7}",
            r.n0,
            r.k,
            r.max_op_work,
            r.p99_op_work,
            r.mean_op_work,
            r.max_tree_touches,
            r.max_bucket_units,
            r.max_buckets,
            ratio
        );
    }
}

fn fail(err: RunError) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        RunError::Config(_) => ExitCode::from(2),
        RunError::Heap { .. } => ExitCode::from(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) | Command::Verify(a) if a.common.ops == 0 && a.n0 == 0 => {
            eprintln!("error: nothing to do with --n0 0 and --ops 0");
            return ExitCode::from(2);
        }
        Command::Run(a) => run_one(&a, a.verify),
        Command::Verify(a) => run_one(&a, true),
        Command::Sweep(a) => {
            let template = spec(&a.common, 2, 0);
            match sweep(&template, &options(&a.common, false, 0), &a.ns, &a.ks) {
                Ok(rows) => {
                    print_table(&rows);
                    for r in &rows {
                        if let Err(e) = emit(&a.common.out, "sweep", true, r) {
                            eprintln!("error: {e}");
                            return ExitCode::from(1);
                        }
                    }
                    Ok(true)
                }
                Err(e) => Err(e),
            }
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => fail(e),
    }
}

fn run_one(a: &RunArgs, verify: bool) -> Result<bool, RunError> {
    let report = run(
        &spec(&a.common, a.k, a.n0),
        &options(&a.common, verify, a.audit_every),
    )?;
    summarize(&report);
    let ok = report.ok();
    if let Err(e) = emit(&a.common.out, "run", ok, &report) {
        eprintln!("error: {e}");
        return Ok(false);
    }
    Ok(ok)
}
