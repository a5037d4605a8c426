//! `pop-smc`: command-line front end for the model checker.
//!
//! Exit codes: 0 success, 1 violation found (assertion, internal invariant,
//! unexpected benchmark count or failed verification), 2 usage error, 3 parse
//! error, 4 a limit stopped the run before it completed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use pop_smc::bench::{self, RandomLimits};
use pop_smc::explorer::{explore, verify_optimality, Algorithm, ExploreConfig, Report, Verification};
use pop_smc::model::{parse_program, Program};
use serde_json::{json, Value};

const EXIT_VIOLATION: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_LIMIT: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "pop-smc", version, about = "Stateless model checking with parsimonious optimal DPOR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Explore every behaviour of a program and report assertion failures.
    Check {
        /// Program source file.
        file: PathBuf,
        #[command(flatten)]
        run: RunOpts,
        /// Also write the exploration tree in DOT format to this file.
        #[arg(long, value_name = "FILE")]
        dot: Option<PathBuf>,
    },
    /// Cross-check the engines against brute force, on one program or on a
    /// corpus of seeded random programs.
    Verify {
        /// Program source file; without it a random corpus is checked.
        file: Option<PathBuf>,
        /// Number of random programs.
        #[arg(long, default_value_t = 100, conflicts_with = "file")]
        seeds: u64,
        /// First seed of the corpus.
        #[arg(long, default_value_t = 0, conflicts_with = "file")]
        seed_start: u64,
        /// Most threads per random program (at most 4).
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=4), conflicts_with = "file")]
        max_threads: u64,
        #[arg(long)]
        json: bool,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=2))]
        invariants: u8,
    },
    /// Run a built-in benchmark and compare with its expected execution count.
    Bench {
        /// fig1, exp-mem3, length-param, lastzero or random.
        name: String,
        /// Benchmark parameters, e.g. `7` for exp-mem3 or `2 1024` for length-param.
        params: Vec<u64>,
        #[command(flatten)]
        run: RunOpts,
    },
    /// Print the exploration tree in DOT format.
    DumpTree {
        /// Program source file.
        #[arg(required_unless_present = "bench")]
        file: Option<PathBuf>,
        /// Use a built-in benchmark instead: NAME followed by its parameters.
        #[arg(long, num_args = 1.., value_name = "NAME PARAMS", conflicts_with = "file")]
        bench: Option<Vec<String>>,
        #[arg(long, default_value = "pop", value_parser = parse_algorithm)]
        algorithm: Algorithm,
        /// Write to this file instead of standard output.
        #[arg(long, short, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunOpts {
    #[arg(long, default_value = "pop", value_parser = parse_algorithm)]
    algorithm: Algorithm,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Stop after this many maximal executions.
    #[arg(long, value_name = "K")]
    max_execs: Option<u64>,
    /// Stop after this much wall-clock time.
    #[arg(long, value_name = "S")]
    max_seconds: Option<f64>,
    /// 0: none; 1: cheap checks; 2: per-step checks.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=2))]
    invariants: u8,
}

impl RunOpts {
    fn config(&self) -> Result<ExploreConfig, Failure> {
        let max_duration = match self.max_seconds {
            Some(s) if !(s.is_finite() && s > 0.0) => {
                return Err(Failure::usage(format!("--max-seconds must be positive, got {s}")))
            }
            s => s.map(Duration::from_secs_f64),
        };
        Ok(ExploreConfig {
            algorithm: self.algorithm,
            invariants: self.invariants,
            max_executions: self.max_execs,
            max_duration,
            ..ExploreConfig::default()
        })
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse()
}

/// An error that ends the process with a specific exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: String) -> Self {
        Failure {
            code: EXIT_USAGE,
            message,
        }
    }
}

fn load_program(path: &Path) -> Result<Program, Failure> {
    let src = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    parse_program(&src).map_err(|e| Failure {
        code: EXIT_PARSE,
        message: format!("{}: {e}", path.display()),
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write {}: {e}", path.display())))
}

/// Exit status for a finished exploration.
fn status(report: &Report) -> u8 {
    if report.has_violations() {
        EXIT_VIOLATION
    } else if report.truncated {
        EXIT_LIMIT
    } else {
        0
    }
}

fn human_report(title: &str, r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<28} {:>12} {:>10}", "benchmark", "executions", "time(s)");
    let _ = writeln!(s, "{:<28} {:>12} {:>10.2}", title, r.executions, r.wall_ms as f64 / 1000.0);
    let _ = writeln!(s);
    let _ = writeln!(s, "algorithm:            {}", r.algorithm);
    let _ = writeln!(s, "distinct traces:      {}", r.distinct_traces);
    let _ = writeln!(s, "blocked reversals:    {}", r.blocked_reversals);
    let _ = writeln!(s, "max reversal depth:   {} (bound {})", r.max_reversal_depth, r.depth_bound());
    let _ = writeln!(s, "longest execution:    {}", r.longest_execution);
    let _ = writeln!(s, "peak sleep-set size:  {}", r.max_sschar_size);
    if r.deadlocks > 0 {
        let _ = writeln!(s, "deadlocked executions: {}", r.deadlocks);
    }
    if r.truncated {
        let _ = writeln!(s, "stopped early: a limit was reached");
    }
    if r.assertion_violations.is_empty() {
        let _ = writeln!(s, "assertion violations: none");
    }
    for v in &r.assertion_violations {
        let _ = writeln!(s, "assertion violation: {} (seen in {} executions)", v.message, v.occurrences);
        let _ = writeln!(s, "  witness:");
        for (i, e) in v.witness.iter().enumerate() {
            let _ = writeln!(s, "    {:>3}  {e}", i + 1);
        }
    }
    for v in &r.invariant_violations {
        let _ = writeln!(s, "internal invariant violated: {v}");
    }
    s
}

fn check(file: &Path, run: &RunOpts, dot: Option<&Path>) -> Result<u8, Failure> {
    let prog = load_program(file)?;
    let cfg = ExploreConfig {
        dot: dot.is_some(),
        ..run.config()?
    };
    let report = explore(&prog, &cfg);
    if let (Some(path), Some(text)) = (dot, &report.dot) {
        write_file(path, text)?;
    }
    if run.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", human_report(&file.display().to_string(), &report));
    }
    Ok(status(&report))
}

fn bench_cmd(name: &str, params: &[u64], run: &RunOpts) -> Result<u8, Failure> {
    let spec = bench::by_name(name, params).map_err(|e| Failure::usage(e.to_string()))?;
    let report = explore(&spec.program, &run.config()?);
    let matches = spec.expected.map(|k| k == report.executions);
    if run.json {
        let mut v = serde_json::to_value(&report).expect("report serializes");
        if let Value::Object(map) = &mut v {
            map.insert("benchmark".into(), json!(spec.label()));
            map.insert("expected".into(), json!(spec.expected));
            map.insert("matches_expected".into(), json!(matches));
        }
        println!("{}", serde_json::to_string_pretty(&v).expect("json value serializes"));
    } else {
        print!("{}", human_report(&spec.label(), &report));
        match spec.expected {
            Some(k) if matches == Some(true) => println!("expected {k} executions ({}): ok", spec.expected_source),
            Some(k) => println!("expected {k} executions ({}): MISMATCH", spec.expected_source),
            None => {}
        }
    }
    let code = status(&report);
    if code == 0 && matches == Some(false) {
        return Ok(EXIT_VIOLATION);
    }
    Ok(code)
}

fn verify_cmd(
    file: Option<&Path>,
    seeds: u64,
    seed_start: u64,
    max_threads: u64,
    json: bool,
    invariants: u8,
) -> Result<u8, Failure> {
    let base = ExploreConfig {
        invariants,
        ..ExploreConfig::default()
    };
    let programs: Vec<(String, Program)> = match file {
        Some(path) => vec![(path.display().to_string(), load_program(path)?)],
        None => {
            let limits = RandomLimits {
                max_threads: max_threads as usize,
                ..RandomLimits::default()
            };
            (seed_start..seed_start + seeds)
                .map(|seed| (format!("seed {seed}"), bench::random_program(seed, &limits)))
                .collect()
        }
    };
    let mut results: Vec<(String, Verification)> = Vec::new();
    for (name, prog) in &programs {
        let v = verify_optimality(prog, &base);
        log::info!("{name}: {} classes, passed {}", v.classes, v.passed());
        results.push((name.clone(), v));
    }
    let failed: Vec<&(String, Verification)> = results.iter().filter(|(_, v)| !v.passed()).collect();
    if json {
        let out = json!({
            "programs": results.len(),
            "passed": results.len() - failed.len(),
            "classes": results.iter().map(|(_, v)| v.classes).sum::<usize>(),
            "failures": failed.iter().map(|(n, v)| json!({"program": n, "result": v})).collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&out).expect("json value serializes"));
    } else {
        for (name, v) in &failed {
            println!("{name}: FAILED");
            for f in &v.failures {
                println!("  {f}");
            }
        }
        println!(
            "{} of {} programs passed ({} equivalence classes in total)",
            results.len() - failed.len(),
            results.len(),
            results.iter().map(|(_, v)| v.classes).sum::<usize>()
        );
    }
    Ok(if failed.is_empty() { 0 } else { EXIT_VIOLATION })
}

fn dump_tree(
    file: Option<&Path>,
    bench_args: Option<&[String]>,
    algorithm: Algorithm,
    output: Option<&Path>,
) -> Result<u8, Failure> {
    let prog = match (file, bench_args) {
        (Some(path), _) => load_program(path)?,
        (None, Some([name, params @ ..])) => {
            let params = params
                .iter()
                .map(|p| p.parse::<u64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Failure::usage(format!("bad benchmark parameter: {e}")))?;
            bench::by_name(name, &params).map_err(|e| Failure::usage(e.to_string()))?.program
        }
        _ => return Err(Failure::usage("dump-tree needs a file or --bench NAME".into())),
    };
    if algorithm == Algorithm::Brute {
        return Err(Failure::usage("dump-tree supports pop and pop-explicit only".into()));
    }
    let cfg = ExploreConfig {
        algorithm,
        dot: true,
        ..ExploreConfig::default()
    };
    let report = explore(&prog, &cfg);
    let dot = report.dot.clone().unwrap_or_default();
    match output {
        Some(path) => write_file(path, &dot)?,
        None => print!("{dot}"),
    }
    Ok(status(&report))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match &cli.command {
        Command::Check { file, run, dot } => check(file, run, dot.as_deref()),
        Command::Verify {
            file,
            seeds,
            seed_start,
            max_threads,
            json,
            invariants,
        } => verify_cmd(file.as_deref(), *seeds, *seed_start, *max_threads, *json, *invariants),
        Command::Bench { name, params, run } => bench_cmd(name, params, run),
        Command::DumpTree {
            file,
            bench,
            algorithm,
            output,
        } => dump_tree(file.as_deref(), bench.as_deref(), *algorithm, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("POP_SMC_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("pop-smc: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
