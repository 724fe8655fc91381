use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cansim_core::analysis::analyze;
use cansim_core::scenario::{
    demo, load_scenario, resolve, run, run_batch, write_json, write_outputs, ResolvedScenario, RunError,
    RunOutput, ScenarioError,
};
use cansim_core::signed_graph::parse_graph;
use clap::{Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "cansim", version, about = "Prescribed-time control of signed networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Connectivity, balance and spectral summary of a graph file
    Analyze {
        graph: PathBuf,
        /// Print the full JSON report
        #[arg(long)]
        json: bool,
    },
    /// Run a scenario file
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a packaged scenario (ex1a .. ex6b)
    Demo {
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every scenario listed in a manifest
    Batch {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

/// Exit codes: 1 verdict failure, 2 input error, 3 numerical failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Failure {
    Verdict = 1,
    Input = 2,
    Numerical = 3,
}

struct Error {
    kind: Failure,
    message: String,
}

impl Error {
    fn input(message: impl ToString) -> Self {
        Self { kind: Failure::Input, message: message.to_string() }
    }
}

impl From<ScenarioError> for Error {
    fn from(e: ScenarioError) -> Self {
        Error::input(e)
    }
}

impl From<RunError> for Error {
    fn from(e: RunError) -> Self {
        let kind = if e.is_numerical() { Failure::Numerical } else { Failure::Input };
        Self { kind, message: e.to_string() }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::input(format!("{}: {e}", path.display()))
}

fn seed_override() -> Result<Option<u64>, Error> {
    match std::env::var("CANSIM_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::input(format!("CANSIM_SEED must be an unsigned integer, got `{s}`"))),
        Err(_) => Ok(None),
    }
}

fn print_run(out: &RunOutput) {
    for n in &out.notices {
        eprintln!("notice: {n}");
    }
    println!("{}", out.analysis.summary());
    for v in &out.verdicts {
        println!("{}", v.line());
    }
}

fn finish(resolved: &ResolvedScenario, out_dir: &Path) -> Result<(), Error> {
    let output = run(resolved)?;
    write_outputs(out_dir, resolved, &output).map_err(|e| io_error(out_dir, e))?;
    print_run(&output);
    if output.all_pass() {
        Ok(())
    } else {
        Err(Error { kind: Failure::Verdict, message: "one or more verdicts failed".into() })
    }
}

fn cmd_analyze(path: &Path, as_json: bool) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let graph = parse_graph(&text).map_err(Error::input)?;
    let seed = seed_override()?.unwrap_or(0);
    let analysis = analyze(&graph, seed).map_err(|e| Error { kind: Failure::Numerical, message: e.to_string() })?;
    if as_json {
        let report = serde_json::to_string_pretty(&analysis.report()).expect("serializable");
        println!("{report}");
        return Ok(());
    }
    let report = analysis.report();
    println!("{}", report.summary);
    println!("leaders: {:?}", report.leaders);
    println!("followers: {:?}", report.followers);
    for (k, c) in report.cscs.iter().enumerate() {
        println!("csc {}: members {:?}, balanced {}", k + 1, c.members, c.balanced);
        println!("  p = {:?}", c.perron);
        if let Some(a) = c.gap {
            println!("  a(L) = {a}");
        }
        if let Some(w) = &c.witness_cycle {
            println!("  odd cycle: {w:?}");
        }
    }
    if let Some(z) = &report.zeta {
        println!("zeta = {z:?}");
    } else if let Some(w) = &report.containment {
        println!("varpi row sums = {:?}", w.row_abs_sums());
    }
    Ok(())
}

fn cmd_simulate(path: &Path, out: &Path) -> Result<(), Error> {
    let (doc, base) = load_scenario(path)?;
    let resolved = resolve(&doc, Some(&base), seed_override()?)?;
    finish(&resolved, out)
}

fn cmd_demo(name: &str, out: &Path) -> Result<(), Error> {
    let resolved = resolve(&demo(name)?, None, seed_override()?)?;
    finish(&resolved, out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Manifest {
    List(Vec<String>),
    Object { scenarios: Vec<String> },
}

fn cmd_batch(path: &Path, out: &Path, jobs: Option<usize>) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let entries = match serde_json::from_str::<Manifest>(&text).map_err(|e| Error::input(format!("manifest: {e}")))? {
        Manifest::List(v) | Manifest::Object { scenarios: v } => v,
    };
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let seed = seed_override()?;

    let mut names = Vec::new();
    let mut prepared: Vec<Result<ResolvedScenario, Error>> = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let p = base.join(entry);
        let stem = p.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
        names.push(format!("{:03}_{stem}", i + 1));
        prepared.push(
            load_scenario(&p)
                .and_then(|(doc, b)| resolve(&doc, Some(&b), seed))
                .map_err(|e| Error::input(format!("{entry}: {e}"))),
        );
    }
    let runnable: Vec<ResolvedScenario> = prepared.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
    let mut results = run_batch(&runnable, jobs).into_iter();

    std::fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let mut worst: Option<Failure> = None;
    let mut summary = Vec::new();
    for (i, prep) in prepared.iter().enumerate() {
        let outcome = match prep {
            Err(e) => Err(Error { kind: e.kind, message: e.message.clone() }),
            Ok(resolved) => {
                let result = results.next().expect("one result per runnable scenario");
                result.map_err(Error::from).and_then(|o| {
                    let dir = out.join(&names[i]);
                    write_outputs(&dir, resolved, &o).map_err(|e| io_error(&dir, e))?;
                    Ok(o)
                })
            }
        };
        match outcome {
            Ok(o) => {
                let pass = o.all_pass();
                println!("{}: {}", names[i], if pass { "pass" } else { "fail" });
                if !pass {
                    worst = worst.max(Some(Failure::Verdict));
                }
                summary.push(json!({ "name": names[i], "entry": entries[i], "pass": pass, "verdicts": o.verdicts }));
            }
            Err(e) => {
                println!("{}: error: {}", names[i], e.message);
                worst = worst.max(Some(e.kind));
                summary.push(json!({ "name": names[i], "entry": entries[i], "error": e.message }));
            }
        }
    }
    let summary_path = out.join("summary.json");
    write_json(&summary_path, &summary).map_err(|e| io_error(&summary_path, e))?;
    match worst {
        None => Ok(()),
        Some(kind) => Err(Error { kind, message: "batch finished with failures".into() }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze { graph, json } => cmd_analyze(graph, *json),
        Command::Simulate { scenario, out } => cmd_simulate(scenario, out),
        Command::Demo { name, out } => cmd_demo(name, out),
        Command::Batch { manifest, out, jobs } => cmd_batch(manifest, out, *jobs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.kind as u8)
        }
    }
}
