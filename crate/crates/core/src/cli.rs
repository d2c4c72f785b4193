//! `gabp` command line: `gen`, `run`, `analyze`, `compare`.
//!
//! Exit codes: 0 success, 1 usage or I/O error (including invalid
//! instances), 2 a quantitative check failed, 3 not converged within budget.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::{analyze, AnalysisConfig, AnalysisReport};
use crate::cone::BlockDiagonal;
use crate::engine::{run, Init, MessageState, RunOutcome, ScheduleConfig};
use crate::error::{Error, Result};
use crate::network::{self, generate_random, Coupling, GaussianNetwork, GeneratorConfig, Topology};
use crate::oracle::compare;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

const TOOL: &str = "gabp";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "gabp",
    version,
    about = "Gaussian belief propagation for distributed linear estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random instance file.
    Gen(GenArgs),
    /// Run belief propagation and write a trace and a summary.
    Run(RunArgs),
    /// Convergence diagnostics: bounds, part-metric rate, bracketing sequences, order properties.
    Analyze(AnalyzeArgs),
    /// Compare BP beliefs with the centralized posterior.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    nodes: usize,
    /// ring, star, complete, tree, er:<p> or grid:<rows>x<cols>
    #[arg(long, default_value = "ring")]
    topology: String,
    /// full or oriented
    #[arg(long, default_value = "full")]
    coupling: String,
    #[arg(long, default_value_t = 1)]
    dim_min: usize,
    #[arg(long, default_value_t = 1)]
    dim_max: usize,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ScheduleArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long = "max-iters", default_value_t = 500)]
    max_iters: usize,
    /// zero, identity:<gamma> or file:<path>
    #[arg(long, default_value = "zero")]
    init: String,
    /// Also require the largest mean change to fall below this before stopping.
    #[arg(long)]
    mean_tol: Option<f64>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Message state file (as written by `run`) to use as the fixed point.
    #[arg(long)]
    fixed_point: Option<PathBuf>,
    #[arg(long)]
    no_sandwich: bool,
    #[arg(long)]
    no_properties: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    schedule: ScheduleArgs,
    /// Largest acceptable per-variable mean error.
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Compare(a) => cmd_compare(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of the canonical serialization, independent of file formatting.
pub fn instance_hash(net: &GaussianNetwork) -> String {
    sha256_hex(&network::to_json_string(net))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let cfg = GeneratorConfig {
        seed: a.seed,
        nodes: a.nodes,
        topology: a.topology.parse::<Topology>()?,
        coupling: a.coupling.parse::<Coupling>()?,
        dim_min: a.dim_min,
        dim_max: a.dim_max,
        scale: a.scale,
    };
    let net = generate_random(&cfg)?;
    let text = network::to_json_string(&net);
    match &a.out {
        Some(p) => std::fs::write(p, &text)?,
        None => print!("{text}"),
    }
    let violations = net.validate();
    eprintln!(
        "generated {} nodes, {} links, {} directed edges, tree factor graph: {}; validation: {}",
        net.len(),
        net.edges().len(),
        net.directed_edges().len(),
        net.is_tree_factor_graph(),
        if violations.is_empty() {
            "ok".to_string()
        } else {
            format!("{} violations", violations.len())
        }
    );
    Ok(EXIT_OK)
}

fn load_instance(path: &Path) -> Result<GaussianNetwork> {
    network::load(path)
}

fn parse_init(net: &GaussianNetwork, spec: &str) -> Result<Init> {
    if spec == "zero" {
        return Ok(Init::Zero);
    }
    if let Some(g) = spec.strip_prefix("identity:") {
        let g: f64 = g
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad identity scale {g:?}")))?;
        return Ok(Init::ScaledIdentity(g));
    }
    if let Some(p) = spec.strip_prefix("file:") {
        let text = std::fs::read_to_string(p)?;
        return Ok(Init::Explicit(MessageState::from_json(net, &text)?));
    }
    Err(Error::InvalidInput(format!(
        "unknown init {spec:?}; expected zero, identity:<gamma> or file:<path>"
    )))
}

fn schedule_from(net: &GaussianNetwork, a: &ScheduleArgs) -> Result<ScheduleConfig> {
    Ok(ScheduleConfig {
        max_iterations: a.max_iters,
        tol_frobenius: a.tol,
        init: parse_init(net, &a.init)?,
        mean_tol: a.mean_tol,
        record_history: false,
        workers: a.workers,
    })
}

fn provenance(net: &GaussianNetwork, a: &ScheduleArgs) -> serde_json::Value {
    json!({
        "tool": TOOL,
        "version": VERSION,
        "seed": a.seed,
        "instance_sha256": instance_hash(net),
    })
}

fn csv_header(net: &GaussianNetwork, a: &ScheduleArgs) -> Vec<(&'static str, String)> {
    vec![
        ("tool", format!("{TOOL} {VERSION}")),
        ("seed", a.seed.to_string()),
        ("instance_sha256", instance_hash(net)),
    ]
}

fn outcome_json(outcome: &RunOutcome) -> serde_json::Value {
    let edges: Vec<_> = outcome
        .state
        .messages()
        .iter()
        .map(|m| {
            json!({
                "factor": m.edge.factor,
                "variable": m.edge.variable,
                "info": m.info.to_rows(),
                "mean": m.mean.iter().copied().collect::<Vec<_>>(),
            })
        })
        .collect();
    let beliefs: Vec<_> = outcome
        .beliefs
        .iter()
        .map(|b| {
            json!({
                "variable": b.variable,
                "mean": b.mean.iter().copied().collect::<Vec<_>>(),
                "cov": b.cov.to_rows(),
            })
        })
        .collect();
    let last = outcome.trace.records.last();
    json!({
        "converged": outcome.converged,
        "mean_converged": outcome.mean_converged,
        "iterations": outcome.iterations,
        "final_frobenius_delta": last.and_then(|r| r.frobenius_delta),
        "final_mean_delta": last.and_then(|r| r.mean_delta),
        "edges": edges,
        "beliefs": beliefs,
    })
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<i32> {
    let s = &a.schedule;
    let net = load_instance(&s.instance)?;
    let cfg = schedule_from(&net, s)?;
    let outcome = run(&net, &cfg)?;
    prepare_out(&s.out)?;
    std::fs::write(s.out.join("trace.csv"), outcome.trace.to_csv(&csv_header(&net, s)))?;
    std::fs::write(s.out.join("state.json"), outcome.state.to_json() + "\n")?;
    let summary = json!({
        "provenance": provenance(&net, s),
        "config": {
            "tol": s.tol,
            "max_iters": s.max_iters,
            "init": s.init,
            "mean_tol": s.mean_tol,
            "workers": s.workers,
        },
        "result": outcome_json(&outcome),
    });
    write_json(&s.out.join("summary.json"), &summary)?;
    println!(
        "{} after {} iterations",
        if outcome.converged {
            "converged"
        } else {
            "not converged"
        },
        outcome.iterations
    );
    Ok(if outcome.converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}

fn report_json(report: &AnalysisReport) -> serde_json::Value {
    serde_json::to_value(report).expect("plain data")
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<i32> {
    let s = &a.schedule;
    let net = load_instance(&s.instance)?;
    let fixed_point = match &a.fixed_point {
        Some(p) => {
            let st = MessageState::from_json(&net, &std::fs::read_to_string(p)?)?;
            let blocks: BlockDiagonal = st.blocks();
            if blocks.min_eigenvalue() <= 0.0 {
                return Err(Error::InvalidInput(
                    "supplied fixed point is not positive definite".into(),
                ));
            }
            Some(blocks)
        }
        None => None,
    };
    let cfg = AnalysisConfig {
        schedule: schedule_from(&net, s)?,
        epsilon: a.epsilon,
        alpha: a.alpha,
        sandwich: !a.no_sandwich,
        properties: !a.no_properties,
        trials: a.trials,
        seed: s.seed,
        fixed_point,
        ..Default::default()
    };
    let (report, _) = analyze(&net, &cfg)?;
    prepare_out(&s.out)?;
    std::fs::write(s.out.join("trace.csv"), report.trace.to_csv(&csv_header(&net, s)))?;
    let passed = report.passed();
    let doc = json!({
        "provenance": provenance(&net, s),
        "passed": passed,
        "analysis": report_json(&report),
    });
    write_json(&s.out.join("analysis.json"), &doc)?;
    println!(
        "analysis {}: c_estimate {}, window {}, in_bounds {}, property failures {}",
        if passed { "passed" } else { "FAILED" },
        report.rate.c_estimate.map_or("n/a".into(), |c| format!("{c:.4}")),
        report
            .rate
            .window
            .map_or("degenerate".into(), |(s, e)| format!("{s}..={e}")),
        report.all_in_bounds,
        report.properties.as_ref().map_or(0, |p| p.failures()),
    );
    Ok(if !passed {
        EXIT_CHECK_FAILED
    } else if !report.run_converged {
        EXIT_NOT_CONVERGED
    } else {
        EXIT_OK
    })
}

fn cmd_compare(a: &CompareArgs) -> Result<i32> {
    let s = &a.schedule;
    let net = load_instance(&s.instance)?;
    let mut cfg = schedule_from(&net, s)?;
    if cfg.mean_tol.is_none() {
        cfg.mean_tol = Some(cfg.tol_frobenius);
    }
    let outcome = run(&net, &cfg)?;
    let converged = outcome.converged && outcome.mean_converged;
    let report = compare(&net, &outcome.beliefs, converged)?;
    let mean_ok = report.max_mean_error <= a.threshold;
    prepare_out(&s.out)?;
    let doc = json!({
        "provenance": provenance(&net, s),
        "iterations": outcome.iterations,
        "converged": converged,
        "threshold": a.threshold,
        "mean_match": converged && mean_ok,
        "report": report,
    });
    write_json(&s.out.join("compare.json"), &doc)?;
    println!(
        "max mean error {:.3e}, max covariance error {:.3e} ({})",
        report.max_mean_error,
        report.max_cov_error,
        if report.is_tree {
            "tree: exact expected"
        } else {
            "loopy: covariance discrepancy expected"
        }
    );
    Ok(if !converged {
        EXIT_NOT_CONVERGED
    } else if mean_ok {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}
