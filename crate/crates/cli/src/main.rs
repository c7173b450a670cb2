//! `quadsim`: run the built-in or file-defined scenarios and check them
//! against the stability monitor.
//!
//! Exit codes: 0 on success, 1 when a run aborts (`run`) or the monitor
//! reports a violation (`check`), 2 for usage errors, unknown scenarios and
//! invalid configuration files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand};
use log::{info, warn, LevelFilter};
use quadrotor_se3::config::{describe, SCENARIOS};
use quadrotor_se3::monitor::MonitorReport;
use quadrotor_se3::trace_io::{write_report, write_trace_csv};
use quadrotor_se3::{load_scenario, run, RunOutput, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "quadsim",
    version,
    about = "Geometric SE(3) quadrotor simulator"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write PREFIX.csv and PREFIX.report.
    Run(RunArgs),
    /// Simulate a scenario and print the stability monitor summary.
    Check(CheckArgs),
    /// List the built-in scenarios.
    List,
}

#[derive(Args)]
struct Overrides {
    /// Integration step, s.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time span, s.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long, required_unless_present = "all", conflicts_with = "all")]
    scenario: Option<String>,
    /// Run every built-in scenario; `--out` then names the output directory.
    #[arg(long)]
    all: bool,
    /// Output prefix (defaults to the scenario's own).
    #[arg(long, value_name = "PREFIX")]
    out: Option<String>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct CheckArgs {
    /// Built-in scenario name or path to a scenario file.
    #[arg(long)]
    scenario: String,
    #[command(flatten)]
    overrides: Overrides,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            Failure::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn load(name: &str, ov: &Overrides) -> Result<ScenarioConfig, Failure> {
    let mut cfg = load_scenario(name).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(dt) = ov.dt {
        cfg.sim.dt = dt;
    }
    if let Some(duration) = ov.duration {
        cfg.sim.duration = duration;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn simulate(cfg: &ScenarioConfig) -> Result<RunOutput, Failure> {
    info!(
        "running {} for {} s at dt = {}",
        cfg.mission.name, cfg.sim.duration, cfg.sim.dt
    );
    let out = run(&cfg.mission, &cfg.sim).map_err(|e| Failure::Runtime(e.to_string()))?;
    if let Some(abort) = &out.abort {
        warn!(
            "{} aborted at t = {}: {}",
            cfg.mission.name, abort.t, abort.reason
        );
    }
    Ok(out)
}

fn with_extension(prefix: &str, ext: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.{ext}"))
}

/// Runs one scenario and writes its files. Returns whether it completed.
fn run_and_write(cfg: &ScenarioConfig, prefix: &str) -> Result<bool, Failure> {
    let out = simulate(cfg)?;
    let csv = with_extension(prefix, "csv");
    let report = with_extension(prefix, "report");
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    write_trace_csv(&out.trace, &csv).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_report(&out.report, &report).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!(
        "{}: {} records, {} violation(s) -> {}, {}",
        cfg.mission.name,
        out.trace.len(),
        out.report.violations().len(),
        csv.display(),
        report.display()
    );
    Ok(out.completed())
}

fn cmd_run(args: RunArgs) -> Result<ExitCode, Failure> {
    if args.all {
        let dir = Path::new(args.out.as_deref().unwrap_or("."));
        let configs = SCENARIOS
            .iter()
            .map(|name| load(name, &args.overrides))
            .collect::<Result<Vec<_>, _>>()?;
        let results: Vec<Result<bool, Failure>> = thread::scope(|s| {
            let handles: Vec<_> = configs
                .iter()
                .map(|cfg| {
                    let prefix = dir.join(&cfg.mission.name).to_string_lossy().into_owned();
                    s.spawn(move || run_and_write(cfg, &prefix))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("scenario thread"))
                .collect()
        });
        let mut completed = true;
        for r in results {
            completed &= r?;
        }
        return Ok(exit_for(completed));
    }

    let name = args
        .scenario
        .expect("clap requires --scenario without --all");
    let cfg = load(&name, &args.overrides)?;
    let prefix = args.out.unwrap_or_else(|| cfg.output_prefix());
    Ok(exit_for(run_and_write(&cfg, &prefix)?))
}

fn exit_for(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn print_summary(report: &MonitorReport) {
    println!("scenario {}", report.scenario);
    match (&report.abort_time, &report.abort_reason) {
        (Some(t), Some(reason)) => println!("  aborted at t = {t}: {reason}"),
        _ => println!("  completed, {} records", report.records),
    }
    println!(
        "  negative rotor steps {}, heading fallbacks {}, re-orthonormalizations {}",
        report.negative_rotor_steps, report.heading_fallbacks, report.reorthonormalizations
    );
    println!("  segments: {}", report.segments.len());
    for seg in &report.segments {
        let fmt = |x: Option<f64>, digits: usize| {
            x.map_or_else(|| "-".to_string(), |v| format!("{v:.digits$}"))
        };
        let feasible = seg
            .certificate
            .as_ref()
            .map_or("-", |c| if c.feasible { "yes" } else { "no" });
        println!(
            "  [{}] {:<8} {:>6.2}..{:<6.2} psi0 {} t* {} certificate {} violations {}",
            seg.index,
            seg.mode,
            seg.t_start,
            seg.t_end,
            fmt(seg.psi0, 4),
            fmt(seg.t_star, 3),
            feasible,
            seg.violations.len()
        );
        for note in &seg.notes {
            println!("      note: {note}");
        }
    }
    let violations = report.violations();
    println!("  violations: {}", violations.len());
    for v in violations {
        println!("    t = {:.3} {}: {}", v.t, v.kind, v.detail);
    }
}

fn cmd_check(args: CheckArgs) -> Result<ExitCode, Failure> {
    let cfg = load(&args.scenario, &args.overrides)?;
    let out = simulate(&cfg)?;
    print_summary(&out.report);
    Ok(exit_for(
        out.completed() && out.report.violations().is_empty(),
    ))
}

fn cmd_list() -> ExitCode {
    for name in SCENARIOS {
        println!("{name:<8} {}", describe(name).unwrap_or_default());
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check(args) => cmd_check(args),
        Command::List => Ok(cmd_list()),
    };
    result.unwrap_or_else(Failure::exit)
}
