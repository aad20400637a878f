//! Command-line front end for the skew simulator.
//!
//! Each subcommand runs one canned experiment (or audits an existing
//! trace) and writes its artifacts under the output directory. Exit
//! codes: 0 on success, 1 when an experiment fails at runtime, 2 when
//! the invocation or its inputs are at fault.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use skewsim::experiments::{
    analyze_trace, drift_recovery_preset, run_baseline, run_drift_recovery, run_queueing_control,
    run_sweep, skew_dir_name, write_audit_artifacts, write_queueing_artifacts, write_report_tables,
    write_run_artifacts, write_sweep_artifacts, QueueingOutput, ReportFormat, RunOutput,
    SweepOutput, TraceAudit, TraceVerdict,
};
use skewsim::trace::{read_trace_file, read_trace_file_mapped};
use skewsim::{ExperimentConfig, ExperimentError, ExperimentReport, SkewMode};

#[derive(Parser)]
#[command(
    name = "skewsim",
    version,
    about = "Deterministic clock-skew and causal-observability simulator",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args)]
struct GlobalArgs {
    /// Experiment config (JSON); omitted means the built-in defaults
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Directory artifacts are written under
    #[arg(long, global = true, value_name = "DIR", default_value = "skewsim-out")]
    out: PathBuf,

    /// Override the config's random seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the run duration in seconds
    #[arg(long, global = true, value_name = "SECONDS")]
    duration: Option<u64>,

    /// Which artifact families to write
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,

    /// Print nothing but errors
    #[arg(long, short, global = true)]
    quiet: bool,

    /// Print per-run detail
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// JSON reports only
    Structured,
    /// TSV tables only
    Tabular,
    /// Both
    Both,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Structured => ReportFormat::Structured,
            Format::Tabular => ReportFormat::Tabular,
            Format::Both => ReportFormat::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the zero-skew calibration pass and record per-edge
    /// minimum-separation statistics
    Baseline,

    /// Rerun the identical workload across a set of step-skew magnitudes
    Sweep {
        /// Comma-separated skew magnitudes in milliseconds
        #[arg(
            long,
            value_delimiter = ',',
            allow_negative_numbers = true,
            default_values_t = vec![0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 50.0]
        )]
        skews: Vec<f64>,
    },

    /// Run a drifting clock through violation onset and recovery
    Drift,

    /// Separate queueing delay from clock skew with three control arms
    Queueing {
        /// Arrival rate of the backlog arm, as a fraction of the
        /// inference service rate
        #[arg(long, default_value_t = 0.9)]
        high_util: f64,

        /// Arrival rate of the uncongested arms, same scale
        #[arg(long, default_value_t = 0.1)]
        low_util: f64,

        /// Step skew applied in the skewed arm, in milliseconds
        #[arg(long, default_value_t = 5.0)]
        skew_ms: f64,
    },

    /// Audit a trace file: match spans, count inversions, replay health
    Analyze {
        /// Trace file in JSONL form
        trace: PathBuf,

        /// JSON object mapping this tool's field names to the trace's
        #[arg(long, value_name = "PATH")]
        field_map: Option<PathBuf>,

        /// Rolling health window in seconds
        #[arg(long, default_value_t = 30)]
        window_s: u64,

        /// Health timeline tick in seconds
        #[arg(long, default_value_t = 1)]
        tick_s: u64,
    },

    /// Re-render the TSV tables from a saved report.json
    Report {
        /// Path to a report.json produced by an earlier run
        report: PathBuf,
    },
}

/// Failure plus which exit code it deserves.
enum CliError {
    /// The invocation or its inputs were wrong (exit 2).
    Usage(String),
    /// The experiment itself failed (exit 1).
    Runtime(String),
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(_)
            | ExperimentError::Trace(_)
            | ExperimentError::SkewedBaseline { .. }
            | ExperimentError::NegativeSkew(_)
            | ExperimentError::NoDriftConfigured
            | ExperimentError::UnstableArm { .. }
            | ExperimentError::UtilOrder { .. }
            | ExperimentError::AuditParams { .. }
            | ExperimentError::AuditSpan { .. } => CliError::Usage(e.to_string()),
            ExperimentError::Pipeline(_)
            | ExperimentError::Causality(_)
            | ExperimentError::BaselineIntegrity { .. }
            | ExperimentError::Io { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => ExperimentConfig::from_file(path)
            .map_err(|e| CliError::Usage(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(duration) = global.duration {
        cfg.run_duration_s = duration;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn ms_to_ns(ms: f64) -> i64 {
    (ms * 1e6).round() as i64
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Baseline => {
            let cfg = load_config(g)?;
            let run = run_baseline(&cfg)?;
            let dir = g.out.join("baseline");
            write_run_artifacts(&dir, &run, g.format.into())?;
            print_run_summary(g, "baseline", &run, &dir);
            if g.verbose && !g.quiet {
                if let Some(delta) = &run.report.delta_t_min {
                    for stats in delta.values() {
                        println!(
                            "  {}: min {} ns over {} spans",
                            stats.edge, stats.min_ns, stats.sample_count
                        );
                    }
                }
            }
            Ok(())
        }
        Command::Sweep { skews } => {
            let cfg = load_config(g)?;
            let skews_ns: Vec<i64> = skews.iter().map(|&ms| ms_to_ns(ms)).collect();
            let sweep = run_sweep(&cfg, &skews_ns)?;
            let dir = g.out.join("sweep");
            write_sweep_artifacts(&dir, &sweep, g.format.into())?;
            print_sweep_summary(g, &sweep, &dir);
            Ok(())
        }
        Command::Drift => {
            let mut cfg = load_config(g)?;
            if cfg.clocks.iter().all(|c| c.drift_ppb == 0) {
                cfg = drift_recovery_preset(&cfg);
            }
            let run = run_drift_recovery(&cfg)?;
            let dir = g.out.join("drift");
            write_run_artifacts(&dir, &run, g.format.into())?;
            print_run_summary(g, "drift", &run, &dir);
            if !g.quiet {
                let recovered = run
                    .report
                    .health_timeline
                    .iter()
                    .rev()
                    .take_while(|h| h.health == 1)
                    .count();
                if let (Some(first), Some(last)) = (
                    run.report.first_violation_true_ns,
                    run.report.last_violation_true_ns,
                ) {
                    println!(
                        "  violations span t={:.3}s..{:.3}s; final {} ticks healthy",
                        first as f64 / 1e9,
                        last as f64 / 1e9,
                        recovered
                    );
                }
            }
            Ok(())
        }
        Command::Queueing {
            high_util,
            low_util,
            skew_ms,
        } => {
            let cfg = load_config(g)?;
            let out = run_queueing_control(&cfg, *high_util, *low_util, ms_to_ns(*skew_ms))?;
            let dir = g.out.join("queueing");
            write_queueing_artifacts(&dir, &out, g.format.into())?;
            print_queueing_summary(g, &out, &dir);
            Ok(())
        }
        Command::Analyze {
            trace,
            field_map,
            window_s,
            tick_s,
        } => {
            let (header, events) = match field_map {
                Some(map_path) => {
                    let text = fs::read_to_string(map_path).map_err(|e| {
                        CliError::Usage(format!("field map {}: {e}", map_path.display()))
                    })?;
                    let map: BTreeMap<String, String> =
                        serde_json::from_str(&text).map_err(|e| {
                            CliError::Usage(format!("field map {}: {e}", map_path.display()))
                        })?;
                    read_trace_file_mapped(trace, &map)
                }
                None => read_trace_file(trace),
            }
            .map_err(|e| CliError::Usage(e.to_string()))?;

            let window_ns = (*window_s as i64).saturating_mul(1_000_000_000);
            let tick_ns = (*tick_s as i64).saturating_mul(1_000_000_000);
            let audit = analyze_trace(&events, window_ns, tick_ns)?;
            let dir = g.out.join("analyze");
            write_audit_artifacts(&dir, &audit, g.format.into())?;
            print_audit(g, trace, &header.run_id, events.len(), &audit, &dir);
            Ok(())
        }
        Command::Report { report } => {
            let text = fs::read_to_string(report)
                .map_err(|e| CliError::Usage(format!("report {}: {e}", report.display())))?;
            let parsed: ExperimentReport = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("report {}: {e}", report.display())))?;
            let dir = g.out.join("report");
            let written = write_report_tables(&dir, &parsed)?;
            if !g.quiet {
                println!(
                    "report {}: rendered {} tables under {}",
                    parsed.run_id,
                    written.len(),
                    dir.display()
                );
            }
            Ok(())
        }
    }
}

fn print_run_summary(g: &GlobalArgs, name: &str, run: &RunOutput, dir: &Path) {
    if g.quiet {
        return;
    }
    let r = &run.report;
    let skew_note = match r.skew.mode {
        SkewMode::None => "no skew".to_string(),
        SkewMode::Step => format!(
            "{}ms step on {}",
            r.skew.magnitude_ns as f64 / 1e6,
            r.skew.target_stage
        ),
    };
    println!(
        "{name} {}: {} requests, {} completed, {} violations of {} spans ({skew_note})",
        r.run_id, r.requests_produced, r.requests_completed, r.violations.negative_count,
        r.violations.total_spans
    );
    println!(
        "  final health {}, healthy fraction {:.3}, mean latency {:.3} ms",
        r.final_health,
        r.healthy_fraction,
        r.latency.mean_ns / 1e6
    );
    println!("  artifacts: {}", dir.display());
}

fn print_sweep_summary(g: &GlobalArgs, sweep: &SweepOutput, dir: &Path) {
    if g.quiet {
        return;
    }
    println!(
        "sweep over {} magnitudes targeting {}:",
        sweep.summary.len(),
        sweep.target_stage
    );
    for row in &sweep.summary {
        println!(
            "  skew {:>8.3} ms: {} violations (predicted {}) of {} spans, final health {}",
            row.skew_ns as f64 / 1e6,
            row.violations,
            row.predicted_violations,
            row.total_spans,
            row.final_health
        );
    }
    if g.verbose {
        for p in &sweep.points {
            println!("  {} -> {}", skew_dir_name(p.skew_ns), p.run.report.run_id);
        }
    }
    println!("  artifacts: {}", dir.display());
}

fn print_queueing_summary(g: &GlobalArgs, out: &QueueingOutput, dir: &Path) {
    if g.quiet {
        return;
    }
    println!(
        "queueing control, inference service rate {:.3}/s:",
        out.service_rate_per_s
    );
    for arm in &out.arms {
        let r = &arm.run.report;
        println!(
            "  {:<11} lambda {:>7.3}/s skew {:>5.1} ms: {} violations, mean latency {:>10.3} ms",
            arm.name,
            arm.arrival_rate_per_s,
            arm.skew_ns as f64 / 1e6,
            r.violations.negative_count,
            r.latency.mean_ns / 1e6
        );
    }
    println!("  artifacts: {}", dir.display());
}

fn print_audit(
    g: &GlobalArgs,
    trace: &Path,
    run_id: &str,
    events: usize,
    audit: &TraceAudit,
    dir: &Path,
) {
    if g.quiet {
        return;
    }
    println!(
        "analyzed {} ({run_id}): {events} events, {} spans",
        trace.display(),
        audit.violations.total_spans
    );
    println!(
        "verdict: {}",
        match audit.verdict {
            TraceVerdict::Preserved => "preserved",
            TraceVerdict::Violated => "violated",
        }
    );
    println!(
        "violations: {} of {} spans; in-flight sends: {}; final health {}",
        audit.violations.negative_count,
        audit.violations.total_spans,
        audit.in_flight_sends,
        audit.final_health
    );
    if !audit.violations.per_edge.is_empty() {
        println!("per-edge negative spans:");
        for (edge, counts) in &audit.violations.per_edge {
            println!("  {edge}: {}", counts.negative);
        }
    }
    if let Some(delta) = &audit.delta_t_min {
        println!("minimum separation per edge:");
        for stats in delta.values() {
            println!("  {}: {} ns", stats.edge, stats.min_ns);
        }
    }
    println!("artifacts: {}", dir.display());
}
