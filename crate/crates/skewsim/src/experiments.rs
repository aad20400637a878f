//! Canned experiment drivers, report assembly, artifact emission, and
//! trace auditing.
//!
//! Every driver returns a [`RunOutput`]: the resolved config, the trace,
//! the matched spans, and a fully assembled [`ExperimentReport`]. Writing
//! artifacts is separate from running, and both are deterministic: the
//! same config produces the same bytes in every file, so runs can be
//! diffed directly.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{
    estimate_delta_t_min, extract_spans, predict_violations, violation_stats, CausalityError,
    DeltaTMinStats, Edge, SpanRecord, ViolationStats, DEFAULT_QUANTILES,
};
use crate::clock::{SkewMode, SkewProfile};
use crate::config::{ConfigError, ExperimentConfig};
use crate::pipeline::{LinkLedger, PipelineError, SimOutput, Simulation, TokenObservation};
use crate::stage::Stage;
use crate::trace::{
    write_trace_file, ClockNote, TraceError, TraceEvent, TraceFileHeader, TRACE_FORMAT_VERSION,
};

/// Hard cap on audit timeline length, so a pathological tick size against
/// a wide trace cannot exhaust memory.
const MAX_AUDIT_TICKS: i64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Causality(#[from] CausalityError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("baseline integrity violated: expected zero causality violations, found {count}")]
    BaselineIntegrity { count: u64 },
    #[error("baseline runs require skew mode `none`; config requests a {magnitude_ns} ns step")]
    SkewedBaseline { magnitude_ns: i64 },
    #[error("skew magnitudes must be non-negative, got {0} ns")]
    NegativeSkew(i64),
    #[error("drift-recovery runs require a nonzero drift rate on at least one clock")]
    NoDriftConfigured,
    #[error("utilization {util:.3} is outside (0, 1): arrival rate {lambda:.3}/s against service rate {mu:.3}/s would never drain")]
    UnstableArm { util: f64, lambda: f64, mu: f64 },
    #[error("low-utilization arm ({low:.3}) must be below the high-utilization arm ({high:.3})")]
    UtilOrder { low: f64, high: f64 },
    #[error("audit window and tick must be positive, got window {window_ns} ns, tick {tick_ns} ns")]
    AuditParams { window_ns: i64, tick_ns: i64 },
    #[error("audit would need {needed} ticks to cover the trace (max {MAX_AUDIT_TICKS}); raise the tick size")]
    AuditSpan { needed: i64 },
    #[error("artifact io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_ns: f64,
    pub min_ns: i64,
    pub max_ns: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSample {
    pub t_ns: i64,
    pub tokens: u64,
    pub tokens_per_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthSample {
    pub t_ns: i64,
    /// 1 healthy, 0 violated within the rolling window.
    pub health: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpsilonPoint {
    pub t_ns: i64,
    pub epsilon_ns: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickCount {
    pub t_ns: i64,
    pub count: u64,
}

/// The full analysis artifact for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub run_id: String,
    pub config_digest: String,
    pub seed: u64,
    pub duration_s: u64,
    pub skew: SkewProfile,
    pub requests_produced: u64,
    pub requests_completed: u64,
    pub tokens_observed: u64,
    /// Messages still crossing a link when the run stopped; their spans
    /// are excluded from violation accounting.
    pub in_flight_messages: u64,
    pub violations: ViolationStats,
    pub first_violation_true_ns: Option<i64>,
    pub last_violation_true_ns: Option<i64>,
    pub latency: LatencyStats,
    pub final_health: u8,
    /// Fraction of metric ticks reporting health 1.
    pub healthy_fraction: f64,
    /// Tokens observed at the postprocess stage per metric tick.
    pub throughput_series: Vec<ThroughputSample>,
    pub health_timeline: Vec<HealthSample>,
    /// Pairwise clock error of the skew target vs its downstream
    /// neighbor, sampled per tick.
    pub epsilon_series: Vec<EpsilonPoint>,
    pub violations_per_tick: Vec<TickCount>,
    /// Per-edge minimum-separation calibration; present on baseline runs.
    pub delta_t_min: Option<BTreeMap<String, DeltaTMinStats>>,
    pub link_ledger: Vec<LinkLedger>,
}

/// Everything one run produces.
#[derive(Debug)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub header: TraceFileHeader,
    pub trace: Vec<TraceEvent>,
    /// Spans matched live during the run, in detection order.
    pub spans: Vec<SpanRecord>,
    pub report: ExperimentReport,
}

/// Runs one experiment to its configured duration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let mut sim = Simulation::new(cfg)?;
    sim.run_to_end()?;
    let out = sim.finish();
    let report = build_report(cfg, &out);
    let header = TraceFileHeader {
        format_version: TRACE_FORMAT_VERSION,
        run_id: cfg.run_id(),
        config_digest: cfg.digest(),
        clock_note: ClockNote::Simulated,
    };
    Ok(RunOutput {
        config: cfg.clone(),
        header,
        trace: out.trace,
        spans: out.live_spans,
        report,
    })
}

fn build_report(cfg: &ExperimentConfig, out: &SimOutput) -> ExperimentReport {
    let violations = violation_stats(&out.live_spans);

    let eval_ts: Vec<i64> = out.violations.iter().map(|v| v.eval_wall_ns).collect();
    let health = crate::causality::health_timeline(&out.eval_ticks, &eval_ts, cfg.window_ns());
    let health_timeline: Vec<HealthSample> = out
        .ticks
        .iter()
        .zip(&health)
        .map(|(&t_ns, &(_, health))| HealthSample { t_ns, health })
        .collect();
    let final_health = health_timeline.last().map_or(1, |h| h.health);
    let healthy_fraction = if health_timeline.is_empty() {
        1.0
    } else {
        health_timeline.iter().map(|h| h.health as u64).sum::<u64>() as f64
            / health_timeline.len() as f64
    };

    let throughput_series = bin_tokens(&out.ticks, &out.token_observations, cfg.tick_ns());
    let violations_per_tick = bin_counts(&out.ticks, &out.eval_ticks, &eval_ts);

    let latency = latency_stats(out.completions.iter().map(|c| c.latency_ns));

    ExperimentReport {
        run_id: cfg.run_id(),
        config_digest: cfg.digest(),
        seed: cfg.seed,
        duration_s: cfg.run_duration_s,
        skew: cfg.skew,
        requests_produced: out.requests_produced,
        requests_completed: out.completions.len() as u64,
        tokens_observed: out.tokens_observed,
        in_flight_messages: out.in_flight,
        violations,
        first_violation_true_ns: out.violations.first().map(|v| v.detected_true_ns),
        last_violation_true_ns: out.violations.last().map(|v| v.detected_true_ns),
        latency,
        final_health,
        healthy_fraction,
        throughput_series,
        health_timeline,
        epsilon_series: out
            .epsilon_series
            .iter()
            .map(|s| EpsilonPoint {
                t_ns: s.true_ns,
                epsilon_ns: s.epsilon_ns,
            })
            .collect(),
        violations_per_tick,
        delta_t_min: None,
        link_ledger: out.link_ledger.clone(),
    }
}

/// Sums token observations into `(prev_tick, tick]` bins. Observations are
/// produced in true-time order, so one forward pass suffices.
fn bin_tokens(ticks: &[i64], obs: &[TokenObservation], tick_ns: i64) -> Vec<ThroughputSample> {
    let mut i = 0;
    ticks
        .iter()
        .map(|&t| {
            let mut tokens = 0;
            while i < obs.len() && obs[i].true_ns <= t {
                tokens += obs[i].tokens;
                i += 1;
            }
            ThroughputSample {
                t_ns: t,
                tokens,
                tokens_per_s: tokens as f64 * 1e9 / tick_ns as f64,
            }
        })
        .collect()
}

/// Counts violation evaluation stamps into `(prev_tick, tick]` bins on the
/// evaluation axis, keyed by the matching true-time tick.
fn bin_counts(true_ticks: &[i64], eval_ticks: &[i64], eval_ts: &[i64]) -> Vec<TickCount> {
    let mut sorted = eval_ts.to_vec();
    sorted.sort_unstable();
    let mut i = 0;
    true_ticks
        .iter()
        .zip(eval_ticks)
        .map(|(&t_ns, &eval_t)| {
            let mut count = 0;
            while i < sorted.len() && sorted[i] <= eval_t {
                count += 1;
                i += 1;
            }
            TickCount { t_ns, count }
        })
        .collect()
}

fn latency_stats(latencies: impl Iterator<Item = i64>) -> LatencyStats {
    let mut count = 0u64;
    let mut sum = 0i128;
    let mut min_ns = i64::MAX;
    let mut max_ns = i64::MIN;
    for l in latencies {
        count += 1;
        sum += l as i128;
        min_ns = min_ns.min(l);
        max_ns = max_ns.max(l);
    }
    if count == 0 {
        LatencyStats {
            count: 0,
            mean_ns: 0.0,
            min_ns: 0,
            max_ns: 0,
        }
    } else {
        LatencyStats {
            count,
            mean_ns: sum as f64 / count as f64,
            min_ns,
            max_ns,
        }
    }
}

/// Runs a zero-skew calibration pass: rejects configs that request skew,
/// requires a violation-free result, and attaches per-edge
/// minimum-separation stats to the report.
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    if cfg.skew.mode != SkewMode::None {
        return Err(ExperimentError::SkewedBaseline {
            magnitude_ns: cfg.skew.magnitude_ns,
        });
    }
    let mut run = run_experiment(cfg)?;
    let count = run.report.violations.negative_count;
    if count > 0 {
        return Err(ExperimentError::BaselineIntegrity { count });
    }
    let delta = estimate_delta_t_min(&run.spans, &DEFAULT_QUANTILES)?;
    run.report.delta_t_min = Some(delta);
    Ok(run)
}

#[derive(Debug)]
pub struct SweepPoint {
    pub skew_ns: i64,
    pub run: RunOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub skew_ns: i64,
    pub violations: u64,
    /// Oracle count derived from the baseline span distribution: a step of
    /// `s` flips exactly the outgoing baseline spans smaller than `s`.
    pub predicted_violations: u64,
    pub total_spans: u64,
    pub violation_rate: f64,
    pub requests_produced: u64,
    pub tokens_observed: u64,
    pub final_health: u8,
    pub healthy_fraction: f64,
}

#[derive(Debug)]
pub struct SweepOutput {
    pub target_stage: Stage,
    pub points: Vec<SweepPoint>,
    pub summary: Vec<SweepRow>,
}

/// Sweeps step-skew magnitudes on the configured target stage. Magnitudes
/// are sorted ascending and deduplicated; each point reruns the identical
/// workload with only the target clock changed.
pub fn run_sweep(cfg: &ExperimentConfig, skews_ns: &[i64]) -> Result<SweepOutput, ExperimentError> {
    for &s in skews_ns {
        if s < 0 {
            return Err(ExperimentError::NegativeSkew(s));
        }
    }
    let mut skews = skews_ns.to_vec();
    skews.sort_unstable();
    skews.dedup();

    let target = cfg.skew.target_stage;
    let mut points = Vec::with_capacity(skews.len());
    for &skew_ns in &skews {
        let mut point_cfg = cfg.clone();
        point_cfg.skew = SkewProfile {
            target_stage: target,
            mode: SkewMode::Step,
            magnitude_ns: skew_ns,
            start_time_ns: cfg.skew.start_time_ns.max(0),
        };
        points.push(SweepPoint {
            skew_ns,
            run: run_experiment(&point_cfg)?,
        });
    }

    // Prediction calibrates on the zero-skew spans; reuse the swept zero
    // point when present.
    let baseline_spans: Vec<SpanRecord> = match points.first() {
        Some(p) if p.skew_ns == 0 => p.run.spans.clone(),
        _ => {
            let mut zero_cfg = cfg.clone();
            zero_cfg.skew = SkewProfile {
                target_stage: target,
                mode: SkewMode::Step,
                magnitude_ns: 0,
                start_time_ns: cfg.skew.start_time_ns.max(0),
            };
            run_experiment(&zero_cfg)?.spans
        }
    };

    let outgoing = target.next().map(|d| Edge::between(target, d));
    let incoming = (target.index() > 0).then(|| Edge::between(Stage::ALL[target.index() - 1], target));
    let summary = points
        .iter()
        .map(|p| {
            // A step of +s shifts outgoing spans by -s and incoming spans
            // by +s; both directions are counted for exactness.
            let predicted = outgoing
                .as_ref()
                .map_or(0, |e| predict_violations(&baseline_spans, e, p.skew_ns))
                + incoming
                    .as_ref()
                    .map_or(0, |e| predict_violations(&baseline_spans, e, -p.skew_ns));
            let r = &p.run.report;
            SweepRow {
                skew_ns: p.skew_ns,
                violations: r.violations.negative_count,
                predicted_violations: predicted,
                total_spans: r.violations.total_spans,
                violation_rate: r.violations.violation_rate,
                requests_produced: r.requests_produced,
                tokens_observed: r.tokens_observed,
                final_health: r.final_health,
                healthy_fraction: r.healthy_fraction,
            }
        })
        .collect();

    Ok(SweepOutput {
        target_stage: target,
        points,
        summary,
    })
}

/// Returns a copy of the config with the stock drift-recovery clock
/// installed on the inference stage: the clock starts 5 ms ahead and
/// drifts back at 0.1 ms/s, crossing the inference->postprocess latency
/// floor at t=15 s and reaching zero error at t=50 s.
pub fn drift_recovery_preset(base: &ExperimentConfig) -> ExperimentConfig {
    let mut cfg = base.clone();
    for c in &mut cfg.clocks {
        if c.stage == Stage::Inference {
            c.offset_ns = 5_000_000;
            c.drift_ppb = -100_000;
        }
    }
    cfg
}

/// Runs a drift-recovery experiment: the config must give at least one
/// clock a nonzero drift rate so the error actually evolves.
pub fn run_drift_recovery(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    if cfg.clocks.iter().all(|c| c.drift_ppb == 0) {
        return Err(ExperimentError::NoDriftConfigured);
    }
    run_experiment(cfg)
}

#[derive(Debug)]
pub struct QueueingArm {
    pub name: &'static str,
    pub arrival_rate_per_s: f64,
    pub skew_ns: i64,
    pub run: RunOutput,
}

#[derive(Debug)]
pub struct QueueingOutput {
    /// Inference service rate the utilizations are scaled against.
    pub service_rate_per_s: f64,
    pub arms: Vec<QueueingArm>,
}

/// The queueing control experiment: three arms separating backlog effects
/// from clock effects.
///
/// * `backlog`: high utilization, synchronized clocks
/// * `low`: low utilization, synchronized clocks
/// * `low_skewed`: low utilization, step skew on the target stage
///
/// Both utilizations must lie in (0, 1); at or above 1 the queue never
/// drains and the run would measure nothing but its own horizon.
pub fn run_queueing_control(
    cfg: &ExperimentConfig,
    high_util: f64,
    low_util: f64,
    skew_ns: i64,
) -> Result<QueueingOutput, ExperimentError> {
    cfg.validate()?;
    let mu = cfg.inference_service_rate_per_s();
    for util in [high_util, low_util] {
        if !(util > 0.0 && util < 1.0) || !util.is_finite() {
            return Err(ExperimentError::UnstableArm {
                util,
                lambda: util * mu,
                mu,
            });
        }
    }
    if low_util >= high_util {
        return Err(ExperimentError::UtilOrder {
            low: low_util,
            high: high_util,
        });
    }
    if skew_ns < 0 {
        return Err(ExperimentError::NegativeSkew(skew_ns));
    }

    let target = cfg.skew.target_stage;
    let arm = |name: &'static str,
               util: f64,
               skew: SkewProfile|
     -> Result<QueueingArm, ExperimentError> {
        let mut arm_cfg = cfg.clone();
        arm_cfg.workload.arrival_rate_per_s = util * mu;
        arm_cfg.skew = skew;
        Ok(QueueingArm {
            name,
            arrival_rate_per_s: arm_cfg.workload.arrival_rate_per_s,
            skew_ns: skew.magnitude_ns,
            run: run_experiment(&arm_cfg)?,
        })
    };

    let arms = vec![
        arm("backlog", high_util, SkewProfile::none())?,
        arm("low", low_util, SkewProfile::none())?,
        arm("low_skewed", low_util, SkewProfile::step(target, skew_ns, 0))?,
    ];
    Ok(QueueingOutput {
        service_rate_per_s: mu,
        arms,
    })
}

/// Verdict over a whole trace: did any span invert?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceVerdict {
    Preserved,
    Violated,
}

/// Analysis of a trace file, simulated or external.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAudit {
    pub verdict: TraceVerdict,
    pub violations: ViolationStats,
    pub in_flight_sends: u64,
    pub window_ns: i64,
    pub tick_ns: i64,
    /// Health replayed on the wall-stamp axis, from the earliest stamp to
    /// the latest.
    pub health_timeline: Vec<HealthSample>,
    pub final_health: u8,
    pub healthy_fraction: f64,
    /// Present only when the trace is violation-free and calibratable.
    pub delta_t_min: Option<BTreeMap<String, DeltaTMinStats>>,
}

/// Audits a trace the way a monitoring backend would: matches spans,
/// counts inversions, and replays the rolling health signal using each
/// violation's receive stamp as its detection time.
pub fn analyze_trace(
    events: &[TraceEvent],
    window_ns: i64,
    tick_ns: i64,
) -> Result<TraceAudit, ExperimentError> {
    if window_ns <= 0 || tick_ns <= 0 {
        return Err(ExperimentError::AuditParams { window_ns, tick_ns });
    }
    let extraction = extract_spans(events)?;
    let stats = violation_stats(&extraction.spans);

    let violation_ts: Vec<i64> = extraction
        .spans
        .iter()
        .filter(|s| s.is_violation())
        .map(|s| s.recv_wall_ns)
        .collect();

    let ticks = audit_ticks(events, tick_ns)?;
    let timeline = crate::causality::health_timeline(&ticks, &violation_ts, window_ns);
    let health_timeline: Vec<HealthSample> = timeline
        .iter()
        .map(|&(t_ns, health)| HealthSample { t_ns, health })
        .collect();
    let final_health = health_timeline.last().map_or(1, |h| h.health);
    let healthy_fraction = if health_timeline.is_empty() {
        1.0
    } else {
        health_timeline.iter().map(|h| h.health as u64).sum::<u64>() as f64
            / health_timeline.len() as f64
    };

    let delta_t_min = if stats.negative_count == 0 && !extraction.spans.is_empty() {
        estimate_delta_t_min(&extraction.spans, &DEFAULT_QUANTILES).ok()
    } else {
        None
    };

    Ok(TraceAudit {
        verdict: if stats.negative_count > 0 {
            TraceVerdict::Violated
        } else {
            TraceVerdict::Preserved
        },
        violations: stats,
        in_flight_sends: extraction.in_flight_send_ids.len() as u64,
        window_ns,
        tick_ns,
        health_timeline,
        final_health,
        healthy_fraction,
        delta_t_min,
    })
}

fn audit_ticks(events: &[TraceEvent], tick_ns: i64) -> Result<Vec<i64>, ExperimentError> {
    let Some(lo) = events.iter().map(|e| e.wall_ts_ns).min() else {
        return Ok(Vec::new());
    };
    let hi = events.iter().map(|e| e.wall_ts_ns).max().unwrap();
    let needed = (hi - lo) / tick_ns + 2;
    if needed > MAX_AUDIT_TICKS {
        return Err(ExperimentError::AuditSpan { needed });
    }
    let mut ticks = Vec::with_capacity(needed as usize);
    let mut t = lo;
    while t < hi {
        ticks.push(t);
        t += tick_ns;
    }
    ticks.push(t);
    Ok(ticks)
}

/// Which artifact families to write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// report.json only.
    Structured,
    /// Plot-ready TSV series only.
    Tabular,
    /// Both.
    Both,
}

impl ReportFormat {
    fn structured(self) -> bool {
        matches!(self, ReportFormat::Structured | ReportFormat::Both)
    }

    fn tabular(self) -> bool {
        matches!(self, ReportFormat::Tabular | ReportFormat::Both)
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}

fn seconds(t_ns: i64) -> String {
    format!("{:.3}", t_ns as f64 / 1e9)
}

/// Writes one run's artifacts into `dir`:
///
/// * `resolved_config.json` - the exact config the run executed
/// * `trace.jsonl` - the full event trace
/// * `report.json` - the structured report (structured formats)
/// * `throughput.tsv`, `health.tsv`, `epsilon.tsv`, `violations.tsv`,
///   `summary.tsv`, and `delta_t_min.tsv` when calibrated (tabular)
pub fn write_run_artifacts(
    dir: &Path,
    run: &RunOutput,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();

    let config_path = dir.join("resolved_config.json");
    write_text(&config_path, &json_pretty(&run.config))?;
    written.push(config_path);

    let trace_path = dir.join("trace.jsonl");
    write_trace_file(&trace_path, &run.header, &run.trace)?;
    written.push(trace_path);

    if format.structured() {
        let report_path = dir.join("report.json");
        write_text(&report_path, &json_pretty(&run.report))?;
        written.push(report_path);
    }

    if format.tabular() {
        written.extend(write_report_tables(dir, &run.report)?);
    }

    Ok(written)
}

/// Renders the plot-ready TSV tables for one report into `dir`. Used both
/// for fresh runs and for re-rendering from a saved `report.json`.
pub fn write_report_tables(
    dir: &Path,
    r: &ExperimentReport,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut throughput = String::from("t_s\ttokens\ttokens_per_s\n");
    for s in &r.throughput_series {
        throughput.push_str(&format!(
            "{}\t{}\t{:.3}\n",
            seconds(s.t_ns),
            s.tokens,
            s.tokens_per_s
        ));
    }
    let mut health = String::from("t_s\thealth\n");
    for s in &r.health_timeline {
        health.push_str(&format!("{}\t{}\n", seconds(s.t_ns), s.health));
    }
    let mut epsilon = String::from("t_s\tepsilon_ns\tepsilon_ms\n");
    for s in &r.epsilon_series {
        epsilon.push_str(&format!(
            "{}\t{}\t{:.6}\n",
            seconds(s.t_ns),
            s.epsilon_ns,
            s.epsilon_ns as f64 / 1e6
        ));
    }
    let mut per_tick = String::from("t_s\tviolations\n");
    for s in &r.violations_per_tick {
        per_tick.push_str(&format!("{}\t{}\n", seconds(s.t_ns), s.count));
    }
    let mut summary = String::from("key\tvalue\n");
    for (k, v) in [
        ("run_id", r.run_id.clone()),
        ("seed", r.seed.to_string()),
        ("duration_s", r.duration_s.to_string()),
        ("requests_produced", r.requests_produced.to_string()),
        ("requests_completed", r.requests_completed.to_string()),
        ("tokens_observed", r.tokens_observed.to_string()),
        ("in_flight_messages", r.in_flight_messages.to_string()),
        ("violations", r.violations.negative_count.to_string()),
        ("total_spans", r.violations.total_spans.to_string()),
        ("violation_rate", format!("{:.6}", r.violations.violation_rate)),
        ("final_health", r.final_health.to_string()),
        ("healthy_fraction", format!("{:.6}", r.healthy_fraction)),
        ("mean_latency_ms", format!("{:.6}", r.latency.mean_ns / 1e6)),
    ] {
        summary.push_str(&format!("{k}\t{v}\n"));
    }

    for (name, body) in [
        ("throughput.tsv", throughput),
        ("health.tsv", health),
        ("epsilon.tsv", epsilon),
        ("violations.tsv", per_tick),
        ("summary.tsv", summary),
    ] {
        let path = dir.join(name);
        write_text(&path, &body)?;
        written.push(path);
    }

    if let Some(delta) = &r.delta_t_min {
        let mut table = String::from("edge\tsample_count\tmin_ns\tq\tvalue_ns\n");
        for stats in delta.values() {
            for p in &stats.quantiles {
                table.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    stats.edge, stats.sample_count, stats.min_ns, p.q, p.value_ns
                ));
            }
        }
        let path = dir.join("delta_t_min.tsv");
        write_text(&path, &table)?;
        written.push(path);
    }

    Ok(written)
}

/// Directory name for one sweep point, e.g. `skew_5ms`, `skew_4.5ms`.
pub fn skew_dir_name(skew_ns: i64) -> String {
    let ms = skew_ns as f64 / 1e6;
    let text = format!("{ms:.6}");
    let trimmed = text.trim_end_matches('0').trim_end_matches('.');
    format!("skew_{trimmed}ms")
}

/// Writes per-point artifacts plus `sweep_summary.json` / `.tsv`.
pub fn write_sweep_artifacts(
    dir: &Path,
    sweep: &SweepOutput,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    for p in &sweep.points {
        written.extend(write_run_artifacts(
            &dir.join(skew_dir_name(p.skew_ns)),
            &p.run,
            format,
        )?);
    }

    let json_path = dir.join("sweep_summary.json");
    write_text(&json_path, &json_pretty(&sweep.summary))?;
    written.push(json_path);

    let mut tsv = String::from(
        "skew_ms\tviolations\tpredicted\ttotal_spans\tviolation_rate\trequests\ttokens\tfinal_health\thealthy_fraction\n",
    );
    for row in &sweep.summary {
        tsv.push_str(&format!(
            "{:.3}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{:.6}\n",
            row.skew_ns as f64 / 1e6,
            row.violations,
            row.predicted_violations,
            row.total_spans,
            row.violation_rate,
            row.requests_produced,
            row.tokens_observed,
            row.final_health,
            row.healthy_fraction,
        ));
    }
    let tsv_path = dir.join("sweep_summary.tsv");
    write_text(&tsv_path, &tsv)?;
    written.push(tsv_path);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct QueueingSummaryRow {
    arm: String,
    arrival_rate_per_s: f64,
    utilization: f64,
    skew_ns: i64,
    requests_produced: u64,
    requests_completed: u64,
    violations: u64,
    mean_latency_ms: f64,
}

/// Writes per-arm artifacts plus `queueing_summary.json` / `.tsv`.
pub fn write_queueing_artifacts(
    dir: &Path,
    out: &QueueingOutput,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for arm in &out.arms {
        written.extend(write_run_artifacts(&dir.join(arm.name), &arm.run, format)?);
        let r = &arm.run.report;
        rows.push(QueueingSummaryRow {
            arm: arm.name.to_string(),
            arrival_rate_per_s: arm.arrival_rate_per_s,
            utilization: arm.arrival_rate_per_s / out.service_rate_per_s,
            skew_ns: arm.skew_ns,
            requests_produced: r.requests_produced,
            requests_completed: r.requests_completed,
            violations: r.violations.negative_count,
            mean_latency_ms: r.latency.mean_ns / 1e6,
        });
    }

    let json_path = dir.join("queueing_summary.json");
    write_text(&json_path, &json_pretty(&rows))?;
    written.push(json_path);

    let mut tsv = String::from(
        "arm\tarrival_rate_per_s\tutilization\tskew_ms\trequests\tcompleted\tviolations\tmean_latency_ms\n",
    );
    for row in &rows {
        tsv.push_str(&format!(
            "{}\t{:.6}\t{:.3}\t{:.3}\t{}\t{}\t{}\t{:.6}\n",
            row.arm,
            row.arrival_rate_per_s,
            row.utilization,
            row.skew_ns as f64 / 1e6,
            row.requests_produced,
            row.requests_completed,
            row.violations,
            row.mean_latency_ms,
        ));
    }
    let tsv_path = dir.join("queueing_summary.tsv");
    write_text(&tsv_path, &tsv)?;
    written.push(tsv_path);
    Ok(written)
}

/// Writes `audit.json` plus a tabular health timeline for one audit.
pub fn write_audit_artifacts(
    dir: &Path,
    audit: &TraceAudit,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    if format.structured() {
        let path = dir.join("audit.json");
        write_text(&path, &json_pretty(audit))?;
        written.push(path);
    }
    if format.tabular() {
        let mut health = String::from("t_s\thealth\n");
        for s in &audit.health_timeline {
            health.push_str(&format!("{}\t{}\n", seconds(s.t_ns), s.health));
        }
        let path = dir.join("audit_health.tsv");
        write_text(&path, &health)?;
        written.push(path);
    }
    Ok(written)
}
