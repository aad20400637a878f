//! Causal-observability analysis over timestamped traces.
//!
//! Everything here works on wall stamps, the same data a real observability
//! backend would see. A send/recv pair whose receive stamp precedes its
//! send stamp is a *violation*: the trace claims an effect happened before
//! its cause. Detection, the rolling health signal, minimum-span
//! calibration, and the skew-safety predicate all build on that one
//! definition.
//!
//! Matching is structural: spans pair each receive with its request's
//! oldest unmatched send, in file order. Wall stamps are never used for
//! ordering; under skew they are exactly the thing that lies.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stage::Stage;
use crate::trace::{EventKind, TraceEvent};

#[derive(Debug, Error, PartialEq)]
pub enum CausalityError {
    #[error("recv events with no matching send (event ids {0:?})")]
    OrphanRecv(Vec<u64>),
    #[error("violation recorded at {at_ns} ns, before previous record at {prev_ns} ns")]
    RecordRegression { at_ns: i64, prev_ns: i64 },
    #[error("edge {edge}: baseline contains a negative span ({span_ns} ns); calibration requires a violation-free baseline")]
    NonBaselineSpan { edge: String, span_ns: i64 },
    #[error("edge {edge}: no positive spans to calibrate from")]
    EmptyEdge { edge: String },
    #[error("quantile {0} is outside (0, 1]")]
    InvalidQuantile(f64),
}

/// A directed hop between two stages, identified by stage names so the
/// same machinery works on external traces with unknown topologies.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
}

impl Edge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Edge {
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn between(from: Stage, to: Stage) -> Self {
        Edge::new(from.name(), to.name())
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

/// One matched send/recv pair and the wall-clock span between its stamps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpanRecord {
    pub edge: Edge,
    pub request_id: u64,
    pub send_event_id: u64,
    pub recv_event_id: u64,
    pub send_wall_ns: i64,
    pub recv_wall_ns: i64,
    /// `recv_wall_ns - send_wall_ns`. Negative means the trace places the
    /// arrival before the departure.
    pub span_ns: i64,
    /// Ground-truth receive time when the trace carries it.
    pub recv_true_ns: Option<i64>,
}

impl SpanRecord {
    /// A span violates causal order iff it is strictly negative; a zero
    /// span is degenerate but not contradictory.
    pub fn is_violation(&self) -> bool {
        self.span_ns < 0
    }
}

/// Result of matching a trace's sends to its receives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanExtraction {
    /// Matched spans in receive order (file order of the recv events).
    pub spans: Vec<SpanRecord>,
    /// Sends still unmatched at the end of the trace: messages in flight
    /// when the run stopped. Not an error and not violations.
    pub in_flight_send_ids: Vec<u64>,
}

/// Pairs each recv with its request's oldest unmatched send, in file
/// order. A recv with no pending send is a trace-integrity error (the
/// pipeline is lossless, so every arrival must have a departure).
pub fn extract_spans(events: &[TraceEvent]) -> Result<SpanExtraction, CausalityError> {
    let mut pending: HashMap<u64, VecDeque<&TraceEvent>> = HashMap::new();
    let mut spans = Vec::new();
    let mut orphans = Vec::new();

    for ev in events {
        match ev.kind {
            EventKind::Send => pending.entry(ev.request_id).or_default().push_back(ev),
            EventKind::Recv => {
                match pending.get_mut(&ev.request_id).and_then(VecDeque::pop_front) {
                    Some(send) => spans.push(SpanRecord {
                        edge: Edge::new(send.stage_id.clone(), ev.stage_id.clone()),
                        request_id: ev.request_id,
                        send_event_id: send.event_id,
                        recv_event_id: ev.event_id,
                        send_wall_ns: send.wall_ts_ns,
                        recv_wall_ns: ev.wall_ts_ns,
                        span_ns: ev.wall_ts_ns - send.wall_ts_ns,
                        recv_true_ns: ev.true_ts_ns,
                    }),
                    None => orphans.push(ev.event_id),
                }
            }
            EventKind::ServiceStart | EventKind::ServiceEnd => {}
        }
    }

    if !orphans.is_empty() {
        return Err(CausalityError::OrphanRecv(orphans));
    }

    let leftover: HashSet<u64> = pending
        .values()
        .flat_map(|q| q.iter().map(|e| e.event_id))
        .collect();
    let in_flight_send_ids = events
        .iter()
        .filter(|e| e.kind == EventKind::Send && leftover.contains(&e.event_id))
        .map(|e| e.event_id)
        .collect();

    Ok(SpanExtraction {
        spans,
        in_flight_send_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EdgeCounts {
    pub negative: u64,
    pub total: u64,
}

/// Aggregate violation accounting over a set of spans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub negative_count: u64,
    pub total_spans: u64,
    /// `negative_count / total_spans`; zero for an empty set.
    pub violation_rate: f64,
    /// Keyed by `from->to`.
    pub per_edge: BTreeMap<String, EdgeCounts>,
}

pub fn violation_stats(spans: &[SpanRecord]) -> ViolationStats {
    let mut per_edge: BTreeMap<String, EdgeCounts> = BTreeMap::new();
    let mut negative = 0;
    for s in spans {
        let e = per_edge.entry(s.edge.to_string()).or_default();
        e.total += 1;
        if s.is_violation() {
            e.negative += 1;
            negative += 1;
        }
    }
    let total = spans.len() as u64;
    ViolationStats {
        negative_count: negative,
        total_spans: total,
        violation_rate: if total == 0 {
            0.0
        } else {
            negative as f64 / total as f64
        },
        per_edge,
    }
}

/// Rolling binary causality-health signal.
///
/// Health at time `now` is 1 exactly when no violation has been recorded
/// in the half-open window `(now - window, now]`: a violation at the left
/// boundary has just aged out, one at `now` counts immediately.
#[derive(Debug, Clone)]
pub struct HealthState {
    window_ns: i64,
    recorded: Vec<i64>,
}

impl HealthState {
    pub fn new(window_ns: i64) -> Self {
        assert!(window_ns > 0, "health window must be positive");
        HealthState {
            window_ns,
            recorded: Vec::new(),
        }
    }

    pub fn window_ns(&self) -> i64 {
        self.window_ns
    }

    /// Records a violation at `at_ns`. Records must arrive in detection
    /// order; a regression means the caller replayed out of order.
    pub fn record(&mut self, at_ns: i64) -> Result<(), CausalityError> {
        if let Some(&prev) = self.recorded.last() {
            if at_ns < prev {
                return Err(CausalityError::RecordRegression {
                    at_ns,
                    prev_ns: prev,
                });
            }
        }
        self.recorded.push(at_ns);
        Ok(())
    }

    /// True when no recorded violation falls in `(now - window, now]`.
    pub fn is_healthy(&self, now_ns: i64) -> bool {
        let lo = now_ns - self.window_ns;
        // recorded is sorted; find any entry in (lo, now].
        let start = self.recorded.partition_point(|&v| v <= lo);
        let end = self.recorded.partition_point(|&v| v <= now_ns);
        start == end
    }

    pub fn violations_recorded(&self) -> u64 {
        self.recorded.len() as u64
    }
}

/// Replays a violation history against a tick schedule, producing the
/// health signal each tick would have reported. `ticks` must be ascending;
/// `violation_ts` is sorted internally.
pub fn health_timeline(ticks: &[i64], violation_ts: &[i64], window_ns: i64) -> Vec<(i64, u8)> {
    let mut sorted = violation_ts.to_vec();
    sorted.sort_unstable();
    ticks
        .iter()
        .map(|&t| {
            let lo = t - window_ns;
            let start = sorted.partition_point(|&v| v <= lo);
            let end = sorted.partition_point(|&v| v <= t);
            (t, u8::from(start == end))
        })
        .collect()
}

/// A quantile of the positive-span distribution on one edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub q: f64,
    pub value_ns: i64,
}

/// Minimum-separation calibration for one edge, estimated from a
/// violation-free baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTMinStats {
    pub edge: String,
    pub sample_count: u64,
    /// Smallest positive span observed on the edge.
    pub min_ns: i64,
    /// Nearest-rank quantiles of the positive spans, ascending in `q`.
    pub quantiles: Vec<QuantilePoint>,
}

pub const DEFAULT_QUANTILES: [f64; 3] = [0.001, 0.01, 0.05];

/// Estimates per-edge minimum positive separation from baseline spans.
///
/// Quantiles use the nearest-rank rule on the sorted positive spans:
/// rank `ceil(q * n)`, 1-based, so every reported value is an observed
/// sample. Negative spans mean the baseline was not actually a baseline
/// and are rejected outright; zero spans are excluded from the positive
/// distribution.
pub fn estimate_delta_t_min(
    spans: &[SpanRecord],
    quantiles: &[f64],
) -> Result<BTreeMap<String, DeltaTMinStats>, CausalityError> {
    for &q in quantiles {
        if !(q > 0.0 && q <= 1.0) {
            return Err(CausalityError::InvalidQuantile(q));
        }
    }
    let mut by_edge: BTreeMap<String, Vec<i64>> = BTreeMap::new();
    for s in spans {
        if s.span_ns < 0 {
            return Err(CausalityError::NonBaselineSpan {
                edge: s.edge.to_string(),
                span_ns: s.span_ns,
            });
        }
        by_edge.entry(s.edge.to_string()).or_default().push(s.span_ns);
    }

    let mut qs = quantiles.to_vec();
    qs.sort_by(|a, b| a.partial_cmp(b).expect("quantiles validated finite"));

    let mut out = BTreeMap::new();
    for (edge, mut samples) in by_edge {
        samples.retain(|&s| s > 0);
        if samples.is_empty() {
            return Err(CausalityError::EmptyEdge { edge });
        }
        samples.sort_unstable();
        let n = samples.len();
        let points = qs
            .iter()
            .map(|&q| {
                let rank = ((q * n as f64).ceil() as usize).max(1).min(n);
                QuantilePoint {
                    q,
                    value_ns: samples[rank - 1],
                }
            })
            .collect();
        out.insert(
            edge.clone(),
            DeltaTMinStats {
                edge,
                sample_count: n as u64,
                min_ns: samples[0],
                quantiles: points,
            },
        );
    }
    Ok(out)
}

/// Verdict of the skew-safety predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CausalVerdict {
    /// Clock error is strictly below the minimum observed separation;
    /// timestamp order matches causal order for every calibrated span.
    Preserved,
    /// Clock error reaches the minimum separation; some span may invert.
    MayBeViolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyAssessment {
    pub epsilon_ns: i64,
    pub verdict: CausalVerdict,
    /// Smallest calibrated quantile whose span value still exceeds the
    /// clock error: a margin indicator. `None` when even the largest
    /// calibrated quantile is within the error.
    pub first_safe_quantile: Option<f64>,
}

/// Applies the calibration predicate: causal order on this edge is
/// preserved iff the pairwise clock error is strictly below the minimum
/// observed positive separation.
pub fn safety_predicate(epsilon_ns: i64, stats: &DeltaTMinStats) -> SafetyAssessment {
    let verdict = if epsilon_ns < stats.min_ns {
        CausalVerdict::Preserved
    } else {
        CausalVerdict::MayBeViolated
    };
    let first_safe_quantile = stats
        .quantiles
        .iter()
        .find(|p| p.value_ns > epsilon_ns)
        .map(|p| p.q);
    SafetyAssessment {
        epsilon_ns,
        verdict,
        first_safe_quantile,
    }
}

/// Predicts how many of the given baseline spans on `edge` would invert if
/// the sending side's clock jumped ahead by `skew_ns`: every span strictly
/// smaller than the skew flips negative, nothing else changes.
pub fn predict_violations(baseline_spans: &[SpanRecord], edge: &Edge, skew_ns: i64) -> u64 {
    baseline_spans
        .iter()
        .filter(|s| &s.edge == edge && s.span_ns < skew_ns)
        .count() as u64
}
