//! Deterministic simulator and analysis toolkit for studying how small
//! inter-node clock skew corrupts timestamp-based causal observability in a
//! staged message pipeline.
//!
//! The library is organized around one hard rule: simulation dynamics run
//! entirely in true time, and per-node clocks are read only when stamping
//! trace events. Skewing a clock therefore changes what the trace *says*
//! happened, never what *actually* happened. Everything downstream of that
//! rule (violation detection, the causality-health signal, minimum-span
//! calibration) measures the gap between the two.
//!
//! Module map:
//!
//! * [`stage`] - the five pipeline stages and their directed edges
//! * [`clock`] - per-node wall-clock models (offset, drift, steps, jitter)
//! * [`sim`] - the discrete-event queue with stable tie-breaking
//! * [`transport`] - inter-stage links: latency distributions, floor, FIFO
//! * [`pipeline`] - the five-stage simulation driver
//! * [`trace`] - trace event model and JSONL serialization
//! * [`causality`] - span extraction, violation stats, health, min-span
//! * [`config`] - experiment configuration, validation, digests
//! * [`experiments`] - canned experiment drivers and report emission
//!
//! All simulation state is seeded explicitly; a given `(config, seed)` pair
//! produces byte-identical traces and reports on every run.

pub mod causality;
pub mod clock;
pub mod config;
pub mod experiments;
mod mix;
pub mod pipeline;
pub mod sim;
pub mod stage;
pub mod trace;
pub mod transport;

pub use causality::{
    estimate_delta_t_min, extract_spans, predict_violations, safety_predicate, violation_stats,
    CausalVerdict, CausalityError, DeltaTMinStats, Edge, HealthState, SpanRecord, ViolationStats,
};
pub use clock::{ClockError, ClockModel, ClockSet, ClockStep, SkewMode, NANOS_PER_SEC};
pub use config::{ConfigError, ExperimentConfig};
pub use experiments::{ExperimentError, ExperimentReport, RunOutput};
pub use pipeline::{PipelineError, Simulation};
pub use sim::{EventQueue, SimError, SimEvent};
pub use stage::Stage;
pub use trace::{ClockNote, EventKind, TraceError, TraceEvent, TraceFileHeader};
