//! The five-stage pipeline simulation.
//!
//! Requests enter at the producer, hop across four links, get served at
//! three FIFO single-server stages, and terminate at the observer. All
//! scheduling happens in true time; per-stage clocks are consulted exactly
//! once per trace event, to produce its wall stamp. That separation is
//! what makes skew experiments exact: changing a clock cannot move a
//! single event, only relabel it.
//!
//! Each completed request leaves 14 trace events: one producer send, then
//! recv / service_start / service_end / send at each of the three serving
//! stages, and a terminal observer recv.
//!
//! Violations are detected live, the way a monitoring backend would see
//! them: on every arrival the receive stamp is compared with the matching
//! send stamp, and a negative span is recorded at the observer's clock
//! reading for that instant.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causality::{Edge, SpanRecord};
use crate::clock::{ClockError, ClockSet, NANOS_PER_SEC};
use crate::config::{ArrivalProcess, ConfigError, ExperimentConfig, TokenDist};
use crate::mix::derive_stream_seed;
use crate::sim::{EventQueue, SimError};
use crate::stage::Stage;
use crate::trace::{EventKind, TraceEvent};
use crate::transport::LinkRuntime;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// A request in flight through the pipeline.
#[derive(Debug)]
struct Message {
    request_id: u64,
    tokens: u32,
    produced_at_ns: i64,
    /// The send that put this message on its current link, pending until
    /// the matching recv closes the span.
    last_send: Option<PendingSend>,
}

#[derive(Debug, Clone, Copy)]
struct PendingSend {
    from: Stage,
    event_id: u64,
    wall_ns: i64,
}

#[derive(Debug)]
enum Ev {
    /// A new request hits the producer.
    RequestArrival,
    /// A message finishes crossing the link into `to`.
    MessageArrival { to: Stage, msg: Message },
    /// The message in service at `stage` completes.
    ServiceComplete { stage: Stage },
    /// Periodic metrics sampling point.
    MetricTick,
}

#[derive(Debug, Default)]
struct Station {
    waiting: VecDeque<Message>,
    in_service: Option<Message>,
}

/// A negative span observed live, stamped with the observer's clock
/// reading at the true instant of detection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViolationEvent {
    pub edge: Edge,
    pub request_id: u64,
    pub span_ns: i64,
    /// True time of the receiving event.
    pub detected_true_ns: i64,
    /// The observer's noiseless wall reading at that instant; health and
    /// per-tick accounting run on this axis.
    pub eval_wall_ns: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Completion {
    pub request_id: u64,
    pub finished_true_ns: i64,
    pub latency_ns: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenObservation {
    pub true_ns: i64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpsilonSample {
    pub true_ns: i64,
    pub epsilon_ns: i64,
}

/// Per-link send/delivery ledger, proof of zero loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkLedger {
    pub edge: String,
    pub sends: u64,
    pub deliveries: u64,
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct SimOutput {
    pub trace: Vec<TraceEvent>,
    /// Spans matched live at each arrival, in detection order.
    pub live_spans: Vec<SpanRecord>,
    pub violations: Vec<ViolationEvent>,
    pub completions: Vec<Completion>,
    pub requests_produced: u64,
    pub tokens_observed: u64,
    pub token_observations: Vec<TokenObservation>,
    /// Metric tick instants in true time, starting at t=0.
    pub ticks: Vec<i64>,
    /// The same ticks mapped through the observer's noiseless clock; the
    /// axis health is evaluated on.
    pub eval_ticks: Vec<i64>,
    /// Pairwise clock error of the skew target against its downstream
    /// neighbor, sampled each tick.
    pub epsilon_series: Vec<EpsilonSample>,
    pub link_ledger: Vec<LinkLedger>,
    /// Messages still on a link when the run stopped.
    pub in_flight: u64,
}

/// The simulation driver. Build with [`Simulation::new`], advance with
/// [`Simulation::run_until`] or [`Simulation::run_to_end`], then collect
/// results with [`Simulation::finish`].
pub struct Simulation {
    cfg: ExperimentConfig,
    clocks: ClockSet,
    queue: EventQueue<Ev>,
    links: Vec<LinkRuntime>,
    stations: Vec<Station>,
    workload_rng: ChaCha12Rng,
    duration_ns: i64,
    tick_ns: i64,
    epsilon_pair: (Stage, Stage),

    next_request_id: u64,
    next_event_id: u64,
    stage_seq: [u64; 5],
    read_counters: [u64; 5],

    trace: Vec<TraceEvent>,
    live_spans: Vec<SpanRecord>,
    violations: Vec<ViolationEvent>,
    completions: Vec<Completion>,
    requests_produced: u64,
    tokens_observed: u64,
    token_observations: Vec<TokenObservation>,
    ticks: Vec<i64>,
    epsilon_series: Vec<EpsilonSample>,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let clocks = cfg.clock_set()?.apply_skew_profile(&cfg.skew)?;

        let links = Stage::edges()
            .iter()
            .enumerate()
            .map(|(i, &(from, to))| {
                LinkRuntime::new(
                    cfg.link(from, to).to_model(),
                    derive_stream_seed(cfg.seed, 1 + i as u64),
                )
            })
            .collect();

        let mut sim = Simulation {
            cfg: cfg.clone(),
            clocks,
            queue: EventQueue::new(),
            links,
            stations: (0..Stage::COUNT).map(|_| Station::default()).collect(),
            workload_rng: ChaCha12Rng::seed_from_u64(derive_stream_seed(cfg.seed, 0)),
            duration_ns: cfg.duration_ns(),
            tick_ns: cfg.tick_ns(),
            epsilon_pair: epsilon_pair(cfg),
            next_request_id: 0,
            next_event_id: 1,
            stage_seq: [0; 5],
            read_counters: [0; 5],
            trace: Vec::new(),
            live_spans: Vec::new(),
            violations: Vec::new(),
            completions: Vec::new(),
            requests_produced: 0,
            tokens_observed: 0,
            token_observations: Vec::new(),
            ticks: Vec::new(),
            epsilon_series: Vec::new(),
        };

        // Metrics sample from t=0; the first request arrives after one
        // inter-arrival gap.
        sim.queue.schedule_at(0, Ev::MetricTick)?;
        let first_gap = sim.sample_interarrival_ns();
        sim.schedule_arrival(first_gap)?;
        Ok(sim)
    }

    /// Advances through every event firing at or before `horizon_ns`
    /// (inclusive) and leaves the clock at the horizon. Successive calls
    /// with increasing horizons are equivalent to one call with the last.
    pub fn run_until(&mut self, horizon_ns: i64) -> Result<(), PipelineError> {
        while let Some(ev) = self.queue.pop_until(horizon_ns) {
            self.dispatch(ev.payload)?;
        }
        self.queue.advance_to(horizon_ns)?;
        Ok(())
    }

    /// Runs to the configured duration.
    pub fn run_to_end(&mut self) -> Result<(), PipelineError> {
        self.run_until(self.duration_ns)
    }

    pub fn now(&self) -> i64 {
        self.queue.now()
    }

    pub fn finish(self) -> SimOutput {
        let link_ledger: Vec<LinkLedger> = self
            .links
            .iter()
            .map(|l| LinkLedger {
                edge: l.model.edge_name(),
                sends: l.sends(),
                deliveries: l.deliveries(),
            })
            .collect();
        let in_flight = self.links.iter().map(|l| l.in_flight()).sum();
        let observer = self.clocks.model(Stage::Observer);
        let eval_ticks = self.ticks.iter().map(|&t| observer.read_noiseless(t)).collect();
        SimOutput {
            trace: self.trace,
            live_spans: self.live_spans,
            violations: self.violations,
            completions: self.completions,
            requests_produced: self.requests_produced,
            tokens_observed: self.tokens_observed,
            token_observations: self.token_observations,
            ticks: self.ticks,
            eval_ticks,
            epsilon_series: self.epsilon_series,
            link_ledger,
            in_flight,
        }
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), PipelineError> {
        match ev {
            Ev::RequestArrival => self.on_request_arrival(),
            Ev::MessageArrival { to, msg } => self.on_message_arrival(to, msg),
            Ev::ServiceComplete { stage } => self.on_service_complete(stage),
            Ev::MetricTick => self.on_metric_tick(),
        }
    }

    /// Emits one trace event at the current true time, stamped by the
    /// stage's clock. This is the only place clocks are read with a
    /// consumed reading index.
    fn emit(&mut self, stage: Stage, kind: EventKind, request_id: u64) -> (u64, i64) {
        let true_ns = self.queue.now();
        let idx = self.read_counters[stage.index()];
        self.read_counters[stage.index()] += 1;
        let wall_ns = self.clocks.model(stage).read(true_ns, idx);
        let seq = self.stage_seq[stage.index()];
        self.stage_seq[stage.index()] += 1;
        let event_id = self.next_event_id;
        self.next_event_id += 1;
        self.trace.push(TraceEvent {
            event_id,
            request_id,
            stage_id: stage.name().to_string(),
            kind,
            wall_ts_ns: wall_ns,
            true_ts_ns: Some(true_ns),
            seq,
        });
        (event_id, wall_ns)
    }

    fn sample_tokens(&mut self) -> u32 {
        match self.cfg.workload.tokens_per_request {
            TokenDist::Fixed { count } => count,
            TokenDist::Uniform { lo, hi } => self.workload_rng.random_range(lo..=hi),
        }
    }

    fn sample_interarrival_ns(&mut self) -> i64 {
        let rate = self.cfg.workload.arrival_rate_per_s;
        match self.cfg.workload.arrival_process {
            ArrivalProcess::Deterministic => (NANOS_PER_SEC as f64 / rate).round() as i64,
            ArrivalProcess::Exponential => {
                let exp = Exp::new(rate).expect("validated positive rate");
                let gap_s: f64 = exp.sample(&mut self.workload_rng);
                (gap_s * NANOS_PER_SEC as f64).round() as i64
            }
        }
    }

    /// Schedules the next request arrival, capped just past the workload
    /// horizon so an arbitrarily long sampled gap cannot overflow the
    /// timeline. Arrivals past the horizon never produce anything.
    fn schedule_arrival(&mut self, gap_ns: i64) -> Result<(), PipelineError> {
        let at = self
            .queue
            .now()
            .saturating_add(gap_ns.max(0))
            .min(self.duration_ns + 1);
        self.queue.schedule_at(at, Ev::RequestArrival)?;
        Ok(())
    }

    fn on_request_arrival(&mut self) -> Result<(), PipelineError> {
        let now = self.queue.now();
        if now > self.duration_ns {
            // The workload stops at the configured duration; the chain
            // ends here even if the caller runs further.
            return Ok(());
        }
        // Fixed draw order (tokens, then the next gap) keeps the workload
        // stream identical across unrelated config changes.
        let tokens = self.sample_tokens();
        let msg = Message {
            request_id: self.next_request_id,
            tokens,
            produced_at_ns: now,
            last_send: None,
        };
        self.next_request_id += 1;
        self.requests_produced += 1;
        self.send_downstream(Stage::Producer, msg)?;
        let gap = self.sample_interarrival_ns();
        self.schedule_arrival(gap)
    }

    /// Stamps a send and puts the message on the outgoing link.
    fn send_downstream(&mut self, from: Stage, mut msg: Message) -> Result<(), PipelineError> {
        let now = self.queue.now();
        let (event_id, wall_ns) = self.emit(from, EventKind::Send, msg.request_id);
        msg.last_send = Some(PendingSend {
            from,
            event_id,
            wall_ns,
        });
        let delivery = self.links[from.index()].accept(now);
        let to = from.next().expect("terminal stage never sends");
        self.queue.schedule_at(delivery, Ev::MessageArrival { to, msg })?;
        Ok(())
    }

    fn on_message_arrival(&mut self, to: Stage, mut msg: Message) -> Result<(), PipelineError> {
        let now = self.queue.now();
        self.links[to.index() - 1].record_delivery();
        let (recv_id, recv_wall) = self.emit(to, EventKind::Recv, msg.request_id);

        let send = msg.last_send.take().expect("every arrival follows a send");
        let span_ns = recv_wall - send.wall_ns;
        let edge = Edge::between(send.from, to);
        self.live_spans.push(SpanRecord {
            edge: edge.clone(),
            request_id: msg.request_id,
            send_event_id: send.event_id,
            recv_event_id: recv_id,
            send_wall_ns: send.wall_ns,
            recv_wall_ns: recv_wall,
            span_ns,
            recv_true_ns: Some(now),
        });
        if span_ns < 0 {
            let eval_wall_ns = self.clocks.model(Stage::Observer).read_noiseless(now);
            self.violations.push(ViolationEvent {
                edge,
                request_id: msg.request_id,
                span_ns,
                detected_true_ns: now,
                eval_wall_ns,
            });
        }

        if to == Stage::Postprocess {
            self.tokens_observed += msg.tokens as u64;
            self.token_observations.push(TokenObservation {
                true_ns: now,
                tokens: msg.tokens as u64,
            });
        }
        if to == Stage::Observer {
            self.completions.push(Completion {
                request_id: msg.request_id,
                finished_true_ns: now,
                latency_ns: now - msg.produced_at_ns,
            });
            return Ok(());
        }

        debug_assert!(to.serves(), "only serving stages receive non-terminal messages");
        self.stations[to.index()].waiting.push_back(msg);
        if self.stations[to.index()].in_service.is_none() {
            self.start_service(to)?;
        }
        Ok(())
    }

    fn start_service(&mut self, stage: Stage) -> Result<(), PipelineError> {
        let msg = self.stations[stage.index()]
            .waiting
            .pop_front()
            .expect("start_service called with a waiting message");
        let request_id = msg.request_id;
        let service_ns = self.cfg.service_ns(stage, msg.tokens);
        self.emit(stage, EventKind::ServiceStart, request_id);
        self.stations[stage.index()].in_service = Some(msg);
        self.queue.schedule(service_ns, Ev::ServiceComplete { stage })?;
        Ok(())
    }

    fn on_service_complete(&mut self, stage: Stage) -> Result<(), PipelineError> {
        let msg = self.stations[stage.index()]
            .in_service
            .take()
            .expect("completion fired with a message in service");
        self.emit(stage, EventKind::ServiceEnd, msg.request_id);
        self.send_downstream(stage, msg)?;
        if !self.stations[stage.index()].waiting.is_empty() {
            self.start_service(stage)?;
        }
        Ok(())
    }

    fn on_metric_tick(&mut self) -> Result<(), PipelineError> {
        let now = self.queue.now();
        if now > self.duration_ns {
            return Ok(());
        }
        self.ticks.push(now);
        let (a, b) = self.epsilon_pair;
        self.epsilon_series.push(EpsilonSample {
            true_ns: now,
            epsilon_ns: self.clocks.pairwise_error(a, b, now),
        });
        self.queue.schedule(self.tick_ns, Ev::MetricTick)?;
        Ok(())
    }
}

/// The stage pair whose clock error the epsilon series tracks: the skew
/// target against its downstream neighbor (upstream for the terminal
/// observer, which has no outgoing edge).
fn epsilon_pair(cfg: &ExperimentConfig) -> (Stage, Stage) {
    let target = cfg.skew.target_stage;
    match target.next() {
        Some(downstream) => (target, downstream),
        None => (Stage::Postprocess, target),
    }
}
