//! Experiment configuration: file format, defaults, validation, and
//! content-addressed run identity.
//!
//! A config is plain JSON. Every field has a default, so `{}` is a valid
//! config describing the stock experiment; partial configs override only
//! what they name. Validation is strict and runs before any simulation:
//! the topology must be exactly the five canonical stages wired in order,
//! with one link per adjacent pair and one clock per stage.
//!
//! The resolved config's SHA-256 digest names the run: identical configs
//! produce identical run ids, and any semantic change produces a new one.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::{ClockError, ClockModel, ClockSet, ClockStep, SkewProfile, NANOS_PER_SEC};
use crate::mix::derive_stream_seed;
use crate::stage::Stage;
use crate::transport::{LatencyDist, LinkModel, TransportError};

/// RNG stream domains. Workload is 0, links are 1..=4 by edge index, and
/// clock jitter starts here; keeping them disjoint keeps streams
/// decorrelated.
const CLOCK_SEED_DOMAIN_BASE: u64 = 16;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("config parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("expected exactly 5 stage entries, found {found}")]
    StageCount { found: usize },
    #[error("stage entry {index} must be `{expected}` (stages are fixed in pipeline order), found `{found}`")]
    StageOrder {
        index: usize,
        expected: Stage,
        found: Stage,
    },
    #[error("stage {stage}: service parameters must be non-negative")]
    NegativeService { stage: Stage },
    #[error("stage {stage} does not model service time; its service parameters must be zero")]
    ServicelessStage { stage: Stage },
    #[error("stage {stage}: service time must be positive for every possible token count")]
    ZeroService { stage: Stage },
    #[error("arrival rate must be positive and finite, got {rate}")]
    InvalidRate { rate: f64 },
    #[error("token counts must be at least 1")]
    ZeroTokens,
    #[error("token range is inverted: lo {lo} > hi {hi}")]
    TokenRange { lo: u32, hi: u32 },
    #[error("link {from}->{to} does not exist in the pipeline; links connect adjacent stages only")]
    UnknownLink { from: Stage, to: Stage },
    #[error("link {from}->{to} is configured more than once")]
    DuplicateLink { from: Stage, to: Stage },
    #[error("link {from}->{to} is missing from the config")]
    MissingLink { from: Stage, to: Stage },
    #[error("clock for stage {stage} is configured more than once")]
    DuplicateClock { stage: Stage },
    #[error("clock for stage {stage} is missing from the config")]
    MissingClock { stage: Stage },
    #[error("skew start time must be non-negative, got {start_ns} ns")]
    NegativeSkewStart { start_ns: i64 },
    #[error("metric tick must be at least 1 s")]
    ZeroTick,
    #[error("health window must be at least 1 s")]
    ZeroWindow,
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// How request arrivals are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrivalProcess {
    /// Poisson arrivals: exponentially distributed gaps.
    #[default]
    Exponential,
    /// Fixed gaps of exactly `1 / rate`.
    Deterministic,
}

/// Token count drawn per request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TokenDist {
    Fixed { count: u32 },
    Uniform { lo: u32, hi: u32 },
}

impl Default for TokenDist {
    fn default() -> Self {
        TokenDist::Fixed { count: 56 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Mean request arrival rate, per second.
    pub arrival_rate_per_s: f64,
    pub arrival_process: ArrivalProcess,
    pub tokens_per_request: TokenDist,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            arrival_rate_per_s: 2.5,
            arrival_process: ArrivalProcess::Exponential,
            tokens_per_request: TokenDist::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    /// Fixed service cost per message, ns. Zero for producer and observer.
    #[serde(default)]
    pub base_service_ns: i64,
    /// Additional service cost per token, ns.
    #[serde(default)]
    pub per_token_ns: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub from: Stage,
    pub to: Stage,
    /// Hard latency floor, ns. Samples below it are clamped up.
    pub floor_ns: i64,
    pub dist: LatencyDist,
}

impl LinkConfig {
    pub fn to_model(&self) -> LinkModel {
        LinkModel {
            from: self.from,
            to: self.to,
            floor_ns: self.floor_ns,
            dist: self.dist.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    pub stage: Stage,
    #[serde(default)]
    pub offset_ns: i64,
    #[serde(default)]
    pub drift_ppb: i64,
    #[serde(default)]
    pub jitter_ns: i64,
    #[serde(default)]
    pub steps: Vec<ClockStepConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockStepConfig {
    pub at_ns: i64,
    pub delta_ns: i64,
}

impl ClockConfig {
    fn identity(stage: Stage) -> Self {
        ClockConfig {
            stage,
            offset_ns: 0,
            drift_ppb: 0,
            jitter_ns: 0,
            steps: Vec::new(),
        }
    }

    fn to_model(&self, run_seed: u64) -> ClockModel {
        ClockModel {
            node: self.stage,
            base_offset_ns: self.offset_ns,
            drift_ppb: self.drift_ppb,
            jitter_stddev_ns: self.jitter_ns,
            steps: self
                .steps
                .iter()
                .map(|s| ClockStep {
                    at_ns: s.at_ns,
                    delta_ns: s.delta_ns,
                })
                .collect(),
            rng_seed: derive_stream_seed(
                run_seed,
                CLOCK_SEED_DOMAIN_BASE + self.stage.index() as u64,
            ),
        }
    }
}

/// The complete description of one run. See the module docs for the file
/// format contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub run_duration_s: u64,
    pub metric_tick_s: u64,
    pub health_window_s: u64,
    pub workload: WorkloadConfig,
    pub stages: Vec<StageConfig>,
    pub links: Vec<LinkConfig>,
    pub clocks: Vec<ClockConfig>,
    pub skew: SkewProfile,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let stage = |stage, base_service_ns, per_token_ns| StageConfig {
            stage,
            base_service_ns,
            per_token_ns,
        };
        let narrow_link = |from, to| LinkConfig {
            from,
            to,
            floor_ns: 1_000_000,
            dist: LatencyDist::Lognormal {
                median_ns: 1_200_000,
                sigma: 0.2,
            },
        };
        ExperimentConfig {
            seed: 42,
            run_duration_s: 60,
            metric_tick_s: 1,
            health_window_s: 30,
            workload: WorkloadConfig::default(),
            stages: vec![
                stage(Stage::Producer, 0, 0),
                stage(Stage::Preprocess, 5_000_000, 0),
                stage(Stage::Inference, 200_000_000, 1_000_000),
                stage(Stage::Postprocess, 5_000_000, 0),
                stage(Stage::Observer, 0, 0),
            ],
            links: vec![
                narrow_link(Stage::Producer, Stage::Preprocess),
                narrow_link(Stage::Preprocess, Stage::Inference),
                LinkConfig {
                    from: Stage::Inference,
                    to: Stage::Postprocess,
                    floor_ns: 3_500_000,
                    dist: LatencyDist::Lognormal {
                        median_ns: 4_500_000,
                        sigma: 0.25,
                    },
                },
                narrow_link(Stage::Postprocess, Stage::Observer),
            ],
            clocks: Stage::ALL.iter().map(|&s| ClockConfig::identity(s)).collect(),
            skew: SkewProfile::none(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<inline>".into(),
            message: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stages.len() != Stage::COUNT {
            return Err(ConfigError::StageCount {
                found: self.stages.len(),
            });
        }
        for (i, sc) in self.stages.iter().enumerate() {
            if sc.stage != Stage::ALL[i] {
                return Err(ConfigError::StageOrder {
                    index: i,
                    expected: Stage::ALL[i],
                    found: sc.stage,
                });
            }
            if sc.base_service_ns < 0 || sc.per_token_ns < 0 {
                return Err(ConfigError::NegativeService { stage: sc.stage });
            }
        }
        for s in [Stage::Producer, Stage::Observer] {
            let sc = &self.stages[s.index()];
            if sc.base_service_ns != 0 || sc.per_token_ns != 0 {
                return Err(ConfigError::ServicelessStage { stage: s });
            }
        }

        let rate = self.workload.arrival_rate_per_s;
        if !rate.is_finite() || rate <= 0.0 {
            return Err(ConfigError::InvalidRate { rate });
        }
        match self.workload.tokens_per_request {
            TokenDist::Fixed { count } => {
                if count == 0 {
                    return Err(ConfigError::ZeroTokens);
                }
            }
            TokenDist::Uniform { lo, hi } => {
                if lo == 0 {
                    return Err(ConfigError::ZeroTokens);
                }
                if lo > hi {
                    return Err(ConfigError::TokenRange { lo, hi });
                }
            }
        }
        for s in [Stage::Preprocess, Stage::Inference, Stage::Postprocess] {
            if self.service_ns(s, self.min_tokens()) <= 0 {
                return Err(ConfigError::ZeroService { stage: s });
            }
        }

        let mut seen_links = Vec::new();
        for lc in &self.links {
            if lc.from.next() != Some(lc.to) {
                return Err(ConfigError::UnknownLink {
                    from: lc.from,
                    to: lc.to,
                });
            }
            if seen_links.contains(&(lc.from, lc.to)) {
                return Err(ConfigError::DuplicateLink {
                    from: lc.from,
                    to: lc.to,
                });
            }
            seen_links.push((lc.from, lc.to));
            lc.to_model().validate()?;
        }
        for (from, to) in Stage::edges() {
            if !seen_links.contains(&(from, to)) {
                return Err(ConfigError::MissingLink { from, to });
            }
        }

        let mut seen_clocks = Vec::new();
        for cc in &self.clocks {
            if seen_clocks.contains(&cc.stage) {
                return Err(ConfigError::DuplicateClock { stage: cc.stage });
            }
            seen_clocks.push(cc.stage);
            cc.to_model(self.seed).validate()?;
        }
        for s in Stage::ALL {
            if !seen_clocks.contains(&s) {
                return Err(ConfigError::MissingClock { stage: s });
            }
        }

        self.skew.validate()?;
        if self.skew.start_time_ns < 0 {
            return Err(ConfigError::NegativeSkewStart {
                start_ns: self.skew.start_time_ns,
            });
        }

        if self.metric_tick_s == 0 {
            return Err(ConfigError::ZeroTick);
        }
        if self.health_window_s == 0 {
            return Err(ConfigError::ZeroWindow);
        }
        Ok(())
    }

    pub fn duration_ns(&self) -> i64 {
        self.run_duration_s as i64 * NANOS_PER_SEC
    }

    pub fn tick_ns(&self) -> i64 {
        self.metric_tick_s as i64 * NANOS_PER_SEC
    }

    pub fn window_ns(&self) -> i64 {
        self.health_window_s as i64 * NANOS_PER_SEC
    }

    /// Service time for one message at one stage.
    pub fn service_ns(&self, stage: Stage, tokens: u32) -> i64 {
        let sc = &self.stages[stage.index()];
        sc.base_service_ns + sc.per_token_ns * tokens as i64
    }

    pub fn min_tokens(&self) -> u32 {
        match self.workload.tokens_per_request {
            TokenDist::Fixed { count } => count,
            TokenDist::Uniform { lo, .. } => lo,
        }
    }

    pub fn mean_tokens(&self) -> f64 {
        match self.workload.tokens_per_request {
            TokenDist::Fixed { count } => count as f64,
            TokenDist::Uniform { lo, hi } => (lo as f64 + hi as f64) / 2.0,
        }
    }

    /// Expected service time at a stage under the mean token count, ns.
    pub fn mean_service_ns(&self, stage: Stage) -> f64 {
        let sc = &self.stages[stage.index()];
        sc.base_service_ns as f64 + sc.per_token_ns as f64 * self.mean_tokens()
    }

    /// Service rate of the inference stage (the pipeline bottleneck in the
    /// stock configuration), requests per second.
    pub fn inference_service_rate_per_s(&self) -> f64 {
        NANOS_PER_SEC as f64 / self.mean_service_ns(Stage::Inference)
    }

    /// The link config for an adjacent pair. Call only after validation.
    pub fn link(&self, from: Stage, to: Stage) -> &LinkConfig {
        self.links
            .iter()
            .find(|l| l.from == from && l.to == to)
            .expect("validated config has every adjacent link")
    }

    /// Builds the five clock models with per-stage jitter streams derived
    /// from the run seed. The skew profile is not applied here; the
    /// simulation folds it in so the configured clocks stay inspectable.
    pub fn clock_set(&self) -> Result<ClockSet, ConfigError> {
        let mut slots: [Option<ClockModel>; 5] = Default::default();
        for cc in &self.clocks {
            slots[cc.stage.index()] = Some(cc.to_model(self.seed));
        }
        let models = slots.map(|m| m.expect("validated config has one clock per stage"));
        Ok(ClockSet::from_models(models)?)
    }

    /// SHA-256 over the canonical JSON serialization of the resolved
    /// config. Field order is fixed by the struct, so equal configs hash
    /// equal and any change reseats the digest.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Short content-addressed run name: `run-` plus the first 12 digest
    /// hex digits.
    pub fn run_id(&self) -> String {
        format!("run-{}", &self.digest()[..12])
    }
}
