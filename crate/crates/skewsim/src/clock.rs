//! Per-node wall-clock models.
//!
//! Each pipeline stage owns a clock that maps true simulation time to the
//! wall time that stage would stamp on a trace event:
//!
//! ```text
//! wall(t) = t + base_offset_ns
//!             + drift_ppb * t / 1e9
//!             + sum of step deltas with at_ns <= t
//!             + jitter (only when reading through `read`)
//! ```
//!
//! Clocks are read-only observers: nothing in the simulation dynamics ever
//! consults them, so two runs that differ only in clock parameters execute
//! the exact same schedule and differ only in their wall stamps.
//!
//! Jitter is counter-based rather than stateful: reading k of node n under
//! seed s always produces the same perturbation, regardless of how many
//! readings other nodes have taken. This keeps per-stage stamp streams
//! stable when unrelated parts of the configuration change.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mix::splitmix64;
use crate::stage::Stage;

pub const NANOS_PER_SEC: i64 = 1_000_000_000;

/// Jitter samples are clamped to this many standard deviations so a single
/// unlucky reading cannot masquerade as a step change.
pub const JITTER_CLAMP_SIGMA: f64 = 4.0;

/// A discrete adjustment applied to a clock at a point in true time. The
/// step takes effect at exactly `at_ns` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockStep {
    pub at_ns: i64,
    pub delta_ns: i64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClockError {
    #[error("clock steps must be strictly increasing in time: step at {at_ns} ns does not follow previous step at {prev_ns} ns")]
    UnorderedSteps { at_ns: i64, prev_ns: i64 },
    #[error("jitter standard deviation must be non-negative, got {0} ns")]
    NegativeJitter(i64),
    #[error("skew profile with mode `none` must have zero magnitude, got {0} ns")]
    NonZeroNoneMagnitude(i64),
}

/// Wall-clock model for a single pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockModel {
    /// The stage whose events this clock stamps.
    pub node: Stage,
    /// Constant offset from true time, in nanoseconds.
    pub base_offset_ns: i64,
    /// Linear drift rate in parts per billion: 1_000 ppb = 1 us gained per
    /// second of true time.
    pub drift_ppb: i64,
    /// Standard deviation of per-reading Gaussian jitter, in nanoseconds.
    pub jitter_stddev_ns: i64,
    /// Step adjustments, strictly increasing in `at_ns`.
    pub steps: Vec<ClockStep>,
    /// Seed for the jitter stream. Only meaningful when jitter is nonzero.
    pub rng_seed: u64,
}

impl ClockModel {
    /// A perfectly synchronized clock: wall time equals true time.
    pub fn synchronized(node: Stage) -> Self {
        ClockModel {
            node,
            base_offset_ns: 0,
            drift_ppb: 0,
            jitter_stddev_ns: 0,
            steps: Vec::new(),
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        if self.jitter_stddev_ns < 0 {
            return Err(ClockError::NegativeJitter(self.jitter_stddev_ns));
        }
        for pair in self.steps.windows(2) {
            if pair[1].at_ns <= pair[0].at_ns {
                return Err(ClockError::UnorderedSteps {
                    at_ns: pair[1].at_ns,
                    prev_ns: pair[0].at_ns,
                });
            }
        }
        Ok(())
    }

    /// Adds a step, keeping the list sorted. A step landing at the exact
    /// time of an existing one merges into it (deltas superpose).
    pub fn add_step(&mut self, at_ns: i64, delta_ns: i64) {
        match self.steps.binary_search_by_key(&at_ns, |s| s.at_ns) {
            Ok(i) => self.steps[i].delta_ns += delta_ns,
            Err(i) => self.steps.insert(i, ClockStep { at_ns, delta_ns }),
        }
    }

    /// The wall reading at true time `t`, without jitter. This is the
    /// deterministic component every analysis quantity is defined on.
    pub fn read_noiseless(&self, true_time_ns: i64) -> i64 {
        debug_assert!(true_time_ns >= 0, "clocks are read at non-negative true time");
        let drift = (self.drift_ppb as i128 * true_time_ns as i128) / NANOS_PER_SEC as i128;
        let steps: i64 = self
            .steps
            .iter()
            .take_while(|s| s.at_ns <= true_time_ns)
            .map(|s| s.delta_ns)
            .sum();
        true_time_ns + self.base_offset_ns + drift as i64 + steps
    }

    /// The wall reading at true time `t` for the node's `reading_index`-th
    /// read: noiseless value plus counter-based jitter. The same
    /// (seed, node, index) triple always yields the same perturbation.
    pub fn read(&self, true_time_ns: i64, reading_index: u64) -> i64 {
        self.read_noiseless(true_time_ns) + self.jitter_ns(reading_index)
    }

    fn jitter_ns(&self, reading_index: u64) -> i64 {
        if self.jitter_stddev_ns == 0 {
            return 0;
        }
        let node_key = splitmix64(
            self.rng_seed ^ splitmix64((self.node.index() as u64).wrapping_mul(0x9E3779B97F4A7C15)),
        );
        let h1 = splitmix64(node_key ^ reading_index.wrapping_mul(2));
        let h2 = splitmix64(node_key ^ reading_index.wrapping_mul(2).wrapping_add(1));
        // Box-Muller on two 53-bit uniforms; u1 shifted into (0, 1] so the
        // logarithm is always finite.
        let u1 = ((h1 >> 11) + 1) as f64 / (1u64 << 53) as f64;
        let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        let z = z.clamp(-JITTER_CLAMP_SIGMA, JITTER_CLAMP_SIGMA);
        (z * self.jitter_stddev_ns as f64).round() as i64
    }
}

/// How a skew profile perturbs its target clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkewMode {
    /// Inject a single step of `magnitude_ns` at `start_time_ns`.
    Step,
    /// Leave the target clock untouched.
    None,
}

/// A controlled perturbation applied on top of a configured clock set,
/// used to sweep skew magnitudes without editing the base config.
/// Defaults to no perturbation targeting the inference stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewProfile {
    pub target_stage: Stage,
    pub mode: SkewMode,
    pub magnitude_ns: i64,
    pub start_time_ns: i64,
}

impl Default for SkewProfile {
    fn default() -> Self {
        Self::none()
    }
}

impl SkewProfile {
    pub fn none() -> Self {
        SkewProfile {
            target_stage: Stage::Inference,
            mode: SkewMode::None,
            magnitude_ns: 0,
            start_time_ns: 0,
        }
    }

    pub fn step(target_stage: Stage, magnitude_ns: i64, start_time_ns: i64) -> Self {
        SkewProfile {
            target_stage,
            mode: SkewMode::Step,
            magnitude_ns,
            start_time_ns,
        }
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        if self.mode == SkewMode::None && self.magnitude_ns != 0 {
            return Err(ClockError::NonZeroNoneMagnitude(self.magnitude_ns));
        }
        Ok(())
    }
}

/// The full set of five stage clocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClockSet {
    models: [ClockModel; 5],
}

impl ClockSet {
    /// All five clocks perfectly synchronized.
    pub fn synchronized() -> Self {
        ClockSet {
            models: Stage::ALL.map(ClockModel::synchronized),
        }
    }

    /// Builds a set from five models, one per stage in any order.
    pub fn from_models(models: [ClockModel; 5]) -> Result<Self, ClockError> {
        let mut slots: [Option<ClockModel>; 5] = [None, None, None, None, None];
        for m in models {
            m.validate()?;
            let idx = m.node.index();
            slots[idx] = Some(m);
        }
        // Construction is total: five models indexed by stage always fill
        // all five slots unless a stage appeared twice, which config
        // validation rejects before this point.
        let models = slots.map(|s| s.expect("one clock per stage"));
        Ok(ClockSet { models })
    }

    pub fn model(&self, stage: Stage) -> &ClockModel {
        &self.models[stage.index()]
    }

    /// Returns a copy of this set with the skew profile folded in as a
    /// step on the target clock. A profile with mode `none` (or zero
    /// magnitude) returns the set unchanged.
    pub fn apply_skew_profile(&self, profile: &SkewProfile) -> Result<ClockSet, ClockError> {
        profile.validate()?;
        let mut out = self.clone();
        if profile.mode == SkewMode::Step && profile.magnitude_ns != 0 {
            out.models[profile.target_stage.index()]
                .add_step(profile.start_time_ns, profile.magnitude_ns);
        }
        Ok(out)
    }

    /// Instantaneous clock error between two stages at true time `t`:
    /// how far ahead `a`'s noiseless wall reading is of `b`'s.
    pub fn pairwise_error(&self, a: Stage, b: Stage, true_time_ns: i64) -> i64 {
        self.model(a).read_noiseless(true_time_ns) - self.model(b).read_noiseless(true_time_ns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MS: i64 = 1_000_000;

    #[test]
    fn synchronized_clock_is_identity() {
        let c = ClockModel::synchronized(Stage::Producer);
        for t in [0, 1, 999, NANOS_PER_SEC, 3600 * NANOS_PER_SEC] {
            assert_eq!(c.read_noiseless(t), t);
            assert_eq!(c.read(t, 0), t);
        }
    }

    #[test]
    fn offset_plus_negative_drift_crosses_zero() {
        // +5 ms offset decaying at -0.1 ms/s: after 60 s the clock sits
        // 1 ms behind true time.
        let c = ClockModel {
            node: Stage::Inference,
            base_offset_ns: 5 * MS,
            drift_ppb: -100_000,
            jitter_stddev_ns: 0,
            steps: Vec::new(),
            rng_seed: 0,
        };
        let t = 60 * NANOS_PER_SEC;
        assert_eq!(c.read_noiseless(t) - t, -1 * MS);
        // And exactly at 50 s the offset has fully decayed.
        let t50 = 50 * NANOS_PER_SEC;
        assert_eq!(c.read_noiseless(t50) - t50, 0);
    }

    #[test]
    fn step_applies_inclusively_at_its_instant() {
        let mut c = ClockModel::synchronized(Stage::Preprocess);
        c.add_step(10 * NANOS_PER_SEC, 5 * MS);
        assert_eq!(c.read_noiseless(10 * NANOS_PER_SEC - 1) - (10 * NANOS_PER_SEC - 1), 0);
        assert_eq!(c.read_noiseless(10 * NANOS_PER_SEC) - 10 * NANOS_PER_SEC, 5 * MS);
        assert_eq!(c.read_noiseless(10 * NANOS_PER_SEC + 1) - (10 * NANOS_PER_SEC + 1), 5 * MS);
    }

    #[test]
    fn steps_at_same_instant_merge() {
        let mut c = ClockModel::synchronized(Stage::Inference);
        c.add_step(5 * NANOS_PER_SEC, 3 * MS);
        c.add_step(5 * NANOS_PER_SEC, -1 * MS);
        assert_eq!(c.steps.len(), 1);
        assert_eq!(c.read_noiseless(5 * NANOS_PER_SEC) - 5 * NANOS_PER_SEC, 2 * MS);
    }

    #[test]
    fn pairwise_error_of_identical_models_is_zero() {
        let mut a = ClockModel::synchronized(Stage::Inference);
        a.base_offset_ns = 5 * MS;
        a.drift_ppb = -100_000;
        let mut b = a.clone();
        b.node = Stage::Postprocess;
        let set = ClockSet::from_models([
            ClockModel::synchronized(Stage::Producer),
            ClockModel::synchronized(Stage::Preprocess),
            a,
            b,
            ClockModel::synchronized(Stage::Observer),
        ])
        .unwrap();
        assert_eq!(
            set.pairwise_error(Stage::Inference, Stage::Postprocess, 50 * NANOS_PER_SEC),
            0
        );
    }

    #[test]
    fn pairwise_error_tracks_offset_and_decay() {
        let mut inf = ClockModel::synchronized(Stage::Inference);
        inf.base_offset_ns = 5 * MS;
        inf.drift_ppb = -100_000;
        let set = ClockSet::from_models([
            ClockModel::synchronized(Stage::Producer),
            ClockModel::synchronized(Stage::Preprocess),
            inf,
            ClockModel::synchronized(Stage::Postprocess),
            ClockModel::synchronized(Stage::Observer),
        ])
        .unwrap();
        assert_eq!(set.pairwise_error(Stage::Inference, Stage::Postprocess, 0), 5 * MS);
        assert_eq!(
            set.pairwise_error(Stage::Inference, Stage::Postprocess, 15 * NANOS_PER_SEC),
            35 * MS / 10
        );
        assert_eq!(
            set.pairwise_error(Stage::Inference, Stage::Postprocess, 50 * NANOS_PER_SEC),
            0
        );
        assert_eq!(
            set.pairwise_error(Stage::Inference, Stage::Postprocess, 60 * NANOS_PER_SEC),
            -1 * MS
        );
    }

    #[test]
    fn skew_profile_none_with_magnitude_is_rejected() {
        let p = SkewProfile {
            target_stage: Stage::Inference,
            mode: SkewMode::None,
            magnitude_ns: 5 * MS,
            start_time_ns: 0,
        };
        assert_eq!(p.validate(), Err(ClockError::NonZeroNoneMagnitude(5 * MS)));
    }

    #[test]
    fn skew_profile_step_lands_on_target_only() {
        let set = ClockSet::synchronized();
        let skewed = set
            .apply_skew_profile(&SkewProfile::step(Stage::Inference, 5 * MS, 0))
            .unwrap();
        for s in Stage::ALL {
            let expect = if s == Stage::Inference { 5 * MS } else { 0 };
            assert_eq!(skewed.model(s).read_noiseless(NANOS_PER_SEC) - NANOS_PER_SEC, expect);
        }
        // The original set is untouched.
        assert_eq!(set.model(Stage::Inference).read_noiseless(0), 0);
    }

    #[test]
    fn unordered_steps_are_rejected() {
        let mut c = ClockModel::synchronized(Stage::Producer);
        c.steps = vec![
            ClockStep { at_ns: 10, delta_ns: 1 },
            ClockStep { at_ns: 10, delta_ns: 2 },
        ];
        assert!(matches!(c.validate(), Err(ClockError::UnorderedSteps { .. })));
    }

    #[test]
    fn jitter_is_counter_based_and_clamped() {
        let mut c = ClockModel::synchronized(Stage::Observer);
        c.jitter_stddev_ns = 1000;
        c.rng_seed = 42;
        let r0 = c.read(1_000_000, 0);
        let r0_again = c.read(1_000_000, 0);
        assert_eq!(r0, r0_again, "same reading index gives same stamp");
        let mut distinct = std::collections::BTreeSet::new();
        for idx in 0..4096u64 {
            let j = c.read(1_000_000, idx) - 1_000_000;
            assert!(j.abs() <= (JITTER_CLAMP_SIGMA * 1000.0) as i64 + 1);
            distinct.insert(j);
        }
        assert!(distinct.len() > 100, "jitter stream has spread");
    }

    #[test]
    fn zero_stddev_means_exact_noiseless_reads() {
        let mut c = ClockModel::synchronized(Stage::Inference);
        c.base_offset_ns = 123;
        c.rng_seed = 99;
        for idx in 0..32 {
            assert_eq!(c.read(77, idx), c.read_noiseless(77));
        }
    }

    proptest! {
        #[test]
        fn noiseless_read_is_deterministic(
            offset in -10_000_000i64..10_000_000,
            drift in -100_000_000i64..100_000_000,
            t in 0i64..3_600_000_000_000,
        ) {
            let mut c = ClockModel::synchronized(Stage::Inference);
            c.base_offset_ns = offset;
            c.drift_ppb = drift;
            prop_assert_eq!(c.read_noiseless(t), c.read_noiseless(t));
        }

        #[test]
        fn step_superposition_matches_merged_step(
            at in 0i64..1_000_000_000_000,
            d1 in -10_000_000i64..10_000_000,
            d2 in -10_000_000i64..10_000_000,
            t in 0i64..2_000_000_000_000,
        ) {
            let mut split = ClockModel::synchronized(Stage::Producer);
            split.add_step(at, d1);
            split.add_step(at, d2);
            let mut merged = ClockModel::synchronized(Stage::Producer);
            merged.add_step(at, d1 + d2);
            prop_assert_eq!(split.read_noiseless(t), merged.read_noiseless(t));
        }

        #[test]
        fn pairwise_error_is_offset_difference_without_drift(
            oa in -50_000_000i64..50_000_000,
            ob in -50_000_000i64..50_000_000,
            t in 0i64..3_600_000_000_000,
        ) {
            let mut a = ClockModel::synchronized(Stage::Inference);
            a.base_offset_ns = oa;
            let mut b = ClockModel::synchronized(Stage::Postprocess);
            b.base_offset_ns = ob;
            let set = ClockSet::from_models([
                ClockModel::synchronized(Stage::Producer),
                ClockModel::synchronized(Stage::Preprocess),
                a,
                b,
                ClockModel::synchronized(Stage::Observer),
            ]).unwrap();
            prop_assert_eq!(set.pairwise_error(Stage::Inference, Stage::Postprocess, t), oa - ob);
        }

        #[test]
        fn noiseless_read_is_monotone_at_realistic_drift(
            drift in -100_000_000i64..100_000_000,
            t in 0i64..3_600_000_000_000,
            gap in 2i64..1_000_000,
        ) {
            // |drift| < 1e8 ppb means the clock runs at a rate within 10%
            // of true time, so any 2 ns of true time advances it.
            let mut c = ClockModel::synchronized(Stage::Observer);
            c.drift_ppb = drift;
            prop_assert!(c.read_noiseless(t + gap) >= c.read_noiseless(t));
        }

        #[test]
        fn jitter_depends_only_on_seed_node_index(
            seed in any::<u64>(),
            idx in any::<u64>(),
            t1 in 0i64..1_000_000_000_000,
            t2 in 0i64..1_000_000_000_000,
        ) {
            let mut c = ClockModel::synchronized(Stage::Preprocess);
            c.jitter_stddev_ns = 500;
            c.rng_seed = seed;
            let j1 = c.read(t1, idx) - c.read_noiseless(t1);
            let j2 = c.read(t2, idx) - c.read_noiseless(t2);
            prop_assert_eq!(j1, j2, "jitter is a function of the reading index, not of time");
        }
    }
}
