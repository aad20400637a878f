//! The five pipeline stages, in flow order, plus helpers for walking the
//! chain. Stages are identified by stable lowercase names in configs and
//! traces.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A stage in the fixed five-stage pipeline. Messages flow strictly
/// left-to-right: producer -> preprocess -> inference -> postprocess ->
/// observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Producer,
    Preprocess,
    Inference,
    Postprocess,
    Observer,
}

impl Stage {
    /// All stages in pipeline order.
    pub const ALL: [Stage; 5] = [
        Stage::Producer,
        Stage::Preprocess,
        Stage::Inference,
        Stage::Postprocess,
        Stage::Observer,
    ];

    pub const COUNT: usize = 5;

    /// Position in the pipeline, 0-based.
    pub fn index(self) -> usize {
        match self {
            Stage::Producer => 0,
            Stage::Preprocess => 1,
            Stage::Inference => 2,
            Stage::Postprocess => 3,
            Stage::Observer => 4,
        }
    }

    /// Stable name used in configs, traces, and reports.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Producer => "producer",
            Stage::Preprocess => "preprocess",
            Stage::Inference => "inference",
            Stage::Postprocess => "postprocess",
            Stage::Observer => "observer",
        }
    }

    pub fn from_name(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// The next stage downstream, or `None` for the terminal observer.
    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Producer => Some(Stage::Preprocess),
            Stage::Preprocess => Some(Stage::Inference),
            Stage::Inference => Some(Stage::Postprocess),
            Stage::Postprocess => Some(Stage::Observer),
            Stage::Observer => None,
        }
    }

    /// True for the stages that model a FIFO service queue. The producer
    /// only emits and the observer only consumes.
    pub fn serves(self) -> bool {
        matches!(
            self,
            Stage::Preprocess | Stage::Inference | Stage::Postprocess
        )
    }

    /// The four directed inter-stage hops, in pipeline order.
    pub fn edges() -> [(Stage, Stage); 4] {
        [
            (Stage::Producer, Stage::Preprocess),
            (Stage::Preprocess, Stage::Inference),
            (Stage::Inference, Stage::Postprocess),
            (Stage::Postprocess, Stage::Observer),
        ]
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_and_indices_agree() {
        for (i, s) in Stage::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
    }

    #[test]
    fn next_walks_the_chain() {
        let mut cur = Some(Stage::Producer);
        let mut seen = Vec::new();
        while let Some(s) = cur {
            seen.push(s);
            cur = s.next();
        }
        assert_eq!(seen, Stage::ALL);
    }

    #[test]
    fn names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::from_name(s.name()), Some(s));
        }
        assert_eq!(Stage::from_name("frontend"), None);
    }

    #[test]
    fn serde_uses_lowercase_names() {
        let json = serde_json::to_string(&Stage::Inference).unwrap();
        assert_eq!(json, "\"inference\"");
        let back: Stage = serde_json::from_str("\"postprocess\"").unwrap();
        assert_eq!(back, Stage::Postprocess);
    }

    #[test]
    fn edges_cover_adjacent_pairs() {
        let edges = Stage::edges();
        assert_eq!(edges.len(), 4);
        for (from, to) in edges {
            assert_eq!(from.next(), Some(to));
        }
    }
}
