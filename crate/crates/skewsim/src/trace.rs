//! Trace event model and line-delimited JSON serialization.
//!
//! A trace file is one JSON object per line: a header first, then events in
//! emission order. Nanosecond fields are serialized as decimal strings so
//! values survive consumers that parse JSON numbers as 64-bit floats
//! (exact only up to 2^53); the reader accepts either strings or plain
//! integers.
//!
//! `wall_ts_ns` is what the emitting stage's clock claimed; `true_ts_ns` is
//! ground truth and is only present in simulator-produced traces. Analysis
//! code must never order events by wall stamps; file order is emission
//! order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write as IoWrite};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace io on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace file is empty; expected a header line")]
    MissingHeader,
    #[error("unsupported trace format version {found} (supported: {TRACE_FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("trace line {line}: duplicate event_id {event_id}")]
    DuplicateEventId { line: usize, event_id: u64 },
    #[error("trace line {line}: stage {stage} seq {seq} does not increase over previous {prev}")]
    NonMonotonicSeq {
        line: usize,
        stage: String,
        seq: u64,
        prev: u64,
    },
    #[error("trace line {line}: simulated trace event is missing true_ts_ns")]
    MissingTrueTime { line: usize },
    #[error("trace line {line}: true_ts_ns {found} regresses below previous {prev}")]
    TrueTimeRegression { line: usize, found: i64, prev: i64 },
}

/// What an event records: a message leaving a stage, arriving at one, or
/// the bounds of its service interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Recv,
    ServiceStart,
    ServiceEnd,
}

/// Where a trace's wall stamps came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockNote {
    /// Stamps were produced by simulated clocks; `true_ts_ns` is present.
    Simulated,
    /// Stamps were imported from an external system; ground truth unknown.
    External,
}

/// First line of every trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFileHeader {
    pub format_version: u32,
    pub run_id: String,
    pub config_digest: String,
    pub clock_note: ClockNote,
}

/// One timestamped observation emitted by a stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub event_id: u64,
    pub request_id: u64,
    pub stage_id: String,
    pub kind: EventKind,
    #[serde(with = "ns_string")]
    pub wall_ts_ns: i64,
    #[serde(with = "ns_string_opt")]
    pub true_ts_ns: Option<i64>,
    pub seq: u64,
}

/// Serde adapter: i64 nanoseconds as a decimal string on write, string or
/// integer accepted on read.
mod ns_string {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &i64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    struct NsVisitor;

    impl Visitor<'_> for NsVisitor {
        type Value = i64;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a nanosecond value as a decimal string or integer")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<i64, E> {
            v.parse().map_err(|_| E::custom(format!("invalid nanosecond value {v:?}")))
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<i64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<i64, E> {
            i64::try_from(v).map_err(|_| E::custom(format!("nanosecond value {v} overflows i64")))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<i64, D::Error> {
        d.deserialize_any(NsVisitor)
    }
}

/// Same adapter for optional fields; JSON null means absent.
mod ns_string_opt {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &Option<i64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_str(&x.to_string()),
            None => s.serialize_none(),
        }
    }

    struct OptVisitor;

    impl<'de> Visitor<'de> for OptVisitor {
        type Value = Option<i64>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a nanosecond value or null")
        }

        fn visit_none<E: de::Error>(self) -> Result<Self::Value, E> {
            Ok(None)
        }

        fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
            Ok(None)
        }

        fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
            super::ns_string::deserialize(d).map(Some)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<i64>, D::Error> {
        d.deserialize_option(OptVisitor)
    }
}

/// Writes a header and events as JSONL.
pub fn write_trace<W: IoWrite>(
    mut w: W,
    header: &TraceFileHeader,
    events: &[TraceEvent],
) -> io::Result<()> {
    let mut line = serde_json::to_string(header).expect("header serializes");
    line.push('\n');
    w.write_all(line.as_bytes())?;
    for ev in events {
        let mut line = serde_json::to_string(ev).expect("event serializes");
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn write_trace_file(
    path: &Path,
    header: &TraceFileHeader,
    events: &[TraceEvent],
) -> Result<(), TraceError> {
    let file = File::create(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_trace(BufWriter::new(file), header, events).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Renders a trace to bytes; handy for byte-level determinism checks.
pub fn trace_to_bytes(header: &TraceFileHeader, events: &[TraceEvent]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(&mut buf, header, events).expect("writing to a Vec cannot fail");
    buf
}

/// Reads and validates a trace. Checks performed:
///
/// * header present, supported format version
/// * every line parses, errors carry 1-based line numbers
/// * `event_id` unique across the file
/// * `seq` strictly increasing per stage
/// * simulated traces: `true_ts_ns` present and non-decreasing in file order
pub fn read_trace<R: BufRead>(r: R) -> Result<(TraceFileHeader, Vec<TraceEvent>), TraceError> {
    read_trace_impl(r, None)
}

/// Like [`read_trace`], renaming foreign event field names first. The map
/// goes from canonical name to the name used in the file, e.g.
/// `{"wall_ts_ns": "timestamp_ns"}` reads `timestamp_ns` as `wall_ts_ns`.
pub fn read_trace_mapped<R: BufRead>(
    r: R,
    field_map: &BTreeMap<String, String>,
) -> Result<(TraceFileHeader, Vec<TraceEvent>), TraceError> {
    read_trace_impl(r, Some(field_map))
}

pub fn read_trace_file(path: &Path) -> Result<(TraceFileHeader, Vec<TraceEvent>), TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trace(BufReader::new(file))
}

pub fn read_trace_file_mapped(
    path: &Path,
    field_map: &BTreeMap<String, String>,
) -> Result<(TraceFileHeader, Vec<TraceEvent>), TraceError> {
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_trace_mapped(BufReader::new(file), field_map)
}

fn read_trace_impl<R: BufRead>(
    r: R,
    field_map: Option<&BTreeMap<String, String>>,
) -> Result<(TraceFileHeader, Vec<TraceEvent>), TraceError> {
    let mut lines = r.lines().enumerate();

    let header: TraceFileHeader = loop {
        match lines.next() {
            None => return Err(TraceError::MissingHeader),
            Some((i, line)) => {
                let line = line.map_err(|source| TraceError::Io {
                    path: PathBuf::from("<reader>"),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
            }
        }
    };
    if header.format_version != TRACE_FORMAT_VERSION {
        return Err(TraceError::UnsupportedVersion {
            found: header.format_version,
        });
    }

    let mut events = Vec::new();
    let mut seen_ids: HashMap<u64, usize> = HashMap::new();
    let mut last_seq: HashMap<String, u64> = HashMap::new();
    let mut last_true: Option<i64> = None;

    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|source| TraceError::Io {
            path: PathBuf::from("<reader>"),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }

        let ev: TraceEvent = match field_map {
            None => serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: lineno,
                message: e.to_string(),
            })?,
            Some(map) => {
                let mut value: serde_json::Value =
                    serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                        line: lineno,
                        message: e.to_string(),
                    })?;
                if let Some(obj) = value.as_object_mut() {
                    for (canonical, foreign) in map {
                        if let Some(v) = obj.remove(foreign) {
                            obj.insert(canonical.clone(), v);
                        }
                    }
                }
                serde_json::from_value(value).map_err(|e| TraceError::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?
            }
        };

        if seen_ids.insert(ev.event_id, lineno).is_some() {
            return Err(TraceError::DuplicateEventId {
                line: lineno,
                event_id: ev.event_id,
            });
        }
        if let Some(&prev) = last_seq.get(&ev.stage_id) {
            if ev.seq <= prev {
                return Err(TraceError::NonMonotonicSeq {
                    line: lineno,
                    stage: ev.stage_id.clone(),
                    seq: ev.seq,
                    prev,
                });
            }
        }
        last_seq.insert(ev.stage_id.clone(), ev.seq);

        if header.clock_note == ClockNote::Simulated {
            let t = ev
                .true_ts_ns
                .ok_or(TraceError::MissingTrueTime { line: lineno })?;
            if let Some(prev) = last_true {
                if t < prev {
                    return Err(TraceError::TrueTimeRegression {
                        line: lineno,
                        found: t,
                        prev,
                    });
                }
            }
            last_true = Some(t);
        }

        events.push(ev);
    }

    Ok((header, events))
}
