//! Deterministic discrete-event core.
//!
//! A single priority queue orders events by `(fire_at_ns, id)`. Event ids
//! are assigned in scheduling order, so ties at the same instant pop in the
//! order they were scheduled. There is no other source of ordering: given
//! the same schedule calls, the pop sequence is identical on every run.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

pub type EventId = u64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("cannot schedule with negative delay {delay_ns} ns at t={now_ns} ns")]
    NegativeDelay { delay_ns: i64, now_ns: i64 },
    #[error("cannot schedule at {fire_at_ns} ns, which precedes current time {now_ns} ns")]
    ScheduleInPast { fire_at_ns: i64, now_ns: i64 },
    #[error("horizon {horizon_ns} ns precedes current time {now_ns} ns")]
    HorizonInPast { horizon_ns: i64, now_ns: i64 },
}

/// A scheduled event handed back by [`EventQueue::pop_until`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent<P> {
    pub fire_at_ns: i64,
    pub id: EventId,
    pub payload: P,
}

struct HeapEntry<P> {
    fire_at_ns: i64,
    id: EventId,
    payload: P,
}

// Ordering ignores the payload entirely: (fire_at, id) is a total order
// because ids are unique.
impl<P> PartialEq for HeapEntry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at_ns == other.fire_at_ns && self.id == other.id
    }
}
impl<P> Eq for HeapEntry<P> {}
impl<P> PartialOrd for HeapEntry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<P> Ord for HeapEntry<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed so the BinaryHeap (a max-heap) pops the earliest entry.
        (other.fire_at_ns, other.id).cmp(&(self.fire_at_ns, self.id))
    }
}

/// Time-ordered event queue with stable FIFO tie-breaking.
pub struct EventQueue<P> {
    heap: BinaryHeap<HeapEntry<P>>,
    now_ns: i64,
    next_id: EventId,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            now_ns: 0,
            next_id: 0,
        }
    }

    /// Current simulation time: the fire time of the last popped event, or
    /// the largest horizon passed to [`Self::advance_to`].
    pub fn now(&self) -> i64 {
        self.now_ns
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Fire time of the next pending event, if any.
    pub fn peek_time(&self) -> Option<i64> {
        self.heap.peek().map(|e| e.fire_at_ns)
    }

    /// Schedules `payload` to fire `delay_ns` after the current time.
    pub fn schedule(&mut self, delay_ns: i64, payload: P) -> Result<EventId, SimError> {
        if delay_ns < 0 {
            return Err(SimError::NegativeDelay {
                delay_ns,
                now_ns: self.now_ns,
            });
        }
        self.push(self.now_ns + delay_ns, payload)
    }

    /// Schedules `payload` at an absolute time, which must not precede the
    /// current time.
    pub fn schedule_at(&mut self, fire_at_ns: i64, payload: P) -> Result<EventId, SimError> {
        if fire_at_ns < self.now_ns {
            return Err(SimError::ScheduleInPast {
                fire_at_ns,
                now_ns: self.now_ns,
            });
        }
        self.push(fire_at_ns, payload)
    }

    fn push(&mut self, fire_at_ns: i64, payload: P) -> Result<EventId, SimError> {
        let id = self.next_id;
        self.next_id += 1;
        self.heap.push(HeapEntry {
            fire_at_ns,
            id,
            payload,
        });
        Ok(id)
    }

    /// Pops the next event if it fires at or before `horizon_ns`
    /// (inclusive), advancing the clock to its fire time. Returns `None`
    /// when no pending event falls within the horizon; the clock is left
    /// where it is so the caller decides whether to advance it.
    pub fn pop_until(&mut self, horizon_ns: i64) -> Option<SimEvent<P>> {
        let within = self
            .heap
            .peek()
            .is_some_and(|e| e.fire_at_ns <= horizon_ns);
        if !within {
            return None;
        }
        let entry = self.heap.pop().expect("peeked entry exists");
        debug_assert!(entry.fire_at_ns >= self.now_ns, "time never runs backwards");
        self.now_ns = entry.fire_at_ns;
        Some(SimEvent {
            fire_at_ns: entry.fire_at_ns,
            id: entry.id,
            payload: entry.payload,
        })
    }

    /// Moves the clock forward to `horizon_ns` after a drain. Calling with
    /// a horizon in the past is an error; calling with the current time is
    /// a no-op.
    pub fn advance_to(&mut self, horizon_ns: i64) -> Result<(), SimError> {
        if horizon_ns < self.now_ns {
            return Err(SimError::HorizonInPast {
                horizon_ns,
                now_ns: self.now_ns,
            });
        }
        self.now_ns = horizon_ns;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn drain(q: &mut EventQueue<&'static str>, horizon: i64) -> Vec<(i64, &'static str)> {
        let mut out = Vec::new();
        while let Some(ev) = q.pop_until(horizon) {
            out.push((ev.fire_at_ns, ev.payload));
        }
        q.advance_to(horizon).unwrap();
        out
    }

    #[test]
    fn events_fire_in_time_order() {
        let mut q = EventQueue::new();
        q.schedule(5_000_000, "late").unwrap();
        q.schedule(3_000_000, "early").unwrap();
        assert_eq!(
            drain(&mut q, 10_000_000),
            vec![(3_000_000, "early"), (5_000_000, "late")]
        );
        assert_eq!(q.now(), 10_000_000);
    }

    #[test]
    fn ties_break_in_scheduling_order() {
        let mut q = EventQueue::new();
        q.schedule(1000, "first").unwrap();
        q.schedule(1000, "second").unwrap();
        q.schedule(1000, "third").unwrap();
        assert_eq!(
            drain(&mut q, 1000),
            vec![(1000, "first"), (1000, "second"), (1000, "third")]
        );
    }

    #[test]
    fn zero_delay_fires_now_before_later_events() {
        let mut q = EventQueue::new();
        q.schedule(10, "later").unwrap();
        q.schedule(0, "immediate").unwrap();
        assert_eq!(drain(&mut q, 10), vec![(0, "immediate"), (10, "later")]);
    }

    #[test]
    fn negative_delay_is_rejected() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(
            q.schedule(-1, ()),
            Err(SimError::NegativeDelay {
                delay_ns: -1,
                now_ns: 0
            })
        );
    }

    #[test]
    fn schedule_at_rejects_the_past() {
        let mut q = EventQueue::new();
        q.schedule(100, "a").unwrap();
        q.pop_until(100).unwrap();
        assert_eq!(
            q.schedule_at(99, "b"),
            Err(SimError::ScheduleInPast {
                fire_at_ns: 99,
                now_ns: 100
            })
        );
        // Scheduling exactly at the current time is allowed.
        q.schedule_at(100, "now").unwrap();
        assert_eq!(q.pop_until(100).unwrap().payload, "now");
    }

    #[test]
    fn horizon_is_inclusive() {
        let mut q = EventQueue::new();
        q.schedule(500, "edge").unwrap();
        q.schedule(501, "beyond").unwrap();
        assert_eq!(drain(&mut q, 500), vec![(500, "edge")]);
        assert_eq!(q.peek_time(), Some(501));
    }

    #[test]
    fn empty_queue_pops_none_and_time_holds() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert!(q.pop_until(1_000).is_none());
        assert_eq!(q.now(), 0);
        q.advance_to(1_000).unwrap();
        assert_eq!(q.now(), 1_000);
        assert!(q.advance_to(999).is_err());
    }

    #[test]
    fn split_drain_equals_single_drain() {
        let build = || {
            let mut q = EventQueue::new();
            for (d, name) in [(7, "a"), (3, "b"), (3, "c"), (9, "d"), (5, "e")] {
                q.schedule(d, name).unwrap();
            }
            q
        };
        let mut whole = build();
        let all = drain(&mut whole, 9);

        let mut split = build();
        let mut first = drain(&mut split, 5);
        first.extend(drain(&mut split, 9));
        assert_eq!(all, first);
        assert_eq!(whole.now(), split.now());
    }

    proptest! {
        #[test]
        fn pop_sequence_is_sorted_and_stable(delays in prop::collection::vec(0i64..10_000, 1..64)) {
            let mut q = EventQueue::new();
            for (i, d) in delays.iter().enumerate() {
                q.schedule(*d, i).unwrap();
            }
            let mut popped = Vec::new();
            while let Some(ev) = q.pop_until(i64::MAX) {
                popped.push((ev.fire_at_ns, ev.payload));
            }
            prop_assert_eq!(popped.len(), delays.len());
            for w in popped.windows(2) {
                prop_assert!(w[0].0 <= w[1].0, "time-ordered");
                if w[0].0 == w[1].0 {
                    prop_assert!(w[0].1 < w[1].1, "FIFO within an instant");
                }
            }
        }

        #[test]
        fn split_horizons_compose(
            delays in prop::collection::vec(0i64..10_000, 1..64),
            cut in 0i64..10_000,
        ) {
            let build = |delays: &[i64]| {
                let mut q = EventQueue::new();
                for (i, d) in delays.iter().enumerate() {
                    q.schedule(*d, i).unwrap();
                }
                q
            };
            let mut whole = build(&delays);
            let mut all = Vec::new();
            while let Some(ev) = whole.pop_until(10_000) {
                all.push((ev.fire_at_ns, ev.payload));
            }

            let mut split = build(&delays);
            let mut merged = Vec::new();
            while let Some(ev) = split.pop_until(cut) {
                merged.push((ev.fire_at_ns, ev.payload));
            }
            split.advance_to(cut).unwrap();
            while let Some(ev) = split.pop_until(10_000) {
                merged.push((ev.fire_at_ns, ev.payload));
            }
            prop_assert_eq!(all, merged);
        }
    }
}
