//! Deterministic discrete-event engine.
//!
//! Events are totally ordered by `(fire_at, seq)` where `seq` is a monotone
//! counter assigned at scheduling time. Two runs that schedule the same
//! events in the same order execute them identically; there is no other
//! source of ordering.

use crate::time::SimTime;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

/// Handle returned by [`Engine::schedule`]; equals the event's tie-break sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

/// A scheduled event popped from the queue.
#[derive(Clone, Debug)]
pub struct Event<E> {
    pub fire_at: SimTime,
    pub id: EventId,
    pub payload: E,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule event at {fire_at} behind clock {clock}")]
    SchedulingInPast { fire_at: SimTime, clock: SimTime },
}

struct Scheduled<E> {
    fire_at: SimTime,
    seq: u64,
    payload: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl<E> Eq for Scheduled<E> {}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the earliest (fire_at, seq) first.
        (other.fire_at, other.seq).cmp(&(self.fire_at, self.seq))
    }
}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Event queue plus clock. Generic over the event payload so subsystems and
/// tests can drive it with their own event kinds.
pub struct Engine<E> {
    clock: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Scheduled<E>>,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            clock: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueue an event; it will be delivered at exactly `fire_at`, after any
    /// event with a smaller `(fire_at, seq)` key.
    pub fn schedule(&mut self, fire_at: SimTime, payload: E) -> Result<EventId, ScheduleError> {
        if fire_at < self.clock {
            return Err(ScheduleError::SchedulingInPast {
                fire_at,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Scheduled {
            fire_at,
            seq,
            payload,
        });
        Ok(EventId(seq))
    }

    /// Schedule relative to the current clock. Never fails.
    pub fn schedule_in(&mut self, delay_us: u64, payload: E) -> EventId {
        let at = self.clock + delay_us;
        self.schedule(at, payload).expect("delay is non-negative")
    }

    /// Pop the next event if it fires at or before `horizon`, advancing the
    /// clock to its fire time. Causality: the clock never exceeds the fire
    /// time of the event being delivered.
    pub fn pop_due(&mut self, horizon: SimTime) -> Option<Event<E>> {
        let due = matches!(self.queue.peek(), Some(ev) if ev.fire_at <= horizon);
        if !due {
            return None;
        }
        let ev = self.queue.pop().expect("peeked");
        debug_assert!(ev.fire_at >= self.clock);
        self.clock = ev.fire_at;
        Some(Event {
            fire_at: ev.fire_at,
            id: EventId(ev.seq),
            payload: ev.payload,
        })
    }

    /// Execute all events with `fire_at <= t` through `handle`, then leave the
    /// clock at exactly `t`. The handler may schedule further events.
    pub fn run_until(&mut self, t: SimTime, mut handle: impl FnMut(&mut Engine<E>, Event<E>)) {
        while let Some(ev) = self.pop_due(t) {
            handle(self, ev);
        }
        if t > self.clock {
            self.clock = t;
        }
    }
}
