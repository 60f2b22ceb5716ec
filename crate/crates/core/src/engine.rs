//! Discrete-event engine: a virtual clock and a time-ordered event queue.
//!
//! Events are delivered in `(fire_at, rank, seq)` order. `rank` is a small
//! per-kind priority supplied by the payload, `seq` is the insertion counter,
//! so simultaneous events of the same kind fire in the order they were
//! scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::SimTime;

/// Priority of a payload among events sharing the same instant. Lower fires first.
pub trait Ranked {
    fn rank(&self) -> u8 {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("cannot schedule an event at {at} when the clock is at {now}")]
pub struct SchedulingInPast {
    pub at: SimTime,
    pub now: SimTime,
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    rank: u8,
    pub payload: P,
}

impl<P> Event<P> {
    fn key(&self) -> (SimTime, u8, u64) {
        (self.fire_at, self.rank, self.seq)
    }
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    // Reversed: BinaryHeap is a max-heap and we want the earliest key on top.
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

#[derive(Debug)]
pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Event<P>>,
    delivered: u64,
}

impl<P: Ranked> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: Ranked> Engine<P> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            delivered: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Number of events handed out so far.
    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|e| e.fire_at)
    }

    pub fn schedule(&mut self, fire_at: SimTime, payload: P) -> Result<u64, SchedulingInPast> {
        if fire_at < self.now {
            return Err(SchedulingInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let rank = payload.rank();
        self.queue.push(Event {
            fire_at,
            seq,
            rank,
            payload,
        });
        Ok(seq)
    }

    /// Pops the next event if it fires no later than `end`, advancing the clock to it.
    pub fn next_until(&mut self, end: SimTime) -> Option<Event<P>> {
        if self.queue.peek()?.fire_at > end {
            return None;
        }
        let event = self.queue.pop()?;
        self.now = event.fire_at;
        self.delivered += 1;
        Some(event)
    }

    /// Processes every event with `fire_at <= end` in order, then parks the clock at `end`.
    ///
    /// The handler receives the engine so it may schedule follow-up events,
    /// including ones at the current instant.
    pub fn run_until<F>(&mut self, end: SimTime, mut handler: F) -> SimTime
    where
        F: FnMut(&mut Self, Event<P>),
    {
        while let Some(event) = self.next_until(end) {
            handler(self, event);
        }
        if end > self.now {
            self.now = end;
        }
        self.now
    }
}
