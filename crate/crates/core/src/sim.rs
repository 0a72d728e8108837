//! Discrete-event kernel: integer nanosecond clock and a `(fire_at, seq)`
//! ordered future event set.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::{self, Write as _};
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us * 1_000)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    /// Converts seconds to the nearest nanosecond, saturating at the clock range.
    pub fn from_secs_f64(secs: f64) -> Self {
        let ns = (secs * 1e9).round();
        if ns <= 0.0 {
            SimTime::ZERO
        } else if ns >= u64::MAX as f64 {
            SimTime::MAX
        } else {
            SimTime(ns as u64)
        }
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-9
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0 * rhs)
    }
}

impl std::iter::Sum for SimTime {
    fn sum<I: Iterator<Item = SimTime>>(iter: I) -> SimTime {
        iter.fold(SimTime::ZERO, Add::add)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

/// Identifies the simulated component an event is addressed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ComponentId {
    System,
    Workload,
    Cpu(u32),
    Qpu(u32),
    Switch,
    Link(u32),
    QuantumLink(u32),
    Faults,
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ComponentId::System => f.write_str("system"),
            ComponentId::Workload => f.write_str("workload"),
            ComponentId::Cpu(i) => write!(f, "cpu.{i}"),
            ComponentId::Qpu(i) => write!(f, "qpu.{i}"),
            ComponentId::Switch => f.write_str("switch"),
            ComponentId::Link(i) => write!(f, "link.{i}"),
            ComponentId::QuantumLink(i) => write!(f, "qlink.{i}"),
            ComponentId::Faults => f.write_str("faults"),
        }
    }
}

/// Event bodies name their kind for the event log.
pub trait EventPayload {
    fn kind(&self) -> Cow<'static, str>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event<P> {
    pub fire_at: SimTime,
    pub seq: u64,
    pub target: ComponentId,
    pub payload: P,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event in past: scheduled for {at} but clock is {now}")]
    EventInPast { at: SimTime, now: SimTime },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSummary {
    pub events_processed: u64,
    pub clock: SimTime,
}

struct Queued<P>(Event<P>);

impl<P> Queued<P> {
    fn key(&self) -> (SimTime, u64) {
        (self.0.fire_at, self.0.seq)
    }
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest key pops first.
        other.key().cmp(&self.key())
    }
}

/// Single-threaded discrete-event engine.
pub struct Engine<P> {
    now: SimTime,
    next_seq: u64,
    processed: u64,
    queue: BinaryHeap<Queued<P>>,
    log: Option<String>,
}

impl<P: EventPayload> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: EventPayload> Engine<P> {
    pub fn new() -> Self {
        Engine {
            now: SimTime::ZERO,
            next_seq: 0,
            processed: 0,
            queue: BinaryHeap::new(),
            log: None,
        }
    }

    /// Enables the tab-separated processed-event log.
    pub fn with_event_log(mut self, enabled: bool) -> Self {
        self.log = enabled.then(String::new);
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn events_processed(&self) -> u64 {
        self.processed
    }

    pub fn logging(&self) -> bool {
        self.log.is_some()
    }

    /// Queues `payload` for `target` at `fire_at`. Returns the assigned sequence number.
    pub fn schedule(&mut self, fire_at: SimTime, target: ComponentId, payload: P) -> Result<u64, SimError> {
        if fire_at < self.now {
            return Err(SimError::EventInPast {
                at: fire_at,
                now: self.now,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event {
            fire_at,
            seq,
            target,
            payload,
        }));
        Ok(seq)
    }

    /// Schedules relative to the current clock; cannot be in the past.
    pub fn schedule_in(&mut self, delay: SimTime, target: ComponentId, payload: P) -> u64 {
        let at = self.now.saturating_add(delay);
        self.schedule(at, target, payload)
            .expect("relative schedule is never in the past")
    }

    /// Removes and returns the next event with `fire_at <= limit`, advancing the clock.
    pub fn pop_until(&mut self, limit: SimTime) -> Option<Event<P>> {
        match self.queue.peek() {
            Some(top) if top.0.fire_at <= limit => {}
            _ => return None,
        }
        let Queued(ev) = self.queue.pop()?;
        debug_assert!(ev.fire_at >= self.now);
        self.now = ev.fire_at;
        self.processed += 1;
        if let Some(log) = self.log.as_mut() {
            let _ = writeln!(
                log,
                "{}\t{}\t{}\t{}",
                ev.fire_at.0,
                ev.seq,
                ev.target,
                ev.payload.kind()
            );
        }
        Some(ev)
    }

    /// Processes every event with `fire_at <= limit` in `(fire_at, seq)` order.
    pub fn run_until<F, E>(&mut self, limit: SimTime, mut handler: F) -> Result<RunSummary, E>
    where
        F: FnMut(&mut Self, Event<P>) -> Result<(), E>,
    {
        let mut count = 0;
        while let Some(ev) = self.pop_until(limit) {
            count += 1;
            handler(self, ev)?;
        }
        Ok(RunSummary {
            events_processed: count,
            clock: self.now,
        })
    }

    pub fn event_log(&self) -> Option<&str> {
        self.log.as_deref()
    }

    pub fn take_event_log(&mut self) -> Option<String> {
        self.log.take()
    }
}
