//! Minimal deterministic discrete-event kernel: a virtual clock, a
//! timestamped event queue with stable tie-breaking, process handles, and
//! interrupt delivery for failure injection.
//!
//! Events are dispatched in lexicographic `(time, sequence)` order, so two
//! events at the same virtual instant fire in scheduling order. Interrupts
//! take effect at the current instant: the target's pending events are
//! invalidated and the caller runs the exception path synchronously.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation-internal time in seconds. Never decreases across dispatches
/// within one run.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct VirtualTime(f64);

impl VirtualTime {
    pub const ZERO: VirtualTime = VirtualTime(0.0);

    pub fn new(seconds: f64) -> Self {
        debug_assert!(seconds.is_finite() && seconds >= 0.0);
        VirtualTime(seconds)
    }

    pub fn seconds(&self) -> f64 {
        self.0
    }
}

impl Add<f64> for VirtualTime {
    type Output = VirtualTime;
    fn add(self, delay: f64) -> VirtualTime {
        VirtualTime(self.0 + delay)
    }
}

impl fmt::Display for VirtualTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.0)
    }
}

/// Handle to a simulated process (one per worker plus the failure injector).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProcessHandle(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessState {
    Runnable,
    Waiting,
    Terminated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// Expiry of a scheduled delay (all simulated costs are timeouts).
    Timeout,
    /// Zero-delay notification, e.g. a dependency completion or queue wake.
    Signal,
    /// Failure delivery.
    Interrupt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: VirtualTime,
    pub sequence: u64,
    pub target: ProcessHandle,
    pub kind: EventKind,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("negative delay {0} rejected")]
    NegativeDelay(f64),
    #[error("cannot schedule event for terminated process {0:?}")]
    TerminatedTarget(ProcessHandle),
}

/// A run that cannot make progress: the event queue drained while processes
/// were still waiting. Carries the blocked wait-for edges for diagnostics.
#[derive(Debug, Error)]
#[error("deadlock: {} process(es) still waiting with an empty event queue: {}",
    blocked.len(),
    blocked.iter().map(|(p, w)| format!("process {} waiting on {}", p.0, w)).collect::<Vec<_>>().join("; "))]
pub struct DeadlockError {
    pub blocked: Vec<(ProcessHandle, String)>,
}

#[derive(Debug, Error)]
pub enum RunError<E> {
    #[error(transparent)]
    Deadlock(#[from] DeadlockError),
    #[error("event handler failed: {0}")]
    Handler(E),
}

/// Outcome of an interrupt request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterruptOutcome {
    /// The target's pending wait was aborted; handle the exception path now.
    Delivered(Event),
    /// Target already terminated; recorded as a warning, no state change.
    IgnoredTerminated,
}

struct Scheduled {
    time: f64,
    sequence: u64,
    target: ProcessHandle,
    kind: EventKind,
    epoch: u64,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.sequence == other.sequence
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.sequence.cmp(&other.sequence))
    }
}

struct Proc {
    state: ProcessState,
    /// Bumped whenever the process's pending events become stale (interrupt
    /// or phase cancellation); queued events from older epochs are dropped.
    epoch: u64,
    waiting_on: Option<String>,
}

/// The event loop driver. The engine owns the clock and queue; domain state
/// lives in the [`EventHandler`] that receives dispatched events.
pub struct Engine {
    clock: f64,
    next_sequence: u64,
    queue: BinaryHeap<Reverse<Scheduled>>,
    procs: Vec<Proc>,
}

pub trait EventHandler {
    type Error;
    fn on_event(&mut self, engine: &mut Engine, event: Event) -> Result<(), Self::Error>;
}

impl Engine {
    pub fn new() -> Self {
        Engine {
            clock: 0.0,
            next_sequence: 0,
            queue: BinaryHeap::new(),
            procs: Vec::new(),
        }
    }

    /// Current clock: the timestamp of the most recently dispatched event,
    /// zero before any dispatch.
    pub fn now(&self) -> VirtualTime {
        VirtualTime(self.clock)
    }

    pub fn spawn(&mut self) -> ProcessHandle {
        let handle = ProcessHandle(self.procs.len() as u32);
        self.procs.push(Proc {
            state: ProcessState::Runnable,
            epoch: 0,
            waiting_on: None,
        });
        handle
    }

    pub fn state(&self, p: ProcessHandle) -> ProcessState {
        self.procs[p.0 as usize].state
    }

    fn push(&mut self, target: ProcessHandle, at: f64, kind: EventKind) -> Event {
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        let epoch = self.procs[target.0 as usize].epoch;
        self.queue.push(Reverse(Scheduled {
            time: at,
            sequence,
            target,
            kind,
            epoch,
        }));
        Event {
            time: VirtualTime(at),
            sequence,
            target,
            kind,
        }
    }

    /// Enqueues a timeout expiry at `now() + delay`. Equal-time events
    /// dispatch in scheduling order.
    pub fn schedule_timeout(
        &mut self,
        target: ProcessHandle,
        delay: f64,
    ) -> Result<Event, EngineError> {
        if !(delay >= 0.0) {
            return Err(EngineError::NegativeDelay(delay));
        }
        if self.state(target) == ProcessState::Terminated {
            return Err(EngineError::TerminatedTarget(target));
        }
        Ok(self.push(target, self.clock + delay, EventKind::Timeout))
    }

    /// Enqueues a zero-delay signal, dispatched after events already queued
    /// at the current instant.
    pub fn signal(&mut self, target: ProcessHandle) -> Result<Event, EngineError> {
        if self.state(target) == ProcessState::Terminated {
            return Err(EngineError::TerminatedTarget(target));
        }
        Ok(self.push(target, self.clock, EventKind::Signal))
    }

    /// Aborts the target's pending wait and returns an interrupt event at the
    /// current instant for the caller to handle synchronously (zero delivery
    /// delay). Interrupting a terminated process is a no-op.
    pub fn interrupt(&mut self, target: ProcessHandle) -> InterruptOutcome {
        if self.state(target) == ProcessState::Terminated {
            log::warn!("interrupt for terminated process {} ignored", target.0);
            return InterruptOutcome::IgnoredTerminated;
        }
        self.invalidate(target);
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        InterruptOutcome::Delivered(Event {
            time: VirtualTime(self.clock),
            sequence,
            target,
            kind: EventKind::Interrupt,
        })
    }

    /// Drops all pending events for a process (its current phase is being
    /// abandoned). New events may be scheduled afterwards.
    pub fn invalidate(&mut self, target: ProcessHandle) {
        let proc = &mut self.procs[target.0 as usize];
        proc.epoch += 1;
        proc.waiting_on = None;
        if proc.state == ProcessState::Waiting {
            proc.state = ProcessState::Runnable;
        }
    }

    /// Marks a process blocked, with a description used in deadlock
    /// diagnostics.
    pub fn mark_waiting(&mut self, target: ProcessHandle, on: impl Into<String>) {
        let proc = &mut self.procs[target.0 as usize];
        debug_assert_ne!(proc.state, ProcessState::Terminated);
        proc.state = ProcessState::Waiting;
        proc.waiting_on = Some(on.into());
    }

    pub fn clear_waiting(&mut self, target: ProcessHandle) {
        let proc = &mut self.procs[target.0 as usize];
        if proc.state == ProcessState::Waiting {
            proc.state = ProcessState::Runnable;
        }
        proc.waiting_on = None;
    }

    /// Terminates a process: pending events are dropped and it receives no
    /// further ones.
    pub fn terminate(&mut self, target: ProcessHandle) {
        let proc = &mut self.procs[target.0 as usize];
        proc.epoch += 1;
        proc.state = ProcessState::Terminated;
        proc.waiting_on = None;
    }

    /// Pops the next live event and advances the clock to it. Stale events
    /// (scheduled before their target was invalidated or terminated) are
    /// skipped without advancing the clock.
    pub fn pop_event(&mut self) -> Option<Event> {
        while let Some(Reverse(ev)) = self.queue.pop() {
            let proc = &self.procs[ev.target.0 as usize];
            if proc.state == ProcessState::Terminated || proc.epoch != ev.epoch {
                continue;
            }
            debug_assert!(ev.time >= self.clock, "clock must not run backwards");
            self.clock = ev.time;
            return Some(Event {
                time: VirtualTime(ev.time),
                sequence: ev.sequence,
                target: ev.target,
                kind: ev.kind,
            });
        }
        None
    }

    /// Dispatches events until none remain, then verifies no process is left
    /// blocked. Returns the final clock (the makespan of the run).
    pub fn run_until_idle<H: EventHandler>(
        &mut self,
        handler: &mut H,
    ) -> Result<VirtualTime, RunError<H::Error>> {
        while let Some(event) = self.pop_event() {
            handler.on_event(self, event).map_err(RunError::Handler)?;
        }
        let blocked: Vec<(ProcessHandle, String)> = self
            .procs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.state == ProcessState::Waiting)
            .map(|(i, p)| {
                (
                    ProcessHandle(i as u32),
                    p.waiting_on.clone().unwrap_or_else(|| "unknown".into()),
                )
            })
            .collect();
        if blocked.is_empty() {
            Ok(self.now())
        } else {
            Err(RunError::Deadlock(DeadlockError { blocked }))
        }
    }
}

impl Default for Engine {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Records dispatch order; optionally chains one follow-up timeout.
    struct Recorder {
        dispatched: Vec<(f64, u64, u32, EventKind)>,
    }

    impl EventHandler for Recorder {
        type Error = std::convert::Infallible;
        fn on_event(&mut self, engine: &mut Engine, event: Event) -> Result<(), Self::Error> {
            self.dispatched.push((
                event.time.seconds(),
                event.sequence,
                event.target.0,
                event.kind,
            ));
            engine.clear_waiting(event.target);
            Ok(())
        }
    }

    fn recorder() -> Recorder {
        Recorder {
            dispatched: Vec::new(),
        }
    }

    #[test]
    fn fresh_engine_clock_is_zero() {
        let engine = Engine::new();
        assert_eq!(engine.now().seconds(), 0.0);
    }

    #[test]
    fn clock_tracks_dispatched_timeouts() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        engine.schedule_timeout(p, 7.1).unwrap();
        let mut h = recorder();
        let end = engine.run_until_idle(&mut h).unwrap();
        assert_eq!(end.seconds(), 7.1);
        assert_eq!(engine.now().seconds(), 7.1);
    }

    #[test]
    fn clock_follows_last_of_two_timeouts() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        engine.schedule_timeout(p, 5.0).unwrap();
        engine.schedule_timeout(p, 10.0).unwrap();
        let mut h = recorder();
        assert_eq!(engine.run_until_idle(&mut h).unwrap().seconds(), 10.0);
        assert_eq!(
            h.dispatched.iter().map(|d| d.0).collect::<Vec<_>>(),
            vec![5.0, 10.0]
        );
    }

    #[test]
    fn equal_time_events_dispatch_in_scheduling_order() {
        let mut engine = Engine::new();
        let a = engine.spawn();
        let b = engine.spawn();
        engine.schedule_timeout(b, 5.0).unwrap();
        engine.schedule_timeout(a, 5.0).unwrap();
        let mut h = recorder();
        engine.run_until_idle(&mut h).unwrap();
        // b was scheduled first, so it fires first despite the equal time.
        assert_eq!(
            h.dispatched.iter().map(|d| d.2).collect::<Vec<_>>(),
            vec![b.0, a.0]
        );
    }

    #[test]
    fn zero_delay_event_runs_after_existing_events_at_that_time() {
        let mut engine = Engine::new();
        let a = engine.spawn();
        let b = engine.spawn();
        engine.schedule_timeout(a, 0.0).unwrap();
        engine.signal(b).unwrap();
        let mut h = recorder();
        engine.run_until_idle(&mut h).unwrap();
        assert_eq!(
            h.dispatched.iter().map(|d| d.2).collect::<Vec<_>>(),
            vec![a.0, b.0]
        );
    }

    #[test]
    fn negative_delay_is_a_configuration_error() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        assert!(matches!(
            engine.schedule_timeout(p, -1.0),
            Err(EngineError::NegativeDelay(_))
        ));
    }

    #[test]
    fn terminated_process_receives_no_events() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        engine.schedule_timeout(p, 1.0).unwrap();
        engine.terminate(p);
        assert!(engine.pop_event().is_none());
        assert!(matches!(
            engine.schedule_timeout(p, 1.0),
            Err(EngineError::TerminatedTarget(_))
        ));
    }

    #[test]
    fn interrupt_aborts_pending_wait() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        engine.schedule_timeout(p, 10.0).unwrap();
        engine.mark_waiting(p, "test wait");
        match engine.interrupt(p) {
            InterruptOutcome::Delivered(ev) => {
                assert_eq!(ev.time.seconds(), 0.0);
                assert_eq!(ev.kind, EventKind::Interrupt);
            }
            other => panic!("unexpected outcome {other:?}"),
        }
        // The old timeout is stale and must not be delivered.
        assert!(engine.pop_event().is_none());
        assert_eq!(engine.state(p), ProcessState::Runnable);
    }

    #[test]
    fn interrupt_after_termination_is_ignored() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        engine.terminate(p);
        assert_eq!(engine.interrupt(p), InterruptOutcome::IgnoredTerminated);
    }

    #[test]
    fn empty_run_returns_zero() {
        let mut engine = Engine::new();
        let mut h = recorder();
        assert_eq!(engine.run_until_idle(&mut h).unwrap().seconds(), 0.0);
    }

    #[test]
    fn drained_queue_with_waiting_process_is_a_deadlock() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        let q = engine.spawn();
        engine.schedule_timeout(q, 1.0).unwrap();
        engine.mark_waiting(p, "dependency of T(2,2)");
        let mut h = struct_keep_waiting();
        let err = engine.run_until_idle(&mut h).unwrap_err();
        match err {
            RunError::Deadlock(d) => {
                assert_eq!(d.blocked.len(), 1);
                assert_eq!(d.blocked[0].0, p);
                assert!(d.blocked[0].1.contains("T(2,2)"));
            }
            other => panic!("expected deadlock, got {other:?}"),
        }
    }

    /// Handler that never clears waits, so blocked processes stay blocked.
    struct KeepWaiting;
    impl EventHandler for KeepWaiting {
        type Error = std::convert::Infallible;
        fn on_event(&mut self, _: &mut Engine, _: Event) -> Result<(), Self::Error> {
            Ok(())
        }
    }
    fn struct_keep_waiting() -> KeepWaiting {
        KeepWaiting
    }

    #[test]
    fn clock_is_monotone_over_random_schedules() {
        let mut engine = Engine::new();
        let p = engine.spawn();
        for delay in [3.0, 1.0, 2.5, 0.0, 9.9, 1.0] {
            engine.schedule_timeout(p, delay).unwrap();
        }
        let mut h = recorder();
        engine.run_until_idle(&mut h).unwrap();
        let times: Vec<f64> = h.dispatched.iter().map(|d| d.0).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]), "{times:?}");
    }
}
