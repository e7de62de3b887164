//! The simulated distributed runtime: workers pulling from a global FIFO
//! queue (an approximation of work stealing), dependency waits, remote-data
//! fetches, the logging/checkpointing hooks, failure injection, and both
//! recovery strategies.
//!
//! Everything runs on the single-threaded event engine, so a run is
//! bit-deterministic for a fixed configuration and seed.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::config::{ConfigError, RecoveryStrategy, SimConfig};
use crate::engine::{Engine, EngineError, Event, EventKind, ProcessHandle, RunError};
use crate::kernel::{Kernel, StencilKernel};
use crate::metrics::{FailureRecord, RunTrace, TraceEvent, TraceKind, WorkerReport};
use crate::resilience::{
    checkpoint_baseline, compute_l2, compute_l3, CheckpointRecord, CheckpointStore, FailureDriver,
    PlanKind, RecoveryPlan, RingAssignment, SecuredTracker, TaskLogStore,
};
use crate::stencil::{GridSpec, GridError, TaskId, Tiling};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("grid error: {0}")]
    Grid(#[from] GridError),
    #[error("engine error: {0}")]
    Engine(#[from] EngineError),
    #[error("scheduling deadlock: {0}")]
    Deadlock(String),
    #[error("simulation integrity error: {0}")]
    Integrity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceStatus {
    Pending,
    Waiting,
    Fetching,
    Running,
    Completed,
    Cancelled,
}

/// One attempt at executing a task.
#[derive(Debug, Clone)]
pub struct TaskInstance {
    pub task: TaskId,
    pub attempt: u32,
    pub is_replay: bool,
    pub status: InstanceStatus,
    pub worker: Option<u32>,
    pub enqueued_at: f64,
    pub popped_at: Option<f64>,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
    pub cancelled_at: Option<f64>,
}

#[derive(Debug, Clone)]
struct TaskState {
    current: usize,
    attempts: u32,
    completed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    WaitingDeps,
    Comm,
    Running,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommStage {
    /// Remote dependency data transfer.
    Fetch,
    /// Entry input restored from its checkpoint on a guard.
    CheckpointFetch,
    /// Task-log send to the guard.
    Log,
    /// Entry-data checkpoint send to the guard.
    Checkpoint,
}

#[derive(Debug)]
struct Worker {
    id: u32,
    proc: ProcessHandle,
    alive: bool,
    joined_at: f64,
    died_at: Option<f64>,
    phase: Phase,
    phase_since: f64,
    current: Option<usize>,
    comm_plan: VecDeque<(CommStage, f64)>,
    processing: f64,
    recompute: f64,
    comm: f64,
    waiting: f64,
    idle: f64,
    completed_tasks: u64,
}

impl Worker {
    fn new(id: u32, proc: ProcessHandle, joined_at: f64) -> Self {
        Worker {
            id,
            proc,
            alive: true,
            joined_at,
            died_at: None,
            phase: Phase::Idle,
            phase_since: joined_at,
            current: None,
            comm_plan: VecDeque::new(),
            processing: 0.0,
            recompute: 0.0,
            comm: 0.0,
            waiting: 0.0,
            idle: 0.0,
            completed_tasks: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Actor {
    Worker(u32),
    FailureInjector,
}

/// How failures are produced: the seeded exponential stream from the
/// configuration, or an explicit script (useful for reproducing exact
/// scenarios).
#[derive(Debug, Clone)]
pub enum FailurePlan {
    FromConfig,
    /// `(time, victim)` pairs; a `None` victim falls back to the seeded
    /// uniform pick over live workers.
    Scripted(Vec<(f64, Option<u32>)>),
}

/// All mutable simulation state; the event handler the engine drives.
pub struct World {
    cfg: SimConfig,
    grid: GridSpec,
    kernel: StencilKernel,
    tiling: Option<Tiling>,
    order_pos: Vec<u32>,
    deps: Vec<Vec<u32>>,
    fetch_cost: f64,
    log_cost: f64,
    backup_cost: f64,
    actors: Vec<Actor>,
    workers: Vec<Worker>,
    ring: Option<RingAssignment>,
    queue: VecDeque<usize>,
    instances: Vec<TaskInstance>,
    tasks: Vec<TaskState>,
    waiters: Vec<Vec<u32>>,
    logs: TaskLogStore,
    ckpt: CheckpointStore,
    secured: Option<SecuredTracker>,
    injector: Option<ProcessHandle>,
    driver: Option<FailureDriver>,
    scripted_mode: bool,
    scripted: VecDeque<(f64, Option<u32>)>,
    trace: Vec<TraceEvent>,
    trace_seq: u64,
    completed_total: usize,
    failures: Vec<FailureRecord>,
    finished: bool,
}

impl World {
    fn trace(&mut self, time: f64, kind: TraceKind, worker: Option<u32>, inst: Option<usize>) {
        let (task, attempt) = match inst {
            Some(i) => (Some(self.instances[i].task), self.instances[i].attempt),
            None => (None, 0),
        };
        self.trace.push(TraceEvent {
            time,
            sequence: self.trace_seq,
            kind,
            worker,
            task,
            attempt,
        });
        self.trace_seq += 1;
    }

    fn task_index(&self, id: TaskId) -> usize {
        self.grid.index_of(id)
    }

    fn band_of_task(&self, idx: usize) -> u32 {
        let tiling = self.tiling.as_ref().expect("banding requires a tiling");
        tiling.band_of(self.grid.task_at(idx).t)
    }

    /// Accrues the elapsed phase time into the matching category and restarts
    /// the phase clock.
    fn accrue(&mut self, w: u32, now: f64) {
        let worker = &self.workers[w as usize];
        let dt = now - worker.phase_since;
        debug_assert!(dt >= -1e-12, "phase clock ran backwards");
        let bucket = match worker.phase {
            Phase::Idle => 0,
            Phase::WaitingDeps => 1,
            Phase::Comm => 2,
            Phase::Running => {
                let inst = &self.instances[worker.current.expect("running implies a task")];
                if inst.attempt > 1 || inst.is_replay {
                    4
                } else {
                    3
                }
            }
        };
        let worker = &mut self.workers[w as usize];
        match bucket {
            0 => worker.idle += dt,
            1 => worker.waiting += dt,
            2 => worker.comm += dt,
            3 => worker.processing += dt,
            _ => worker.recompute += dt,
        }
        worker.phase_since = now;
    }

    fn set_phase(&mut self, w: u32, now: f64, phase: Phase) {
        self.accrue(w, now);
        self.workers[w as usize].phase = phase;
    }

    fn worker_signal(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        if !self.workers[w as usize].alive || self.finished {
            return Ok(());
        }
        match self.workers[w as usize].phase {
            Phase::Idle => self.try_pop(engine, w),
            Phase::WaitingDeps => self.evaluate_deps(engine, w),
            Phase::Comm | Phase::Running => Ok(()),
        }
    }

    fn worker_timeout(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        debug_assert!(self.workers[w as usize].alive);
        match self.workers[w as usize].phase {
            Phase::Comm => {
                self.finish_comm_stage(engine, w)?;
                self.advance_comm(engine, w)
            }
            Phase::Running => self.task_complete(engine, w),
            Phase::Idle | Phase::WaitingDeps => {
                // A stale timeout would have been invalidated; getting here
                // means an accounting bug.
                Err(SimError::Integrity(format!(
                    "worker {w} received a timeout while not executing"
                )))
            }
        }
    }

    /// FIFO pop: the head task moves to this worker; an empty queue leaves
    /// the worker idle until something is enqueued or the run ends.
    fn try_pop(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        let now = engine.now().seconds();
        match self.queue.pop_front() {
            Some(inst_id) => {
                debug_assert_eq!(self.instances[inst_id].status, InstanceStatus::Pending);
                self.set_phase(w, now, Phase::Idle);
                engine.clear_waiting(self.workers[w as usize].proc);
                self.instances[inst_id].worker = Some(w);
                self.instances[inst_id].popped_at = Some(now);
                self.workers[w as usize].current = Some(inst_id);
                self.trace(now, TraceKind::Pop, Some(w), Some(inst_id));
                self.evaluate_deps(engine, w)
            }
            None => {
                self.workers[w as usize].phase = Phase::Idle;
                engine.mark_waiting(self.workers[w as usize].proc, "global task queue (empty)");
                Ok(())
            }
        }
    }

    /// Checks the held task's dependencies; advances to the transfer phase
    /// when every dependency has a completed current attempt, or when the
    /// task's own entry checkpoint can feed it.
    fn evaluate_deps(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        let now = engine.now().seconds();
        let inst_id = self.workers[w as usize].current.expect("worker holds a task");
        let task = self.instances[inst_id].task;
        let tidx = self.task_index(task);
        let unmet: Vec<u32> = self.deps[tidx]
            .iter()
            .copied()
            .filter(|&d| !self.tasks[d as usize].completed)
            .collect();
        if unmet.is_empty() {
            return self.begin_comm(engine, w, false);
        }
        if let (Some(tiling), true) = (&self.tiling, self.cfg.checkpoint_enabled) {
            if tiling.is_entry_task(&self.grid, task) {
                let tri = tiling.triangle_index_of(&self.grid, task);
                if self.ckpt.record_for(tri, task).is_some() {
                    return self.begin_comm(engine, w, true);
                }
            }
        }
        if self.instances[inst_id].status != InstanceStatus::Waiting {
            self.instances[inst_id].status = InstanceStatus::Waiting;
            self.trace(now, TraceKind::WaitBegin, Some(w), Some(inst_id));
        }
        if self.workers[w as usize].phase != Phase::WaitingDeps {
            self.set_phase(w, now, Phase::WaitingDeps);
        }
        for d in unmet {
            if !self.waiters[d as usize].contains(&w) {
                self.waiters[d as usize].push(w);
            }
        }
        engine.mark_waiting(
            self.workers[w as usize].proc,
            format!("dependencies of {task}"),
        );
        Ok(())
    }

    /// Builds and starts the serial transfer plan: one fetch per remote
    /// dependency (or a single checkpoint fetch), then the task log, then
    /// the conditional entry checkpoint. Processing follows.
    fn begin_comm(&mut self, engine: &mut Engine, w: u32, via_checkpoint: bool) -> Result<(), SimError> {
        let now = engine.now().seconds();
        let inst_id = self.workers[w as usize].current.expect("worker holds a task");
        if self.instances[inst_id].status == InstanceStatus::Waiting {
            self.trace(now, TraceKind::WaitEnd, Some(w), Some(inst_id));
        }
        self.instances[inst_id].status = InstanceStatus::Fetching;
        engine.clear_waiting(self.workers[w as usize].proc);
        let task = self.instances[inst_id].task;
        let tidx = self.task_index(task);
        let mut plan = VecDeque::new();
        if via_checkpoint {
            let tiling = self.tiling.as_ref().expect("checkpoint path needs tiling");
            let tri = tiling.triangle_index_of(&self.grid, task);
            let rec = self.ckpt.record_for(tri, task).expect("record present");
            if rec.holder != w {
                plan.push_back((CommStage::CheckpointFetch, self.fetch_cost));
            }
        } else {
            for &d in &self.deps[tidx] {
                let producer = self.instances[self.tasks[d as usize].current].worker;
                debug_assert!(producer.is_some(), "completed task has an executor");
                if producer != Some(w) {
                    plan.push_back((CommStage::Fetch, self.fetch_cost));
                }
            }
        }
        plan.push_back((CommStage::Log, self.log_cost));
        if self.cfg.checkpoint_enabled {
            let tiling = self.tiling.as_ref().expect("checkpointing needs tiling");
            if tiling.is_entry_task(&self.grid, task) {
                plan.push_back((CommStage::Checkpoint, self.backup_cost));
            }
        }
        self.set_phase(w, now, Phase::Comm);
        self.workers[w as usize].comm_plan = plan;
        self.advance_comm(engine, w)
    }

    fn advance_comm(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        loop {
            match self.workers[w as usize].comm_plan.front().copied() {
                None => return self.begin_running(engine, w),
                Some((_, cost)) if cost > 0.0 => {
                    engine.schedule_timeout(self.workers[w as usize].proc, cost)?;
                    return Ok(());
                }
                Some(_) => self.finish_comm_stage(engine, w)?,
            }
        }
    }

    fn finish_comm_stage(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        let now = engine.now().seconds();
        let inst_id = self.workers[w as usize].current.expect("worker holds a task");
        let (stage, _cost) = self.workers[w as usize]
            .comm_plan
            .pop_front()
            .expect("a comm stage was in flight");
        match stage {
            CommStage::Fetch | CommStage::CheckpointFetch => {
                self.trace(now, TraceKind::Fetch, Some(w), Some(inst_id));
            }
            CommStage::Log => {
                let inst = &self.instances[inst_id];
                self.logs.insert(w, inst.task, inst.attempt, now);
                self.trace(now, TraceKind::Log, Some(w), Some(inst_id));
            }
            CommStage::Checkpoint => {
                let task = self.instances[inst_id].task;
                let tiling = self.tiling.as_ref().expect("checkpointing needs tiling");
                let tri = tiling.triangle_index_of(&self.grid, task);
                let band = tiling.band_of(task.t);
                let slot = tiling.triangles[tri as usize].slot;
                let holder = self
                    .ring
                    .as_ref()
                    .expect("checkpointing needs a ring")
                    .guard_of(w)
                    .map_err(|e| SimError::Integrity(e.to_string()))?;
                self.ckpt.insert(
                    CheckpointRecord {
                        triangle: tri,
                        task,
                        band,
                        sender: w,
                        holder,
                        completed_at: now,
                    },
                    slot,
                );
                if let Some(tracker) = &mut self.secured {
                    tracker.on_record(tri, task);
                }
                self.trace(now, TraceKind::Checkpoint, Some(w), Some(inst_id));
            }
        }
        Ok(())
    }

    fn begin_running(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        let now = engine.now().seconds();
        let inst_id = self.workers[w as usize].current.expect("worker holds a task");
        self.set_phase(w, now, Phase::Running);
        self.instances[inst_id].status = InstanceStatus::Running;
        self.instances[inst_id].started_at = Some(now);
        self.trace(now, TraceKind::RunBegin, Some(w), Some(inst_id));
        let duration = self.kernel.duration(self.instances[inst_id].task);
        engine.schedule_timeout(self.workers[w as usize].proc, duration)?;
        Ok(())
    }

    fn task_complete(&mut self, engine: &mut Engine, w: u32) -> Result<(), SimError> {
        let now = engine.now().seconds();
        let inst_id = self.workers[w as usize].current.expect("worker holds a task");
        self.set_phase(w, now, Phase::Idle);
        self.instances[inst_id].status = InstanceStatus::Completed;
        self.instances[inst_id].finished_at = Some(now);
        let tidx = self.task_index(self.instances[inst_id].task);
        debug_assert!(!self.tasks[tidx].completed);
        self.tasks[tidx].completed = true;
        self.completed_total += 1;
        self.workers[w as usize].completed_tasks += 1;
        self.workers[w as usize].current = None;
        self.trace(now, TraceKind::RunEnd, Some(w), Some(inst_id));
        let woken = std::mem::take(&mut self.waiters[tidx]);
        for ww in woken {
            if self.workers[ww as usize].alive {
                engine.signal(self.workers[ww as usize].proc)?;
            }
        }
        if self.completed_total == self.tasks.len() {
            self.finish_run(engine);
            Ok(())
        } else {
            self.try_pop(engine, w)
        }
    }

    fn finish_run(&mut self, engine: &mut Engine) {
        let now = engine.now().seconds();
        for w in 0..self.workers.len() as u32 {
            if self.workers[w as usize].alive {
                self.accrue(w, now);
                engine.terminate(self.workers[w as usize].proc);
            }
        }
        if let Some(injector) = self.injector {
            engine.terminate(injector);
        }
        self.finished = true;
    }

    fn live_workers(&self) -> Vec<u32> {
        self.workers
            .iter()
            .filter(|w| w.alive)
            .map(|w| w.id)
            .collect()
    }

    /// Victim's started-and-not-backed-up tasks, derived from the task logs
    /// its guard holds: tasks whose current attempt was logged by the
    /// victim, began running, and either lies past the secured band or never
    /// completed.
    pub fn compute_l1(&self, victim: u32, secured_band: u32) -> BTreeSet<TaskId> {
        let mut l1 = BTreeSet::new();
        for rec in self.logs.logged_by(victim) {
            let tidx = self.task_index(rec.task);
            let inst = &self.instances[self.tasks[tidx].current];
            if inst.worker != Some(victim) || inst.attempt != rec.attempt {
                continue;
            }
            if inst.started_at.is_none() {
                continue;
            }
            let unsecured =
                secured_band == 0 || self.band_of_task(tidx) > secured_band;
            if unsecured || inst.status != InstanceStatus::Completed {
                l1.insert(rec.task);
            }
        }
        l1
    }

    /// What a failure of `victim` right now would recover, without applying
    /// anything. Used by the verification suites.
    pub fn hypothetical_recovery_sets(
        &self,
        victim: u32,
    ) -> (BTreeSet<TaskId>, BTreeSet<TaskId>, BTreeSet<TaskId>) {
        let bstar = self.secured_band();
        let l1 = self.compute_l1(victim, bstar);
        let baseline = checkpoint_baseline(&self.grid, self.tiling.as_ref(), bstar);
        let l2 = compute_l2(&self.grid, &baseline, &l1);
        let l3 = compute_l3(&self.grid, &l1, &l2);
        (l1, l2, l3)
    }

    fn plan_default(&self, victim: u32, bstar: u32, victim_task: Option<usize>) -> RecoveryPlan {
        let mut cancel_started = Vec::new();
        let mut requeue_tasks: BTreeSet<usize> = BTreeSet::new();
        for tidx in 0..self.tasks.len() {
            let cur = self.tasks[tidx].current;
            match self.instances[cur].status {
                InstanceStatus::Completed => {
                    let past_checkpoint = bstar == 0 || self.is_past_band(tidx, bstar);
                    if past_checkpoint {
                        cancel_started.push(cur);
                        requeue_tasks.insert(tidx);
                    }
                }
                InstanceStatus::Running => {
                    cancel_started.push(cur);
                    requeue_tasks.insert(tidx);
                }
                _ => {}
            }
        }
        if let Some(tidx) = victim_task {
            requeue_tasks.insert(tidx);
        }
        let l1 = self.compute_l1(victim, bstar);
        let mut requeue: Vec<(TaskId, bool)> = requeue_tasks
            .into_iter()
            .map(|tidx| (self.grid.task_at(tidx), false))
            .collect();
        requeue.sort_by_key(|(task, _)| self.order_pos[self.task_index(*task)]);
        RecoveryPlan {
            kind: PlanKind::Default,
            secured_band: bstar,
            l1,
            l2: BTreeSet::new(),
            l3: BTreeSet::new(),
            cancel_started,
            supersede_pending: Vec::new(),
            requeue,
        }
    }

    fn is_past_band(&self, tidx: usize, bstar: u32) -> bool {
        match &self.tiling {
            Some(_) => self.band_of_task(tidx) > bstar,
            // No checkpointing: everything is past the (nonexistent)
            // checkpoint line.
            None => true,
        }
    }

    fn plan_dependency(&self, victim: u32, bstar: u32, victim_task: Option<usize>) -> RecoveryPlan {
        let l1 = self.compute_l1(victim, bstar);
        let baseline = checkpoint_baseline(&self.grid, self.tiling.as_ref(), bstar);
        let l2 = compute_l2(&self.grid, &baseline, &l1);
        let l3 = compute_l3(&self.grid, &l1, &l2);
        let mut cancel_started = Vec::new();
        let mut supersede_pending = Vec::new();
        let mut requeue: Vec<(TaskId, bool)> = Vec::new();
        for &t3 in &l3 {
            let tidx = self.task_index(t3);
            let cur = self.tasks[tidx].current;
            match self.instances[cur].status {
                InstanceStatus::Completed | InstanceStatus::Running => cancel_started.push(cur),
                InstanceStatus::Pending
                | InstanceStatus::Waiting
                | InstanceStatus::Fetching => supersede_pending.push(cur),
                // The victim's abandoned attempt was already cancelled; the
                // replay below re-creates it.
                InstanceStatus::Cancelled => {}
            }
            requeue.push((t3, true));
        }
        if let Some(tidx) = victim_task {
            let task = self.grid.task_at(tidx);
            if !l3.contains(&task) {
                requeue.push((task, false));
            }
        }
        requeue.sort_by_key(|(task, _)| self.order_pos[self.task_index(*task)]);
        RecoveryPlan {
            kind: PlanKind::Dependency,
            secured_band: bstar,
            l1,
            l2,
            l3,
            cancel_started,
            supersede_pending,
            requeue,
        }
    }

    fn apply_plan(&mut self, engine: &mut Engine, now: f64, plan: &RecoveryPlan) -> Result<(), SimError> {
        for &inst_id in &plan.cancel_started {
            let status = self.instances[inst_id].status;
            let holder = self.instances[inst_id].worker;
            self.instances[inst_id].status = InstanceStatus::Cancelled;
            self.instances[inst_id].cancelled_at = Some(now);
            self.trace(now, TraceKind::Cancel, holder, Some(inst_id));
            match status {
                InstanceStatus::Completed => {
                    let tidx = self.task_index(self.instances[inst_id].task);
                    debug_assert!(self.tasks[tidx].completed);
                    self.tasks[tidx].completed = false;
                    self.completed_total -= 1;
                }
                InstanceStatus::Running => {
                    let w = holder.expect("running task has a worker");
                    self.release_holder(engine, w, now);
                }
                other => {
                    return Err(SimError::Integrity(format!(
                        "planned to cancel a started instance but found {other:?}"
                    )))
                }
            }
        }
        for &inst_id in &plan.supersede_pending {
            let status = self.instances[inst_id].status;
            self.instances[inst_id].status = InstanceStatus::Cancelled;
            self.instances[inst_id].cancelled_at = Some(now);
            match status {
                InstanceStatus::Pending => {} // dropped at queue rebuild
                InstanceStatus::Waiting | InstanceStatus::Fetching => {
                    let w = self.instances[inst_id].worker.expect("held task has a worker");
                    self.release_holder(engine, w, now);
                }
                other => {
                    return Err(SimError::Integrity(format!(
                        "planned to supersede a pending instance but found {other:?}"
                    )))
                }
            }
        }
        let mut items: Vec<usize> = self
            .queue
            .drain(..)
            .filter(|&i| self.instances[i].status == InstanceStatus::Pending)
            .collect();
        for &(task, is_replay) in &plan.requeue {
            let tidx = self.task_index(task);
            self.tasks[tidx].attempts += 1;
            let inst_id = self.instances.len();
            self.instances.push(TaskInstance {
                task,
                attempt: self.tasks[tidx].attempts,
                is_replay,
                status: InstanceStatus::Pending,
                worker: None,
                enqueued_at: now,
                popped_at: None,
                started_at: None,
                finished_at: None,
                cancelled_at: None,
            });
            self.tasks[tidx].current = inst_id;
            let kind = if is_replay {
                TraceKind::ReplayEnqueue
            } else {
                TraceKind::Enqueue
            };
            self.trace(now, kind, None, Some(inst_id));
            items.push(inst_id);
        }
        items.sort_by_key(|&i| self.order_pos[self.task_index(self.instances[i].task)]);
        self.queue = items.into();
        Ok(())
    }

    /// Frees a live worker whose held instance was cancelled or superseded:
    /// its in-flight phase is abandoned and it goes back to popping.
    fn release_holder(&mut self, engine: &mut Engine, w: u32, now: f64) {
        if !self.workers[w as usize].alive {
            return;
        }
        self.accrue(w, now);
        engine.invalidate(self.workers[w as usize].proc);
        self.workers[w as usize].phase = Phase::Idle;
        self.workers[w as usize].current = None;
        self.workers[w as usize].comm_plan.clear();
    }

    /// Coordinated, globally blocking recovery at the failure instant: the
    /// victim dies, a replacement joins, the ring is repaired, protection
    /// state re-replicates at zero cost, the strategy's plan is computed and
    /// applied, and every live worker is re-driven.
    fn inject_failure(
        &mut self,
        engine: &mut Engine,
        forced_victim: Option<u32>,
    ) -> Result<(), SimError> {
        if self.finished {
            return Ok(());
        }
        let now = engine.now().seconds();
        let live = self.live_workers();
        let victim = match forced_victim.filter(|v| live.contains(v)) {
            Some(v) => v,
            None => self
                .driver
                .as_mut()
                .expect("failure without a driver")
                .choose_victim(&live),
        };
        self.trace(now, TraceKind::Failure, Some(victim), None);
        self.trace(now, TraceKind::RecoveryBegin, Some(victim), None);
        engine.interrupt(self.workers[victim as usize].proc);
        self.accrue(victim, now);
        self.workers[victim as usize].alive = false;
        self.workers[victim as usize].died_at = Some(now);
        let held = self.workers[victim as usize].current.take();
        let mut victim_task = None;
        if let Some(inst_id) = held {
            let started = self.instances[inst_id].started_at.is_some();
            self.instances[inst_id].status = InstanceStatus::Cancelled;
            self.instances[inst_id].cancelled_at = Some(now);
            if started {
                self.trace(now, TraceKind::Cancel, Some(victim), Some(inst_id));
            }
            victim_task = Some(self.task_index(self.instances[inst_id].task));
        }
        // Immediate replacement: joins the ring in the victim's place and
        // receives the re-replicated protection state at zero virtual cost.
        let replacement = self.workers.len() as u32;
        let proc = engine.spawn();
        self.actors.push(Actor::Worker(replacement));
        self.workers.push(Worker::new(replacement, proc, now));
        if let Some(ring) = &mut self.ring {
            ring.splice(victim, replacement)
                .map_err(|e| SimError::Integrity(e.to_string()))?;
            debug_assert!(ring.check_invariants().is_ok());
        }
        self.ckpt.reassign_holder(victim, replacement);
        self.failures.push(FailureRecord {
            time: now,
            victim,
            replacement,
        });
        let bstar = self.secured_band();
        let plan = match self.cfg.recovery {
            RecoveryStrategy::Default => self.plan_default(victim, bstar, victim_task),
            RecoveryStrategy::Dependency => self.plan_dependency(victim, bstar, victim_task),
        };
        debug_assert!(
            plan.l1.iter().all(|t| {
                plan.kind == PlanKind::Dependency && plan.l3.contains(t)
                    || plan.requeue.iter().any(|(task, _)| task == t)
            }),
            "every lost task must be replanned"
        );
        self.apply_plan(engine, now, &plan)?;
        self.schedule_next_failure(engine)?;
        self.trace(now, TraceKind::RecoveryEnd, Some(victim), None);
        for w in 0..self.workers.len() as u32 {
            if self.workers[w as usize].alive {
                engine.signal(self.workers[w as usize].proc)?;
            }
        }
        Ok(())
    }

    fn schedule_next_failure(&mut self, engine: &mut Engine) -> Result<(), SimError> {
        let injector = match self.injector {
            Some(p) => p,
            None => return Ok(()),
        };
        if self.scripted_mode {
            if let Some(&(t, _)) = self.scripted.front() {
                let now = engine.now().seconds();
                engine.schedule_timeout(injector, (t - now).max(0.0))?;
            }
            return Ok(());
        }
        if let Some(driver) = &mut self.driver {
            let delay = driver.next_interarrival();
            engine.schedule_timeout(injector, delay)?;
        }
        Ok(())
    }

    fn on_injector_timeout(&mut self, engine: &mut Engine) -> Result<(), SimError> {
        let forced = if !self.scripted.is_empty() {
            let (_, victim) = self.scripted.pop_front().expect("nonempty");
            victim
        } else {
            None
        };
        self.inject_failure(engine, forced)
    }

    pub fn secured_band(&self) -> u32 {
        self.secured.as_ref().map(|s| s.secured_band()).unwrap_or(0)
    }

    pub fn instances(&self) -> &[TaskInstance] {
        &self.instances
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn ring(&self) -> Option<&RingAssignment> {
        self.ring.as_ref()
    }

    pub fn checkpoint_store(&self) -> &CheckpointStore {
        &self.ckpt
    }

    pub fn live_worker_ids(&self) -> Vec<u32> {
        self.live_workers()
    }

    pub fn completed_count(&self) -> usize {
        self.completed_total
    }

    fn worker_reports(&self, makespan: f64) -> Vec<WorkerReport> {
        self.workers
            .iter()
            .map(|w| WorkerReport {
                id: w.id,
                joined_at: w.joined_at,
                died_at: w.died_at,
                processing_s: w.processing,
                recompute_s: w.recompute,
                comm_s: w.comm,
                waiting_s: w.waiting,
                idle_s: w.idle,
                completed_tasks: w.completed_tasks,
            })
            .map(|r| {
                debug_assert!(
                    (r.category_sum() - r.lifetime(makespan)).abs() < 1e-6,
                    "accounting must close for worker {}",
                    r.id
                );
                r
            })
            .collect()
    }
}

impl crate::engine::EventHandler for World {
    type Error = SimError;

    fn on_event(&mut self, engine: &mut Engine, event: Event) -> Result<(), SimError> {
        match self.actors[event.target.0 as usize] {
            Actor::Worker(w) => match event.kind {
                EventKind::Timeout => self.worker_timeout(engine, w),
                EventKind::Signal => self.worker_signal(engine, w),
                EventKind::Interrupt => Ok(()),
            },
            Actor::FailureInjector => match event.kind {
                EventKind::Timeout => self.on_injector_timeout(engine),
                _ => Ok(()),
            },
        }
    }
}

/// A configured simulation ready to run (or to be stepped for inspection).
pub struct Simulation {
    engine: Engine,
    world: World,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        Self::with_failure_plan(cfg, FailurePlan::FromConfig)
    }

    pub fn with_failure_plan(cfg: SimConfig, plan: FailurePlan) -> Result<Self, SimError> {
        cfg.validate()?;
        let grid = cfg.grid().map_err(SimError::Config)?;
        let kernel = StencilKernel::new(grid, cfg.process_cost);
        let tiling = if cfg.checkpoint_enabled {
            Some(Tiling::build(&grid, cfg.checkpoint_level)?)
        } else {
            None
        };
        let secured = tiling.as_ref().map(SecuredTracker::new);
        let order = kernel.schedule();
        let mut order_pos = vec![0u32; grid.task_count()];
        for (i, &id) in order.iter().enumerate() {
            order_pos[grid.index_of(id)] = i as u32;
        }
        let deps: Vec<Vec<u32>> = (0..grid.task_count())
            .map(|idx| {
                kernel
                    .dependencies(grid.task_at(idx))
                    .into_iter()
                    .map(|d| grid.index_of(d) as u32)
                    .collect()
            })
            .collect();
        let mut engine = Engine::new();
        let mut world = World {
            fetch_cost: cfg.effective_fetch_cost(),
            log_cost: cfg.log_cost,
            backup_cost: cfg.backup_cost,
            grid,
            kernel,
            tiling,
            order_pos,
            deps,
            actors: Vec::new(),
            workers: Vec::new(),
            ring: None,
            queue: VecDeque::new(),
            instances: Vec::with_capacity(grid.task_count()),
            tasks: Vec::with_capacity(grid.task_count()),
            waiters: vec![Vec::new(); grid.task_count()],
            logs: TaskLogStore::default(),
            ckpt: CheckpointStore::default(),
            secured,
            injector: None,
            driver: None,
            scripted: VecDeque::new(),
            trace: Vec::new(),
            trace_seq: 0,
            completed_total: 0,
            failures: Vec::new(),
            finished: false,
            cfg,
        };
        // Enqueue the whole task graph in horizontal order.
        for &task in &order {
            let inst_id = world.instances.len();
            world.instances.push(TaskInstance {
                task,
                attempt: 1,
                is_replay: false,
                status: InstanceStatus::Pending,
                worker: None,
                enqueued_at: 0.0,
                popped_at: None,
                started_at: None,
                finished_at: None,
                cancelled_at: None,
            });
            world.queue.push_back(inst_id);
            world.trace(0.0, TraceKind::Enqueue, None, Some(inst_id));
        }
        let mut tasks = vec![
            TaskState {
                current: usize::MAX,
                attempts: 1,
                completed: false,
            };
            grid.task_count()
        ];
        for (inst_id, inst) in world.instances.iter().enumerate() {
            tasks[grid.index_of(inst.task)].current = inst_id;
        }
        world.tasks = tasks;
        for id in 0..world.cfg.worker_count {
            let proc = engine.spawn();
            world.actors.push(Actor::Worker(id));
            world.workers.push(Worker::new(id, proc, 0.0));
        }
        if world.cfg.checkpoint_enabled || world.cfg.fail_enabled {
            let ids: Vec<u32> = (0..world.cfg.worker_count).collect();
            world.ring =
                Some(RingAssignment::new(&ids).map_err(|e| SimError::Integrity(e.to_string()))?);
        }
        match plan {
            FailurePlan::FromConfig => {
                if world.cfg.fail_enabled {
                    world.driver = Some(FailureDriver::new(world.cfg.mtbf, world.cfg.seed));
                }
            }
            FailurePlan::Scripted(mut s) => {
                s.sort_by(|a, b| a.0.total_cmp(&b.0));
                world.scripted = s.into();
                // Victim draws may still be needed for unforced entries.
                world.driver = Some(FailureDriver::new(
                    world.cfg.mtbf.max(1.0),
                    world.cfg.seed,
                ));
            }
        }
        if world.driver.is_some() || !world.scripted.is_empty() {
            let proc = engine.spawn();
            world.actors.push(Actor::FailureInjector);
            world.injector = Some(proc);
        }
        // Kick: all workers start by popping from the queue.
        for w in 0..world.workers.len() {
            engine.signal(world.workers[w].proc)?;
        }
        let mut sim = Simulation { engine, world };
        sim.world.schedule_next_failure(&mut sim.engine)?;
        Ok(sim)
    }

    /// Dispatches a single event; false when the run has drained.
    pub fn step(&mut self) -> Result<bool, SimError> {
        use crate::engine::EventHandler as _;
        match self.engine.pop_event() {
            Some(ev) => {
                self.world.on_event(&mut self.engine, ev)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn now(&self) -> f64 {
        self.engine.now().seconds()
    }

    /// Runs to completion and returns the full trace bundle.
    pub fn run(mut self) -> Result<RunTrace, SimError> {
        let end = self
            .engine
            .run_until_idle(&mut self.world)
            .map_err(|e| match e {
                RunError::Deadlock(d) => SimError::Deadlock(d.to_string()),
                RunError::Handler(h) => h,
            })?;
        if !self.world.finished || self.world.completed_total != self.world.tasks.len() {
            return Err(SimError::Integrity(format!(
                "run drained with {}/{} tasks completed",
                self.world.completed_total,
                self.world.tasks.len()
            )));
        }
        let makespan = end.seconds();
        Ok(RunTrace {
            config: self.world.cfg.clone(),
            makespan_s: makespan,
            workers: self.world.worker_reports(makespan),
            failures: self.world.failures.clone(),
            events: std::mem::take(&mut self.world.trace),
        })
    }
}

/// Runs a validated configuration to completion and summarizes it.
pub fn run_simulation(cfg: SimConfig) -> Result<crate::metrics::RunSummary, SimError> {
    let trace = Simulation::new(cfg)?.run()?;
    crate::metrics::summarize(&trace).map_err(|e| SimError::Integrity(e.to_string()))
}

/// Per-worker completed-task counts.
pub fn fairness_report(trace: &RunTrace) -> Vec<u64> {
    trace.workers.iter().map(|w| w.completed_tasks).collect()
}
