//! Event tracing, per-worker time accounting, run summaries, and
//! strategy-comparison reports.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::stencil::TaskId;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trace integrity violated: {0}")]
    Integrity(String),
    #[error("summaries are not comparable: {0}")]
    ConfigMismatch(String),
    #[error("serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Enqueue,
    Pop,
    WaitBegin,
    WaitEnd,
    Fetch,
    Log,
    Checkpoint,
    RunBegin,
    RunEnd,
    Cancel,
    ReplayEnqueue,
    Failure,
    RecoveryBegin,
    RecoveryEnd,
}

impl TraceKind {
    pub fn name(&self) -> &'static str {
        match self {
            TraceKind::Enqueue => "enqueue",
            TraceKind::Pop => "pop",
            TraceKind::WaitBegin => "wait-begin",
            TraceKind::WaitEnd => "wait-end",
            TraceKind::Fetch => "fetch",
            TraceKind::Log => "log",
            TraceKind::Checkpoint => "checkpoint",
            TraceKind::RunBegin => "run-begin",
            TraceKind::RunEnd => "run-end",
            TraceKind::Cancel => "cancel",
            TraceKind::ReplayEnqueue => "replay-enqueue",
            TraceKind::Failure => "failure",
            TraceKind::RecoveryBegin => "recovery-begin",
            TraceKind::RecoveryEnd => "recovery-end",
        }
    }
}

/// One timestamped observation of the run, totally ordered by
/// `(time, sequence)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub sequence: u64,
    pub kind: TraceKind,
    pub worker: Option<u32>,
    pub task: Option<TaskId>,
    pub attempt: u32,
}

/// Per-worker lifetime accounting. The five categories partition the
/// worker's active lifetime exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub id: u32,
    pub joined_at: f64,
    pub died_at: Option<f64>,
    pub processing_s: f64,
    pub recompute_s: f64,
    pub comm_s: f64,
    pub waiting_s: f64,
    pub idle_s: f64,
    pub completed_tasks: u64,
}

impl WorkerReport {
    pub fn lifetime(&self, makespan: f64) -> f64 {
        self.died_at.unwrap_or(makespan) - self.joined_at
    }

    pub fn category_sum(&self) -> f64 {
        self.processing_s + self.recompute_s + self.comm_s + self.waiting_s + self.idle_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub time: f64,
    pub victim: u32,
    pub replacement: u32,
}

/// Everything a finished run produced; the input to [`summarize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub config: SimConfig,
    pub makespan_s: f64,
    pub events: Vec<TraceEvent>,
    pub workers: Vec<WorkerReport>,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSlice {
    pub seconds: f64,
    pub percent: f64,
}

/// Time-profile categories aggregated across all workers. Fetches, task
/// logs and checkpoints share one category: they are all network transfers
/// at the same rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileBreakdown {
    pub processing: ProfileSlice,
    pub recompute: ProfileSlice,
    pub checkpointing_and_comm: ProfileSlice,
    pub waiting: ProfileSlice,
    pub idle: ProfileSlice,
}

impl ProfileBreakdown {
    pub fn total_seconds(&self) -> f64 {
        self.processing.seconds
            + self.recompute.seconds
            + self.checkpointing_and_comm.seconds
            + self.waiting.seconds
            + self.idle.seconds
    }

    pub fn percent_sum(&self) -> f64 {
        self.processing.percent
            + self.recompute.percent
            + self.checkpointing_and_comm.percent
            + self.waiting.percent
            + self.idle.percent
    }
}

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// The metrics bundle of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub makespan_s: f64,
    /// Total task execution time across workers, recompute included.
    pub aggregated_processing_s: f64,
    /// Re-executed instances whose prior attempt had started.
    pub cancelled_count: u64,
    pub replay_count: u64,
    pub checkpoint_sends: u64,
    pub profile: ProfileBreakdown,
    pub failures: Vec<FailureRecord>,
    pub per_worker_task_counts: Vec<u64>,
    pub seed: u64,
    pub config: SimConfig,
    pub config_hash: String,
}

/// Aggregates a finished run's trace into a [`RunSummary`]. Fails on a
/// malformed trace (an execution end without a matching begin).
pub fn summarize(trace: &RunTrace) -> Result<RunSummary, MetricsError> {
    check_integrity(trace)?;
    let mut cancelled = 0u64;
    let mut replays = 0u64;
    let mut checkpoint_sends = 0u64;
    for ev in &trace.events {
        match ev.kind {
            TraceKind::Cancel => cancelled += 1,
            TraceKind::ReplayEnqueue => replays += 1,
            TraceKind::Checkpoint => checkpoint_sends += 1,
            _ => {}
        }
    }
    let mut processing = 0.0;
    let mut recompute = 0.0;
    let mut comm = 0.0;
    let mut waiting = 0.0;
    let mut idle = 0.0;
    for w in &trace.workers {
        processing += w.processing_s;
        recompute += w.recompute_s;
        comm += w.comm_s;
        waiting += w.waiting_s;
        idle += w.idle_s;
    }
    let total = processing + recompute + comm + waiting + idle;
    let pct = |x: f64| if total > 0.0 { 100.0 * x / total } else { 0.0 };
    let profile = ProfileBreakdown {
        processing: ProfileSlice {
            seconds: processing,
            percent: pct(processing),
        },
        recompute: ProfileSlice {
            seconds: recompute,
            percent: pct(recompute),
        },
        checkpointing_and_comm: ProfileSlice {
            seconds: comm,
            percent: pct(comm),
        },
        waiting: ProfileSlice {
            seconds: waiting,
            percent: pct(waiting),
        },
        idle: ProfileSlice {
            seconds: idle,
            percent: pct(idle),
        },
    };
    Ok(RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        makespan_s: trace.makespan_s,
        aggregated_processing_s: processing + recompute,
        cancelled_count: cancelled,
        replay_count: replays,
        checkpoint_sends,
        profile,
        failures: trace.failures.clone(),
        per_worker_task_counts: trace.workers.iter().map(|w| w.completed_tasks).collect(),
        seed: trace.config.seed,
        config_hash: trace.config.short_hash(),
        config: trace.config.clone(),
    })
}

fn check_integrity(trace: &RunTrace) -> Result<(), MetricsError> {
    use std::collections::HashMap;
    // Key: (worker, task, attempt). Every end event must close an open begin.
    let mut open_runs: HashMap<(u32, TaskId, u32), u32> = HashMap::new();
    let mut open_waits: HashMap<(u32, TaskId, u32), u32> = HashMap::new();
    let mut last: Option<(f64, u64)> = None;
    for ev in &trace.events {
        if let Some((t, s)) = last {
            if (ev.time, ev.sequence) < (t, s) {
                return Err(MetricsError::Integrity(format!(
                    "events out of order at sequence {}",
                    ev.sequence
                )));
            }
        }
        last = Some((ev.time, ev.sequence));
        let key = match (ev.worker, ev.task) {
            (Some(w), Some(task)) => Some((w, task, ev.attempt)),
            _ => None,
        };
        match ev.kind {
            TraceKind::RunBegin => {
                let key = key.ok_or_else(|| {
                    MetricsError::Integrity("run-begin without worker/task".into())
                })?;
                *open_runs.entry(key).or_insert(0) += 1;
            }
            TraceKind::RunEnd => {
                let key = key
                    .ok_or_else(|| MetricsError::Integrity("run-end without worker/task".into()))?;
                let open = open_runs.entry(key).or_insert(0);
                if *open == 0 {
                    return Err(MetricsError::Integrity(format!(
                        "run-end without matching run-begin for {} attempt {} on worker {}",
                        key.1, key.2, key.0
                    )));
                }
                *open -= 1;
            }
            TraceKind::WaitBegin => {
                if let Some(key) = key {
                    *open_waits.entry(key).or_insert(0) += 1;
                }
            }
            TraceKind::WaitEnd => {
                if let Some(key) = key {
                    let open = open_waits.entry(key).or_insert(0);
                    if *open == 0 {
                        return Err(MetricsError::Integrity(format!(
                            "wait-end without matching wait-begin for {} on worker {}",
                            key.1, key.0
                        )));
                    }
                    *open -= 1;
                }
            }
            _ => {}
        }
    }
    Ok(())
}

/// Differences between two runs of the same configuration under different
/// recovery strategies. Reductions are relative to `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub cancelled_a: u64,
    pub cancelled_b: u64,
    pub cancelled_delta: i64,
    pub cancelled_reduction_pct: f64,
    pub processing_a_s: f64,
    pub processing_b_s: f64,
    pub processing_delta_s: f64,
    pub processing_reduction_pct: f64,
    pub makespan_a_s: f64,
    pub makespan_b_s: f64,
    pub makespan_delta_s: f64,
    pub makespan_reduction_pct: f64,
}

pub fn compare(a: &RunSummary, b: &RunSummary) -> Result<Comparison, MetricsError> {
    let mut ca = a.config.clone();
    let mut cb = b.config.clone();
    ca.recovery = crate::config::RecoveryStrategy::Default;
    cb.recovery = crate::config::RecoveryStrategy::Default;
    if ca != cb {
        return Err(MetricsError::ConfigMismatch(
            "summaries differ in more than the recovery strategy".into(),
        ));
    }
    let reduction = |x: f64, y: f64| if x != 0.0 { 100.0 * (x - y) / x } else { 0.0 };
    Ok(Comparison {
        cancelled_a: a.cancelled_count,
        cancelled_b: b.cancelled_count,
        cancelled_delta: a.cancelled_count as i64 - b.cancelled_count as i64,
        cancelled_reduction_pct: reduction(a.cancelled_count as f64, b.cancelled_count as f64),
        processing_a_s: a.aggregated_processing_s,
        processing_b_s: b.aggregated_processing_s,
        processing_delta_s: a.aggregated_processing_s - b.aggregated_processing_s,
        processing_reduction_pct: reduction(a.aggregated_processing_s, b.aggregated_processing_s),
        makespan_a_s: a.makespan_s,
        makespan_b_s: b.makespan_s,
        makespan_delta_s: a.makespan_s - b.makespan_s,
        makespan_reduction_pct: reduction(a.makespan_s, b.makespan_s),
    })
}

pub fn summary_to_json(summary: &RunSummary) -> Result<String, MetricsError> {
    Ok(serde_json::to_string_pretty(summary)?)
}

pub fn summary_from_json(text: &str) -> Result<RunSummary, MetricsError> {
    Ok(serde_json::from_str(text)?)
}

/// One trace event per row.
pub fn trace_to_csv(events: &[TraceEvent]) -> String {
    let mut out = String::from("time,sequence,kind,worker,task_t,task_n,attempt\n");
    for ev in events {
        let (t, n) = ev.task.map(|id| (id.t, id.n)).unwrap_or((0, 0));
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            ev.time,
            ev.sequence,
            ev.kind.name(),
            ev.worker.map(|w| w.to_string()).unwrap_or_default(),
            if ev.task.is_some() {
                t.to_string()
            } else {
                String::new()
            },
            if ev.task.is_some() {
                n.to_string()
            } else {
                String::new()
            },
            ev.attempt
        ));
    }
    out
}

/// Plot-ready series for sweeps: one row per (level, strategy, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub checkpoint_level: u32,
    pub recovery: String,
    pub seed: u64,
    pub failures: usize,
    pub cancelled_count: u64,
    pub replay_count: u64,
    pub aggregated_processing_s: f64,
    pub makespan_s: f64,
}

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "checkpoint_level,recovery,seed,failures,cancelled_count,replay_count,aggregated_processing_s,makespan_s\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.checkpoint_level,
            r.recovery,
            r.seed,
            r.failures,
            r.cancelled_count,
            r.replay_count,
            r.aggregated_processing_s,
            r.makespan_s
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, RecoveryStrategy};

    fn test_config() -> SimConfig {
        parse_config(
            "[GENERAL]\nKernel = Stencil\nWorkerCount = 2\nCheckpointLevel = 1\nCheckpoint = N\n\
             Recovery = Default\nFail = N\nMTBF = 1800\nSeed = 7\nScheduler = Horizontal\n\
             [Stencil]\nBackupCost = 0\nProcessCost = 5\nStencilSize = 4\nTimesteps = 2\n",
        )
        .unwrap()
    }

    fn tiny_trace() -> RunTrace {
        let task = TaskId::new(1, 1);
        RunTrace {
            config: test_config(),
            makespan_s: 5.0,
            events: vec![
                TraceEvent {
                    time: 0.0,
                    sequence: 0,
                    kind: TraceKind::Enqueue,
                    worker: None,
                    task: Some(task),
                    attempt: 1,
                },
                TraceEvent {
                    time: 0.0,
                    sequence: 1,
                    kind: TraceKind::RunBegin,
                    worker: Some(0),
                    task: Some(task),
                    attempt: 1,
                },
                TraceEvent {
                    time: 5.0,
                    sequence: 2,
                    kind: TraceKind::RunEnd,
                    worker: Some(0),
                    task: Some(task),
                    attempt: 1,
                },
            ],
            workers: vec![
                WorkerReport {
                    id: 0,
                    joined_at: 0.0,
                    died_at: None,
                    processing_s: 5.0,
                    recompute_s: 0.0,
                    comm_s: 0.0,
                    waiting_s: 0.0,
                    idle_s: 0.0,
                    completed_tasks: 1,
                },
                WorkerReport {
                    id: 1,
                    joined_at: 0.0,
                    died_at: None,
                    processing_s: 0.0,
                    recompute_s: 0.0,
                    comm_s: 0.0,
                    waiting_s: 0.0,
                    idle_s: 5.0,
                    completed_tasks: 0,
                },
            ],
            failures: vec![],
        }
    }

    #[test]
    fn summarize_counts_and_profiles() {
        let summary = summarize(&tiny_trace()).unwrap();
        assert_eq!(summary.cancelled_count, 0);
        assert_eq!(summary.replay_count, 0);
        assert_eq!(summary.makespan_s, 5.0);
        assert_eq!(summary.aggregated_processing_s, 5.0);
        assert_eq!(summary.per_worker_task_counts, vec![1, 0]);
        assert!((summary.profile.percent_sum() - 100.0).abs() < 0.1);
        assert_eq!(summary.profile.processing.percent, 50.0);
    }

    #[test]
    fn unmatched_run_end_is_an_integrity_error() {
        let mut trace = tiny_trace();
        trace.events.remove(1);
        assert!(matches!(
            summarize(&trace),
            Err(MetricsError::Integrity(_))
        ));
    }

    #[test]
    fn identical_summaries_compare_to_zero_deltas() {
        let s = summarize(&tiny_trace()).unwrap();
        let c = compare(&s, &s).unwrap();
        assert_eq!(c.cancelled_delta, 0);
        assert_eq!(c.processing_delta_s, 0.0);
        assert_eq!(c.makespan_delta_s, 0.0);
        assert_eq!(c.makespan_reduction_pct, 0.0);
    }

    #[test]
    fn comparison_requires_matching_configs_modulo_recovery() {
        let a = summarize(&tiny_trace()).unwrap();
        let mut trace_b = tiny_trace();
        trace_b.config.recovery = RecoveryStrategy::Dependency;
        let b = summarize(&trace_b).unwrap();
        compare(&a, &b).unwrap();
        let mut trace_c = tiny_trace();
        trace_c.config.seed = 8;
        let c = summarize(&trace_c).unwrap();
        assert!(compare(&a, &c).is_err());
    }

    #[test]
    fn json_emission_is_idempotent() {
        let summary = summarize(&tiny_trace()).unwrap();
        let once = summary_to_json(&summary).unwrap();
        let twice = summary_to_json(&summary_from_json(&once).unwrap()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn csv_has_one_row_per_event() {
        let trace = tiny_trace();
        let csv = trace_to_csv(&trace.events);
        assert_eq!(csv.lines().count(), trace.events.len() + 1);
        assert!(csv.lines().nth(2).unwrap().contains("run-begin"));
    }
}
