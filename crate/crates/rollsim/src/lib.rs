//! A deterministic discrete-event simulator of a distributed task-based
//! runtime executing a recursively decomposed 1-D stencil task graph under
//! node failures.
//!
//! Workers steal tasks from a global FIFO queue, log every task closure to
//! their guard, checkpoint entry data at configurable triangle granularity,
//! and recover from injected failures with either a standard rollback to
//! the last consistent checkpoint or a dependency-aware rollback that
//! replays only the tasks needed to reproduce the lost work.
//!
//! See the `examples/` directory for runnable entry points per capability,
//! or the `rollsim` binary for `run` / `sweep` / `verify` commands.

pub mod cli;
pub mod config;
pub mod engine;
pub mod kernel;
pub mod metrics;
pub mod resilience;
pub mod runtime;
pub mod stencil;
pub mod verify;

pub use config::{parse_config, RecoveryStrategy, SimConfig};
pub use engine::{Engine, Event, EventKind, ProcessHandle, VirtualTime};
pub use kernel::{Kernel, StencilKernel};
pub use metrics::{compare, summarize, RunSummary, RunTrace, TraceEvent, TraceKind};
pub use resilience::{
    compute_l2, compute_l3, generate_failures, FailureSchedule, RecoveryPlan, RingAssignment,
};
pub use runtime::{fairness_report, run_simulation, FailurePlan, SimError, Simulation};
pub use stencil::{
    dependencies_of, horizontal_order, make_closure, shape_of, tc_tiling, GridSpec, Orientation,
    TaskClosure, TaskId, TcTriangle, Tiling,
};
