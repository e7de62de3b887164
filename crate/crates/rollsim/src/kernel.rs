//! Kernel abstraction: what the worker runtime needs from an application
//! kernel. The worker logic is decoupled from the task implementation; a
//! kernel supplies task durations, dependencies, and a deadlock-free queue
//! order. Checkpoint consistency stays kernel-specific and is provided by
//! the stencil tiling directly.

use crate::stencil::{dependencies_of, horizontal_order, GridSpec, TaskId};

pub trait Kernel {
    fn task_count(&self) -> usize;
    /// Queue order; every task's dependencies must appear earlier.
    fn schedule(&self) -> Vec<TaskId>;
    fn dependencies(&self, task: TaskId) -> Vec<TaskId>;
    /// Processing duration of one task in seconds.
    fn duration(&self, task: TaskId) -> f64;
}

/// The 1-D stencil kernel with uniform task duration and the horizontal
/// scheduling policy.
#[derive(Debug, Clone)]
pub struct StencilKernel {
    grid: GridSpec,
    process_cost: f64,
}

impl StencilKernel {
    pub fn new(grid: GridSpec, process_cost: f64) -> Self {
        StencilKernel { grid, process_cost }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }
}

impl Kernel for StencilKernel {
    fn task_count(&self) -> usize {
        self.grid.task_count()
    }

    fn schedule(&self) -> Vec<TaskId> {
        horizontal_order(&self.grid)
    }

    fn dependencies(&self, task: TaskId) -> Vec<TaskId> {
        dependencies_of(&self.grid, task).expect("task within grid")
    }

    fn duration(&self, _task: TaskId) -> f64 {
        self.process_cost
    }
}
