//! 1-D stencil task grid: shapes, dependencies, closures, the horizontal
//! scheduling order, and the triangular checkpoint tiling.
//!
//! Tasks live on an `S x T` grid with periodic spatial boundary. `T(t,n)`
//! denotes the task at time row `t` (1-based, bottom row first) and space
//! index `n` in `[1,S]`. Up-pointing tasks depend on the task directly below;
//! down-pointing tasks depend on their two spatial neighbours in the same row.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("stencil size must be an even number >= 2, got {0}")]
    InvalidSpace(u32),
    #[error("task T({t},{n}) is outside the {s}x{rows} grid")]
    OutOfGrid { t: u32, n: u32, s: u32, rows: u32 },
    #[error("checkpoint level must be >= 1")]
    LevelZero,
    #[error("stencil size {space} is not divisible by 2^{level} = {divisor} (checkpoint level {level})")]
    SpaceNotDivisible { space: u32, level: u32, divisor: u32 },
    #[error("timesteps {time} is not divisible by 2^{lm1} = {divisor} (checkpoint level {level})")]
    TimeNotDivisible { time: u32, level: u32, lm1: u32, divisor: u32 },
}

/// Grid dimensions for the stencil kernel. Spatial boundary is periodic, so
/// every row holds exactly `space` tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    space: u32,
    time: u32,
}

impl GridSpec {
    pub fn new(space: u32, time: u32) -> Result<Self, GridError> {
        if space < 2 || space % 2 != 0 {
            return Err(GridError::InvalidSpace(space));
        }
        Ok(GridSpec { space, time })
    }

    pub fn space(&self) -> u32 {
        self.space
    }

    pub fn time(&self) -> u32 {
        self.time
    }

    pub fn task_count(&self) -> usize {
        self.space as usize * self.time as usize
    }

    pub fn contains(&self, id: TaskId) -> bool {
        id.t >= 1 && id.t <= self.time && id.n >= 1 && id.n <= self.space
    }

    /// Dense index of a task, row-major from `T(1,1)`.
    pub fn index_of(&self, id: TaskId) -> usize {
        debug_assert!(self.contains(id));
        (id.t as usize - 1) * self.space as usize + (id.n as usize - 1)
    }

    pub fn task_at(&self, index: usize) -> TaskId {
        debug_assert!(index < self.task_count());
        TaskId {
            t: (index / self.space as usize) as u32 + 1,
            n: (index % self.space as usize) as u32 + 1,
        }
    }

    /// Wraps a (possibly out-of-range) space coordinate into `[1, S]`.
    pub fn wrap(&self, n: i64) -> u32 {
        let s = self.space as i64;
        (((n - 1).rem_euclid(s)) + 1) as u32
    }

    /// Checks the tiling divisibility constraints for a checkpoint level:
    /// `S mod 2^c = 0` and `T mod 2^(c-1) = 0`.
    pub fn validate_level(&self, level: u32) -> Result<(), GridError> {
        if level == 0 {
            return Err(GridError::LevelZero);
        }
        let sdiv = 1u32
            .checked_shl(level)
            .filter(|d| self.space % d == 0)
            .ok_or(GridError::SpaceNotDivisible {
                space: self.space,
                level,
                divisor: 1u32.checked_shl(level).unwrap_or(u32::MAX),
            })?;
        let _ = sdiv;
        let h = half_height(level);
        if self.time % h != 0 {
            return Err(GridError::TimeNotDivisible {
                time: self.time,
                level,
                lm1: level - 1,
                divisor: h,
            });
        }
        Ok(())
    }

    fn check(&self, id: TaskId) -> Result<(), GridError> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(GridError::OutOfGrid {
                t: id.t,
                n: id.n,
                s: self.space,
                rows: self.time,
            })
        }
    }
}

/// Rows per band at checkpoint level `c`: `h = 2^(c-1)`.
pub fn half_height(level: u32) -> u32 {
    1 << (level - 1)
}

/// Identifier of a task-graph-level task: time row `t` and space index `n`,
/// both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskId {
    pub t: u32,
    pub n: u32,
}

impl TaskId {
    pub fn new(t: u32, n: u32) -> Self {
        TaskId { t, n }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T({},{})", self.t, self.n)
    }
}

/// Shorthand used pervasively in tests.
pub fn tid(t: u32, n: u32) -> TaskId {
    TaskId::new(t, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    Up,
    Down,
}

/// A task points up iff `t + n` is even. This parity reproduces the entry
/// boundaries of the checkpoint triangles and keeps every row at exactly
/// `S/2` up tasks followed by `S/2` down tasks in the horizontal order.
pub fn shape_of(grid: &GridSpec, id: TaskId) -> Result<Orientation, GridError> {
    grid.check(id)?;
    Ok(if (id.t + id.n) % 2 == 0 {
        Orientation::Up
    } else {
        Orientation::Down
    })
}

/// Dependencies of a task. Up tasks above row 1 depend on the task directly
/// below; row-1 up tasks start from the initial data and have none. Down
/// tasks depend on both spatial neighbours, wrapped periodically.
pub fn dependencies_of(grid: &GridSpec, id: TaskId) -> Result<Vec<TaskId>, GridError> {
    grid.check(id)?;
    Ok(match shape_of(grid, id)? {
        Orientation::Up => {
            if id.t == 1 {
                vec![]
            } else {
                vec![TaskId::new(id.t - 1, id.n)]
            }
        }
        Orientation::Down => vec![
            TaskId::new(id.t, grid.wrap(id.n as i64 - 1)),
            TaskId::new(id.t, grid.wrap(id.n as i64 + 1)),
        ],
    })
}

/// Tasks that consume a given task's output (the inverse of
/// [`dependencies_of`]).
pub fn consumers_of(grid: &GridSpec, id: TaskId) -> Result<Vec<TaskId>, GridError> {
    grid.check(id)?;
    let mut out = Vec::with_capacity(2);
    match shape_of(grid, id)? {
        // The task above (same column, next row) is up and reads this one.
        Orientation::Down => {
            if id.t < grid.time {
                out.push(TaskId::new(id.t + 1, id.n));
            }
        }
        // Both same-row spatial neighbours are down and read this one.
        Orientation::Up => {
            out.push(TaskId::new(id.t, grid.wrap(id.n as i64 - 1)));
            out.push(TaskId::new(id.t, grid.wrap(id.n as i64 + 1)));
        }
    }
    Ok(out)
}

/// Migratable task descriptor: what a scheduler ships between nodes. The
/// stencil data itself is not part of the closure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskClosure {
    pub global_id: TaskId,
    pub dependencies: Vec<TaskId>,
    /// `(t_lo, t_hi, n_lo, n_hi)` input range of the task body.
    pub input_args: (u32, u32, u32, u32),
}

pub fn make_closure(grid: &GridSpec, id: TaskId) -> Result<TaskClosure, GridError> {
    Ok(TaskClosure {
        global_id: id,
        dependencies: dependencies_of(grid, id)?,
        input_args: (id.t, id.t, id.n, id.n),
    })
}

/// Queue order for the horizontal scheduling policy: per time row, all up
/// tasks in ascending space index, then all down tasks. Every task's
/// dependencies appear strictly earlier in this order.
pub fn horizontal_order(grid: &GridSpec) -> Vec<TaskId> {
    let mut order = Vec::with_capacity(grid.task_count());
    for t in 1..=grid.time {
        for n in 1..=grid.space {
            if (t + n) % 2 == 0 {
                order.push(TaskId::new(t, n));
            }
        }
        for n in 1..=grid.space {
            if (t + n) % 2 != 0 {
                order.push(TaskId::new(t, n));
            }
        }
    }
    order
}

/// Band index (1-based) of a time row at a given checkpoint level: band `B`
/// covers rows `(B-1)h + 1 ..= Bh` with `h = 2^(c-1)`.
pub fn band_of_row(level: u32, row: u32) -> u32 {
    (row - 1) / half_height(level) + 1
}

/// One checkpoint-level triangle: an aggregation of `4^(c-1)` tasks whose
/// entry boundary is checkpointed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcTriangle {
    pub level: u32,
    /// 1-based band of `h` consecutive time rows.
    pub band: u32,
    /// Slot index within the band (0-based, up and down interleaved).
    pub slot: u32,
    pub orientation: Orientation,
    /// All member tasks, sorted.
    pub members: Vec<TaskId>,
    /// Members with no dependencies or at least one dependency outside the
    /// triangle; their input data forms the triangle's checkpoint.
    pub entry_tasks: Vec<TaskId>,
}

/// Entry tasks of a triangle: members whose dependencies do not all resolve
/// inside it (or that have none at all).
pub fn entry_tasks(grid: &GridSpec, members: &[TaskId]) -> Result<Vec<TaskId>, GridError> {
    let inside: HashSet<TaskId> = members.iter().copied().collect();
    let mut entries = Vec::new();
    for &m in members {
        let deps = dependencies_of(grid, m)?;
        if deps.is_empty() || deps.iter().any(|d| !inside.contains(d)) {
            entries.push(m);
        }
    }
    entries.sort();
    Ok(entries)
}

/// Tiles the grid into checkpoint triangles for a level. Per band of
/// `h = 2^(c-1)` rows, up triangles anchor their bottom-left corner at every
/// other `2h` columns and down triangles sit between them, wrapping around
/// the periodic boundary; together they partition the band.
pub fn tc_tiling(grid: &GridSpec, level: u32) -> Result<Vec<TcTriangle>, GridError> {
    grid.validate_level(level)?;
    let h = half_height(level);
    let bands = grid.time / h;
    let per_kind = grid.space / (2 * h);
    let mut triangles = Vec::with_capacity((bands * 2 * per_kind) as usize);
    for band in 1..=bands {
        let r0 = (band - 1) * h + 1;
        // Anchors are chosen so the bottom-left task of an up triangle is
        // itself up; only level 1 on even rows needs the shift.
        let shift = if r0 % 2 == 0 { h } else { 0 };
        let mut slot = 0u32;
        for k in 0..per_kind {
            let a = (1 + 2 * h * k + shift) as i64;
            let mut members = Vec::with_capacity((h * h) as usize);
            for tau in 1..=h {
                let row = r0 + tau - 1;
                for col in (a + tau as i64 - 1)..=(a + 2 * h as i64 - 1 - tau as i64) {
                    members.push(TaskId::new(row, grid.wrap(col)));
                }
            }
            members.sort();
            let entry = entry_tasks(grid, &members)?;
            triangles.push(TcTriangle {
                level,
                band,
                slot,
                orientation: Orientation::Up,
                members,
                entry_tasks: entry,
            });
            slot += 1;
            let b = (2 * h * (k + 1) + shift) as i64;
            let mut members = Vec::with_capacity((h * h) as usize);
            for tau in 1..=h {
                let row = r0 + tau - 1;
                for col in (b - (tau as i64 - 1))..=(b + (tau as i64 - 1)) {
                    members.push(TaskId::new(row, grid.wrap(col)));
                }
            }
            members.sort();
            let entry = entry_tasks(grid, &members)?;
            triangles.push(TcTriangle {
                level,
                band,
                slot,
                orientation: Orientation::Down,
                members,
                entry_tasks: entry,
            });
            slot += 1;
        }
    }
    Ok(triangles)
}

/// Dense lookup tables over a tiling, used by the runtime and the recovery
/// planner.
#[derive(Debug, Clone)]
pub struct Tiling {
    pub level: u32,
    pub triangles: Vec<TcTriangle>,
    /// Triangle index per task (dense by `GridSpec::index_of`).
    pub triangle_of: Vec<u32>,
    /// Set bit per task that is an entry task of its triangle.
    pub is_entry: Vec<bool>,
    pub band_count: u32,
}

impl Tiling {
    pub fn build(grid: &GridSpec, level: u32) -> Result<Self, GridError> {
        let triangles = tc_tiling(grid, level)?;
        let mut triangle_of = vec![u32::MAX; grid.task_count()];
        let mut is_entry = vec![false; grid.task_count()];
        for (ti, tri) in triangles.iter().enumerate() {
            for &m in &tri.members {
                triangle_of[grid.index_of(m)] = ti as u32;
            }
            for &e in &tri.entry_tasks {
                is_entry[grid.index_of(e)] = true;
            }
        }
        debug_assert!(triangle_of.iter().all(|&x| x != u32::MAX));
        Ok(Tiling {
            level,
            triangles,
            triangle_of,
            is_entry,
            band_count: grid.time / half_height(level),
        })
    }

    pub fn triangle_index_of(&self, grid: &GridSpec, id: TaskId) -> u32 {
        self.triangle_of[grid.index_of(id)]
    }

    pub fn is_entry_task(&self, grid: &GridSpec, id: TaskId) -> bool {
        self.is_entry[grid.index_of(id)]
    }

    pub fn band_of(&self, row: u32) -> u32 {
        band_of_row(self.level, row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(s: u32, t: u32) -> GridSpec {
        GridSpec::new(s, t).unwrap()
    }

    #[test]
    fn shapes_follow_parity() {
        let g = grid(6, 4);
        assert_eq!(shape_of(&g, tid(1, 1)).unwrap(), Orientation::Up);
        assert_eq!(shape_of(&g, tid(1, 2)).unwrap(), Orientation::Down);
        assert_eq!(shape_of(&g, tid(2, 2)).unwrap(), Orientation::Up);
        assert!(matches!(
            shape_of(&g, tid(5, 1)),
            Err(GridError::OutOfGrid { .. })
        ));
    }

    #[test]
    fn up_tasks_depend_on_row_below() {
        let g = grid(6, 4);
        assert_eq!(dependencies_of(&g, tid(2, 2)).unwrap(), vec![tid(1, 2)]);
        assert_eq!(dependencies_of(&g, tid(1, 1)).unwrap(), vec![]);
    }

    #[test]
    fn down_tasks_depend_on_neighbours() {
        let g = grid(6, 4);
        assert_eq!(
            dependencies_of(&g, tid(1, 2)).unwrap(),
            vec![tid(1, 1), tid(1, 3)]
        );
    }

    #[test]
    fn down_dependencies_wrap_periodically() {
        let g = grid(4, 2);
        assert_eq!(
            dependencies_of(&g, tid(2, 1)).unwrap(),
            vec![tid(2, 4), tid(2, 2)]
        );
    }

    #[test]
    fn consumers_invert_dependencies() {
        let g = grid(8, 8);
        for idx in 0..g.task_count() {
            let v = g.task_at(idx);
            for u in dependencies_of(&g, v).unwrap() {
                assert!(consumers_of(&g, u).unwrap().contains(&v), "{u} -> {v}");
            }
            for w in consumers_of(&g, v).unwrap() {
                assert!(dependencies_of(&g, w).unwrap().contains(&v));
            }
        }
    }

    #[test]
    fn closure_carries_id_deps_and_ranges() {
        let g = grid(6, 4);
        let c = make_closure(&g, tid(1, 1)).unwrap();
        assert_eq!(c.input_args, (1, 1, 1, 1));
        assert!(c.dependencies.is_empty());
        let c = make_closure(&g, tid(2, 2)).unwrap();
        assert_eq!(c.dependencies, vec![tid(1, 2)]);
        assert_eq!(c.input_args, (2, 2, 2, 2));
    }

    #[test]
    fn horizontal_order_lists_up_then_down_per_row() {
        let g = grid(4, 1);
        assert_eq!(
            horizontal_order(&g),
            vec![tid(1, 1), tid(1, 3), tid(1, 2), tid(1, 4)]
        );
        let g6 = grid(6, 2);
        let order = horizontal_order(&g6);
        let pos = |id: TaskId| order.iter().position(|&x| x == id).unwrap();
        for up in [tid(1, 1), tid(1, 3), tid(1, 5)] {
            for down in [tid(1, 2), tid(1, 4)] {
                assert!(pos(up) < pos(down));
            }
        }
        assert_eq!(order.len(), 12);
    }

    #[test]
    fn horizontal_order_of_empty_grid_is_empty() {
        let g = grid(4, 0);
        assert!(horizontal_order(&g).is_empty());
    }

    #[test]
    fn dependencies_precede_tasks_in_horizontal_order() {
        let g = grid(16, 8);
        let order = horizontal_order(&g);
        let mut pos = vec![0usize; g.task_count()];
        for (i, &id) in order.iter().enumerate() {
            pos[g.index_of(id)] = i;
        }
        for &id in &order {
            for dep in dependencies_of(&g, id).unwrap() {
                assert!(
                    pos[g.index_of(dep)] < pos[g.index_of(id)],
                    "{dep} must precede {id}"
                );
            }
        }
    }

    #[test]
    fn tiling_matches_reference_counts() {
        let g = grid(256, 256);
        let expected = [65536, 16384, 4096, 1024, 256, 64];
        for (level, want) in (1..=6).zip(expected) {
            let tiling = tc_tiling(&g, level).unwrap();
            assert_eq!(tiling.len(), want, "level {level}");
            for tri in &tiling {
                assert_eq!(tri.members.len(), 4usize.pow(level - 1));
            }
        }
    }

    #[test]
    fn small_grid_level2_tiling_is_exact() {
        let g = grid(4, 2);
        let tiling = tc_tiling(&g, 2).unwrap();
        assert_eq!(tiling.len(), 2);
        let up = &tiling[0];
        assert_eq!(up.orientation, Orientation::Up);
        assert_eq!(up.members, vec![tid(1, 1), tid(1, 2), tid(1, 3), tid(2, 2)]);
        let down = &tiling[1];
        assert_eq!(down.orientation, Orientation::Down);
        assert_eq!(
            down.members,
            vec![tid(1, 4), tid(2, 1), tid(2, 3), tid(2, 4)]
        );
    }

    #[test]
    fn entry_boundaries_match_worked_example() {
        // Level-2 tiling on an 8-wide grid: the up triangle containing T(1,2)
        // has entries {T(1,1), T(1,3)}; the down triangle containing T(2,4)
        // has entries {T(2,3), T(1,4), T(2,5)}.
        let g = grid(8, 2);
        let tiling = tc_tiling(&g, 2).unwrap();
        let up = tiling
            .iter()
            .find(|tr| tr.members.contains(&tid(1, 2)))
            .unwrap();
        assert_eq!(up.entry_tasks, vec![tid(1, 1), tid(1, 3)]);
        let down = tiling
            .iter()
            .find(|tr| tr.members.contains(&tid(2, 4)))
            .unwrap();
        assert_eq!(down.entry_tasks, vec![tid(1, 4), tid(2, 3), tid(2, 5)]);
    }

    #[test]
    fn singleton_triangle_is_its_own_entry() {
        let g = grid(4, 4);
        let tiling = tc_tiling(&g, 1).unwrap();
        let tri = tiling
            .iter()
            .find(|tr| tr.members.contains(&tid(3, 3)))
            .unwrap();
        assert_eq!(tri.members, vec![tid(3, 3)]);
        assert_eq!(tri.entry_tasks, vec![tid(3, 3)]);
    }

    #[test]
    fn level1_triangle_orientation_matches_task_shape() {
        let g = grid(4, 4);
        for tri in tc_tiling(&g, 1).unwrap() {
            assert_eq!(
                tri.orientation,
                shape_of(&g, tri.members[0]).unwrap(),
                "{}",
                tri.members[0]
            );
        }
    }

    #[test]
    fn tiling_partitions_grid() {
        for (s, t) in [(4, 2), (8, 4), (16, 8), (8, 8)] {
            let g = grid(s, t);
            for level in 1..=3 {
                if g.validate_level(level).is_err() {
                    continue;
                }
                let tiling = tc_tiling(&g, level).unwrap();
                let mut seen = vec![0u32; g.task_count()];
                for tri in &tiling {
                    assert_eq!(tri.members.len(), 4usize.pow(level - 1));
                    for &m in &tri.members {
                        seen[g.index_of(m)] += 1;
                    }
                }
                assert!(seen.iter().all(|&c| c == 1), "S={s} T={t} level={level}");
            }
        }
    }

    #[test]
    fn level2_entry_counts_are_two_up_three_down() {
        for (s, t) in [(4, 2), (8, 8), (16, 4)] {
            let g = grid(s, t);
            for tri in tc_tiling(&g, 2).unwrap() {
                let want = match tri.orientation {
                    Orientation::Up => 2,
                    Orientation::Down => 3,
                };
                assert_eq!(tri.entry_tasks.len(), want, "{tri:?}");
            }
        }
    }

    #[test]
    fn divisibility_violations_are_named() {
        let g = grid(100, 16);
        let err = g.validate_level(4).unwrap_err();
        assert_eq!(
            err,
            GridError::SpaceNotDivisible {
                space: 100,
                level: 4,
                divisor: 16
            }
        );
        let g = grid(128, 5);
        assert!(matches!(
            g.validate_level(3),
            Err(GridError::TimeNotDivisible { .. })
        ));
        assert!(grid(128, 128).validate_level(6).is_ok());
    }

    #[test]
    fn dependency_rows_are_constrained() {
        let g = grid(16, 16);
        for idx in 0..g.task_count() {
            let v = g.task_at(idx);
            for u in dependencies_of(&g, v).unwrap() {
                match shape_of(&g, v).unwrap() {
                    Orientation::Up => assert_eq!(u.t, v.t - 1),
                    Orientation::Down => assert_eq!(u.t, v.t),
                }
            }
        }
    }
}
