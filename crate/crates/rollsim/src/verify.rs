//! Self-check suites runnable from the CLI: the tiling partition laws, the
//! reference triangle counts, and brute-force oracle equivalence for the
//! dependency-aware recovery set. These are the same checks the test suite
//! runs, packaged so a deployment can re-verify itself.

use std::collections::{BTreeSet, HashSet};

use crate::config::SimConfig;
use crate::resilience::{checkpoint_baseline, compute_l2, compute_l3};
use crate::runtime::{FailurePlan, SimError, Simulation};
use crate::stencil::{dependencies_of, tc_tiling, GridSpec, TaskId, Orientation};

#[derive(Debug, Default)]
pub struct VerifyReport {
    pub checks: Vec<(String, bool, String)>,
}

impl VerifyReport {
    fn record(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.checks.push((name.into(), ok, detail.into()));
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|(_, ok, _)| *ok)
    }
}

/// Reference triangle counts for a 256x256 grid, levels 1..=6.
pub const REFERENCE_TRIANGLE_COUNTS: [usize; 6] = [65536, 16384, 4096, 1024, 256, 64];

pub fn check_reference_counts(report: &mut VerifyReport) {
    let grid = GridSpec::new(256, 256).expect("valid grid");
    let mut ok = true;
    let mut detail = String::new();
    for (level, want) in (1u32..=6).zip(REFERENCE_TRIANGLE_COUNTS) {
        let got = match tc_tiling(&grid, level) {
            Ok(t) => t.len(),
            Err(e) => {
                ok = false;
                detail = e.to_string();
                break;
            }
        };
        detail.push_str(&format!("level {level}: {got} "));
        if got != want {
            ok = false;
        }
    }
    report.record("triangle counts on 256x256 grid", ok, detail);
}

/// Partition, member-count, and entry-count laws on grids up to `max_grid`.
pub fn check_tiling_partition(report: &mut VerifyReport, max_grid: u32) {
    let mut ok = true;
    let mut detail = String::new();
    let mut sizes = vec![4u32, 8];
    sizes.extend([16, 32].iter().filter(|&&s| s <= max_grid));
    'outer: for &s in sizes.iter().filter(|&&s| s <= max_grid.max(4)) {
        for &t in &[2u32, 4, 8, 16] {
            if t > max_grid {
                continue;
            }
            let grid = GridSpec::new(s, t).expect("valid grid");
            for level in 1..=3u32 {
                if grid.validate_level(level).is_err() {
                    continue;
                }
                let tiling = match tc_tiling(&grid, level) {
                    Ok(t) => t,
                    Err(e) => {
                        ok = false;
                        detail = e.to_string();
                        break 'outer;
                    }
                };
                let mut cover = vec![0u32; grid.task_count()];
                for tri in &tiling {
                    if tri.members.len() != 4usize.pow(level - 1) {
                        ok = false;
                        detail = format!("member count off at S={s} T={t} level={level}");
                        break 'outer;
                    }
                    if level == 2 {
                        let want = match tri.orientation {
                            Orientation::Up => 2,
                            Orientation::Down => 3,
                        };
                        if tri.entry_tasks.len() != want {
                            ok = false;
                            detail = format!("entry count off at S={s} T={t}");
                            break 'outer;
                        }
                    }
                    for &m in &tri.members {
                        cover[grid.index_of(m)] += 1;
                    }
                }
                if cover.iter().any(|&c| c != 1) {
                    ok = false;
                    detail = format!("not a partition at S={s} T={t} level={level}");
                    break 'outer;
                }
            }
        }
    }
    report.record("tiling partitions and entry counts", ok, detail);
}

/// Brute-force recovery-set oracle: reflexive-transitive reachability
/// enumerated per task pair over the whole grid.
pub fn l3_brute_force(
    grid: &GridSpec,
    l1: &BTreeSet<TaskId>,
    l2: &BTreeSet<TaskId>,
) -> BTreeSet<TaskId> {
    let reaches = |from: TaskId, to: TaskId| -> bool {
        let mut seen = HashSet::new();
        let mut frontier = vec![from];
        seen.insert(from);
        while let Some(v) = frontier.pop() {
            if v == to {
                return true;
            }
            for u in dependencies_of(grid, v).expect("in grid") {
                if seen.insert(u) {
                    frontier.push(u);
                }
            }
        }
        false
    };
    (0..grid.task_count())
        .map(|i| grid.task_at(i))
        .filter(|&t3| {
            l1.iter().any(|&t1| reaches(t1, t3)) && l2.iter().any(|&t2| reaches(t3, t2))
        })
        .collect()
}

/// Runs a fault-free simulation and, at every event boundary, compares the
/// planner's hypothetical recovery sets for every live victim against the
/// brute-force oracle.
pub fn check_l3_oracle_on_run(
    report: &mut VerifyReport,
    cfg: SimConfig,
    label: &str,
) -> Result<(), SimError> {
    let grid = cfg.grid().map_err(SimError::Config)?;
    let tiling = crate::stencil::Tiling::build(&grid, cfg.checkpoint_level)?;
    let mut sim = Simulation::with_failure_plan(cfg, FailurePlan::FromConfig)?;
    let mut boundaries = 0usize;
    let mut mismatches = Vec::new();
    loop {
        for victim in sim.world().live_worker_ids() {
            let (l1, l2, l3) = sim.world().hypothetical_recovery_sets(victim);
            let bstar = sim.world().secured_band();
            let baseline = checkpoint_baseline(&grid, Some(&tiling), bstar);
            let l2_check = compute_l2(&grid, &baseline, &l1);
            let l3_check = compute_l3(&grid, &l1, &l2);
            let oracle = l3_brute_force(&grid, &l1, &l2);
            if l2 != l2_check || l3 != l3_check || l3 != oracle {
                mismatches.push(format!(
                    "at t={} victim {victim}: planner {l3:?} vs oracle {oracle:?}",
                    sim.now()
                ));
            }
            boundaries += 1;
        }
        if !sim.step()? {
            break;
        }
    }
    report.record(
        format!("recovery-set oracle on {label}"),
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{boundaries} victim scenarios checked")
        } else {
            mismatches.join("; ")
        },
    );
    Ok(())
}

/// The full verification battery.
pub fn run_verify(max_grid: u32) -> Result<VerifyReport, SimError> {
    let mut report = VerifyReport::default();
    check_reference_counts(&mut report);
    check_tiling_partition(&mut report, max_grid);
    let mut grids = vec![(4u32, 2u32), (8, 4)];
    if max_grid >= 16 {
        grids.push((16, 8));
        grids.push((16, 16));
    }
    for (s, t) in grids {
        for level in 1..=3u32 {
            let grid = GridSpec::new(s, t).expect("valid");
            if grid.validate_level(level).is_err() {
                continue;
            }
            let cfg = verify_config(s, t, level);
            check_l3_oracle_on_run(&mut report, cfg, &format!("{s}x{t} grid, level {level}"))?;
        }
    }
    Ok(report)
}

fn verify_config(s: u32, t: u32, level: u32) -> SimConfig {
    crate::config::parse_config(&format!(
        "[GENERAL]\nKernel = Stencil\nWorkerCount = 3\nCheckpointLevel = {level}\n\
         Checkpoint = Y\nRecovery = Dependency\nFail = N\nMTBF = 1800\nSeed = 11\n\
         Scheduler = Horizontal\n[Stencil]\nBackupCost = 0.0013\nProcessCost = 1\n\
         StencilSize = {s}\nTimesteps = {t}\n"
    ))
    .expect("verify config parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_small_grids() {
        let report = run_verify(8).unwrap();
        assert!(
            report.all_passed(),
            "{:?}",
            report
                .checks
                .iter()
                .filter(|(_, ok, _)| !ok)
                .collect::<Vec<_>>()
        );
    }
}
