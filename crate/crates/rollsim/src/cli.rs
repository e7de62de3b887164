//! Command-line entry points: single runs, parameter sweeps, and the
//! self-verification battery.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::{parse_config, ConfigError, RecoveryStrategy, SimConfig};
use crate::metrics::{
    compare, summarize, summary_to_json, sweep_rows_to_csv, trace_to_csv, RunSummary, SweepRow,
};
use crate::runtime::{SimError, Simulation};
use crate::verify::run_verify;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_INTEGRITY: i32 = 2;

#[derive(Parser)]
#[command(
    name = "rollsim",
    about = "Discrete-event simulator of a task-based runtime with checkpointing and rollback recovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation from a config file and write summary.json.
    Run(RunArgs),
    /// Run a checkpoint-level x recovery-strategy x seed sweep.
    Sweep(SweepArgs),
    /// Run the built-in oracle suites (tiling laws, recovery-set oracle).
    Verify(VerifyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the INI configuration file.
    #[arg(long)]
    config: PathBuf,
    /// KEY=VALUE overrides applied after the file is parsed.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".", env = "ROLLSIM_OUT")]
    out: PathBuf,
    /// Also write the full event trace as trace.csv.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Inclusive checkpoint-level range, e.g. 1..6.
    #[arg(long, default_value = "1..6")]
    levels: String,
    /// Comma-separated strategies: default,dependency.
    #[arg(long, default_value = "default,dependency")]
    recovery: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long, default_value = ".", env = "ROLLSIM_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// Largest grid edge used by the exhaustive oracle suites.
    #[arg(long, default_value_t = 16)]
    max_grid: u32,
}

/// Writes atomically: to a temp file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn load_config(path: &Path, overrides: &[String]) -> Result<SimConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: &RunArgs) -> i32 {
    let cfg = match load_config(&args.config, &args.set) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let sim = match Simulation::new(cfg) {
        Ok(s) => s,
        Err(SimError::Config(e)) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("simulation error: {e}");
            return EXIT_INTEGRITY;
        }
    };
    let trace = match sim.run() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("simulation error: {e}");
            return EXIT_INTEGRITY;
        }
    };
    let summary = match summarize(&trace) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("summary error: {e}");
            return EXIT_INTEGRITY;
        }
    };
    let json = match summary_to_json(&summary) {
        Ok(j) => j,
        Err(e) => {
            eprintln!("serialization error: {e}");
            return EXIT_INTEGRITY;
        }
    };
    if let Err(e) = write_atomic(&args.out.join("summary.json"), &json) {
        eprintln!("io error: {e}");
        return EXIT_INTEGRITY;
    }
    if args.trace {
        if let Err(e) = write_atomic(&args.out.join("trace.csv"), &trace_to_csv(&trace.events)) {
            eprintln!("io error: {e}");
            return EXIT_INTEGRITY;
        }
    }
    println!(
        "makespan {:.3}s, processing {:.1}s, cancelled {}, replays {}, failures {}",
        summary.makespan_s,
        summary.aggregated_processing_s,
        summary.cancelled_count,
        summary.replay_count,
        summary.failures.len()
    );
    println!("wrote {}", args.out.join("summary.json").display());
    EXIT_OK
}

fn parse_levels(spec: &str) -> Result<Vec<u32>, String> {
    if let Some((a, b)) = spec.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| format!("bad level `{a}`"))?;
        let b: u32 = b.trim().parse().map_err(|_| format!("bad level `{b}`"))?;
        if a == 0 || b < a {
            return Err(format!("bad level range `{spec}`"));
        }
        Ok((a..=b).collect())
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| format!("bad level `{s}`")))
            .collect()
    }
}

fn parse_strategies(spec: &str) -> Result<Vec<RecoveryStrategy>, String> {
    spec.split(',')
        .map(|s| match s.trim().to_ascii_lowercase().as_str() {
            "default" => Ok(RecoveryStrategy::Default),
            "dependency" => Ok(RecoveryStrategy::Dependency),
            other => Err(format!("unknown recovery strategy `{other}`")),
        })
        .collect()
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>, String> {
    spec.split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("bad seed `{s}`")))
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> i32 {
    let base = match load_config(&args.config, &[]) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    let (levels, strategies, seeds) = match (
        parse_levels(&args.levels),
        parse_strategies(&args.recovery),
        parse_seeds(&args.seeds),
    ) {
        (Ok(l), Ok(st), Ok(se)) => (l, st, se),
        (l, st, se) => {
            for e in [l.err(), st.err().map(|e| e), se.err()].into_iter().flatten() {
                eprintln!("argument error: {e}");
            }
            return EXIT_CONFIG;
        }
    };
    let mut entries = Vec::new();
    for &seed in &seeds {
        for &level in &levels {
            for &strategy in &strategies {
                let mut cfg = base.clone();
                cfg.checkpoint_level = level;
                cfg.recovery = strategy;
                cfg.seed = seed;
                if let Err(e) = cfg.validate() {
                    eprintln!("config error at level {level}: {e}");
                    return EXIT_CONFIG;
                }
                entries.push(cfg);
            }
        }
    }
    // Runs share nothing mutable, so sweep entries execute in parallel.
    let results: Vec<Result<RunSummary, SimError>> = entries
        .par_iter()
        .map(|cfg| {
            let trace = Simulation::new(cfg.clone())?.run()?;
            summarize(&trace).map_err(|e| SimError::Integrity(e.to_string()))
        })
        .collect();
    let mut summaries = Vec::new();
    for (cfg, res) in entries.iter().zip(results) {
        match res {
            Ok(s) => summaries.push(s),
            Err(e) => {
                eprintln!(
                    "simulation failed (level {}, {}, seed {}): {e}",
                    cfg.checkpoint_level,
                    cfg.recovery.name(),
                    cfg.seed
                );
                return EXIT_INTEGRITY;
            }
        }
    }
    let mut rows = Vec::new();
    for s in &summaries {
        let name = format!(
            "summary-{}-L{}-{}-s{}.json",
            s.config_hash,
            s.config.checkpoint_level,
            s.config.recovery.name().to_ascii_lowercase(),
            s.seed
        );
        let json = match summary_to_json(s) {
            Ok(j) => j,
            Err(e) => {
                eprintln!("serialization error: {e}");
                return EXIT_INTEGRITY;
            }
        };
        if let Err(e) = write_atomic(&args.out.join(&name), &json) {
            eprintln!("io error writing {name}: {e}");
            return EXIT_INTEGRITY;
        }
        rows.push(SweepRow {
            checkpoint_level: s.config.checkpoint_level,
            recovery: s.config.recovery.name().to_string(),
            seed: s.seed,
            failures: s.failures.len(),
            cancelled_count: s.cancelled_count,
            replay_count: s.replay_count,
            aggregated_processing_s: s.aggregated_processing_s,
            makespan_s: s.makespan_s,
        });
    }
    if let Err(e) = write_atomic(&args.out.join("series.csv"), &sweep_rows_to_csv(&rows)) {
        eprintln!("io error: {e}");
        return EXIT_INTEGRITY;
    }
    // Pairwise comparison per (level, seed) when both strategies ran.
    let mut comparison = String::from(
        "checkpoint_level,seed,cancelled_default,cancelled_dependency,processing_reduction_pct,makespan_reduction_pct\n",
    );
    for &seed in &seeds {
        for &level in &levels {
            let find = |strategy: RecoveryStrategy| {
                summaries.iter().find(|s| {
                    s.seed == seed
                        && s.config.checkpoint_level == level
                        && s.config.recovery == strategy
                })
            };
            if let (Some(d), Some(dep)) = (
                find(RecoveryStrategy::Default),
                find(RecoveryStrategy::Dependency),
            ) {
                match compare(d, dep) {
                    Ok(c) => comparison.push_str(&format!(
                        "{},{},{},{},{:.4},{:.4}\n",
                        level,
                        seed,
                        c.cancelled_a,
                        c.cancelled_b,
                        c.processing_reduction_pct,
                        c.makespan_reduction_pct
                    )),
                    Err(e) => {
                        eprintln!("comparison error: {e}");
                        return EXIT_INTEGRITY;
                    }
                }
            }
        }
    }
    if let Err(e) = write_atomic(&args.out.join("comparison.csv"), &comparison) {
        eprintln!("io error: {e}");
        return EXIT_INTEGRITY;
    }
    println!(
        "wrote {} summaries, series.csv and comparison.csv under {}",
        summaries.len(),
        args.out.display()
    );
    EXIT_OK
}

fn cmd_verify(args: &VerifyArgs) -> i32 {
    match run_verify(args.max_grid) {
        Ok(report) => {
            for (name, ok, detail) in &report.checks {
                println!(
                    "{} {name}{}",
                    if *ok { "PASS" } else { "FAIL" },
                    if detail.is_empty() {
                        String::new()
                    } else {
                        format!(" ({detail})")
                    }
                );
            }
            if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_INTEGRITY
            }
        }
        Err(SimError::Config(e)) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("verification error: {e}");
            EXIT_INTEGRITY
        }
    }
}

/// Parses arguments and runs the selected command; returns the process exit
/// status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own help/version output.
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::Verify(args) => cmd_verify(&args),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_range_parses() {
        assert_eq!(parse_levels("1..6").unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(parse_levels("2,4").unwrap(), vec![2, 4]);
        assert!(parse_levels("6..1").is_err());
    }

    #[test]
    fn strategy_list_parses() {
        assert_eq!(
            parse_strategies("default,dependency").unwrap(),
            vec![RecoveryStrategy::Default, RecoveryStrategy::Dependency]
        );
        assert!(parse_strategies("fancy").is_err());
    }
}
