//! Experiment configuration: the INI file format, validation, and overrides.
//!
//! The file has a `[GENERAL]` section and one section per kernel (only
//! `[Stencil]` exists). Keys are matched case-sensitively; unknown keys are
//! errors rather than warnings so typos cannot silently skew an experiment.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stencil::GridSpec;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}` in section [{section}]")]
    UnknownKey {
        line: usize,
        key: String,
        section: String,
    },
    #[error("line {line}: key `{key}`: {problem}")]
    BadValue {
        line: usize,
        key: String,
        problem: String,
    },
    #[error("line {line}: unknown section [{section}]")]
    UnknownSection { line: usize, section: String },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("missing mandatory key `{0}`")]
    MissingKey(&'static str),
    #[error("key outside any section at line {0}")]
    KeyOutsideSection(usize),
    #[error("override `{0}` is not of the form KEY=VALUE")]
    MalformedOverride(String),
    #[error("unknown override key `{0}`")]
    UnknownOverrideKey(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Stencil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryStrategy {
    Default,
    Dependency,
}

impl RecoveryStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            RecoveryStrategy::Default => "Default",
            RecoveryStrategy::Dependency => "Dependency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedulerKind {
    Horizontal,
}

/// A fully parsed simulation configuration, mirroring the config file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub kernel: KernelKind,
    pub worker_count: u32,
    pub checkpoint_level: u32,
    pub checkpoint_enabled: bool,
    pub recovery: RecoveryStrategy,
    pub fail_enabled: bool,
    pub mtbf: f64,
    pub seed: u64,
    pub scheduler: SchedulerKind,
    pub backup_cost: f64,
    pub process_cost: f64,
    pub stencil_size: u32,
    pub timesteps: u32,
    /// Cost of one task-log send; closures are tiny metadata, so this
    /// defaults to zero.
    #[serde(default)]
    pub log_cost: f64,
    /// Cost of one remote-dependency fetch; defaults to the backup cost
    /// since both are transfers of the same task-sized data.
    pub fetch_cost: Option<f64>,
}

impl SimConfig {
    pub fn effective_fetch_cost(&self) -> f64 {
        self.fetch_cost.unwrap_or(self.backup_cost)
    }

    pub fn grid(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.stencil_size, self.timesteps)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Structural validation beyond parsing: divisibility of the grid for
    /// the checkpoint level, cost sign constraints, and worker counts. A
    /// guard/protectee ring needs at least two workers, so resilience
    /// features raise the minimum worker count.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut problems = Vec::new();
        if self.worker_count < 1 {
            problems.push("WorkerCount must be >= 1".to_string());
        }
        if (self.checkpoint_enabled || self.fail_enabled) && self.worker_count < 2 {
            problems.push(
                "WorkerCount must be >= 2 when Checkpoint or Fail is enabled (no guard possible in a ring of one)"
                    .to_string(),
            );
        }
        match self.grid() {
            Err(e) => problems.push(e.to_string()),
            Ok(grid) => {
                if self.timesteps < 1 {
                    problems.push("Timesteps must be >= 1".to_string());
                }
                if self.checkpoint_enabled {
                    if let Err(e) = grid.validate_level(self.checkpoint_level) {
                        problems.push(e.to_string());
                    }
                }
            }
        }
        for (key, value) in [
            ("BackupCost", self.backup_cost),
            ("ProcessCost", self.process_cost),
            ("LogCost", self.log_cost),
            ("FetchCost", self.effective_fetch_cost()),
        ] {
            if !(value >= 0.0) {
                problems.push(format!("{key} must be >= 0, got {value}"));
            }
        }
        if self.fail_enabled && !(self.mtbf > 0.0) {
            problems.push(format!("MTBF must be > 0 when Fail = Y, got {}", self.mtbf));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(problems.join("; ")))
        }
    }

    /// Renders the configuration back to the INI format; `parse_config` of
    /// the result reproduces the value exactly.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[GENERAL]\n");
        let _ = writeln!(out, "Kernel = Stencil");
        let _ = writeln!(out, "WorkerCount = {}", self.worker_count);
        let _ = writeln!(out, "CheckpointLevel = {}", self.checkpoint_level);
        let _ = writeln!(
            out,
            "Checkpoint = {}",
            if self.checkpoint_enabled { "Y" } else { "N" }
        );
        let _ = writeln!(out, "Recovery = {}", self.recovery.name());
        let _ = writeln!(out, "Fail = {}", if self.fail_enabled { "Y" } else { "N" });
        let _ = writeln!(out, "MTBF = {}", self.mtbf);
        let _ = writeln!(out, "Seed = {}", self.seed);
        let _ = writeln!(out, "Scheduler = Horizontal");
        out.push_str("[Stencil]\n");
        let _ = writeln!(out, "BackupCost = {}", self.backup_cost);
        let _ = writeln!(out, "ProcessCost = {}", self.process_cost);
        let _ = writeln!(out, "StencilSize = {}", self.stencil_size);
        let _ = writeln!(out, "Timesteps = {}", self.timesteps);
        if self.log_cost != 0.0 {
            let _ = writeln!(out, "LogCost = {}", self.log_cost);
        }
        if let Some(fc) = self.fetch_cost {
            let _ = writeln!(out, "FetchCost = {}", fc);
        }
        out
    }

    /// Stable short hash of the rendered configuration, used to parameterize
    /// output filenames. FNV-1a, hex-encoded.
    pub fn short_hash(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in self.render().bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")[..8].to_string()
    }

    /// Applies `KEY=VALUE` overrides using the config-file key names.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| ConfigError::MalformedOverride(spec.to_string()))?;
        let key = key.trim();
        let value = value.trim();
        set_key(self, key, value, 0).map_err(|e| match e {
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownOverrideKey(key),
            other => other,
        })
    }
}

fn parse_bool_yn(value: &str, key: &str, line: usize) -> Result<bool, ConfigError> {
    match value {
        "Y" => Ok(true),
        "N" => Ok(false),
        other => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            problem: format!("expected Y or N, got `{other}`"),
        }),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str, line: usize) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        problem: format!("cannot parse `{value}`"),
    })
}

fn set_key(cfg: &mut SimConfig, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
    match key {
        "Kernel" => {
            if value != "Stencil" {
                return Err(ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    problem: format!("unknown kernel `{value}` (only Stencil is supported)"),
                });
            }
            cfg.kernel = KernelKind::Stencil;
        }
        "WorkerCount" => cfg.worker_count = parse_num(value, key, line)?,
        "CheckpointLevel" => cfg.checkpoint_level = parse_num(value, key, line)?,
        "Checkpoint" => cfg.checkpoint_enabled = parse_bool_yn(value, key, line)?,
        "Recovery" => {
            cfg.recovery = match value {
                "Default" => RecoveryStrategy::Default,
                "Dependency" => RecoveryStrategy::Dependency,
                other => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        problem: format!("expected Default or Dependency, got `{other}`"),
                    })
                }
            }
        }
        "Fail" => cfg.fail_enabled = parse_bool_yn(value, key, line)?,
        "MTBF" => cfg.mtbf = parse_num(value, key, line)?,
        "Seed" => cfg.seed = parse_num(value, key, line)?,
        "Scheduler" => {
            if value != "Horizontal" {
                return Err(ConfigError::BadValue {
                    line,
                    key: key.to_string(),
                    problem: format!("unknown scheduler `{value}` (only Horizontal is supported)"),
                });
            }
            cfg.scheduler = SchedulerKind::Horizontal;
        }
        "BackupCost" => cfg.backup_cost = parse_num(value, key, line)?,
        "ProcessCost" => cfg.process_cost = parse_num(value, key, line)?,
        "StencilSize" => cfg.stencil_size = parse_num(value, key, line)?,
        "Timesteps" => cfg.timesteps = parse_num(value, key, line)?,
        "LogCost" => cfg.log_cost = parse_num(value, key, line)?,
        "FetchCost" => cfg.fetch_cost = Some(parse_num(value, key, line)?),
        other => {
            return Err(ConfigError::UnknownKey {
                line,
                key: other.to_string(),
                section: String::new(),
            })
        }
    }
    Ok(())
}

const GENERAL_KEYS: &[&str] = &[
    "Kernel",
    "WorkerCount",
    "CheckpointLevel",
    "Checkpoint",
    "Recovery",
    "Fail",
    "MTBF",
    "Seed",
    "Scheduler",
];
const STENCIL_KEYS: &[&str] = &[
    "BackupCost",
    "ProcessCost",
    "StencilSize",
    "Timesteps",
    "LogCost",
    "FetchCost",
];
const MANDATORY: &[&str] = &[
    "Kernel",
    "WorkerCount",
    "CheckpointLevel",
    "Checkpoint",
    "Recovery",
    "Fail",
    "MTBF",
    "Seed",
    "Scheduler",
    "BackupCost",
    "ProcessCost",
    "StencilSize",
    "Timesteps",
];

/// Parses the INI text. Comments start with `#` or `;`. The result is
/// syntactically complete but not yet validated; call
/// [`SimConfig::validate`] before running.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let mut cfg = SimConfig {
        kernel: KernelKind::Stencil,
        worker_count: 0,
        checkpoint_level: 1,
        checkpoint_enabled: false,
        recovery: RecoveryStrategy::Default,
        fail_enabled: false,
        mtbf: 0.0,
        seed: 0,
        scheduler: SchedulerKind::Horizontal,
        backup_cost: 0.0,
        process_cost: 0.0,
        stencil_size: 0,
        timesteps: 0,
        log_cost: 0.0,
        fetch_cost: None,
    };
    let mut section: Option<String> = None;
    let mut seen: Vec<&'static str> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim();
            match name {
                "GENERAL" | "Stencil" => section = Some(name.to_string()),
                other => {
                    return Err(ConfigError::UnknownSection {
                        line: line_no,
                        section: other.to_string(),
                    })
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line: line_no,
            text: line.to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let section = section
            .as_deref()
            .ok_or(ConfigError::KeyOutsideSection(line_no))?;
        let allowed = match section {
            "GENERAL" => GENERAL_KEYS,
            _ => STENCIL_KEYS,
        };
        if !allowed.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line: line_no,
                key: key.to_string(),
                section: section.to_string(),
            });
        }
        set_key(&mut cfg, key, value, line_no)?;
        if let Some(k) = MANDATORY.iter().find(|k| **k == key) {
            seen.push(k);
        }
    }
    for key in MANDATORY {
        if !seen.contains(key) {
            return Err(ConfigError::MissingKey(key));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// The configuration listing as it appears in the file format docs,
    /// with the placeholders filled in.
    pub fn reference_text() -> &'static str {
        "[GENERAL]\n\
         Kernel= Stencil\n\
         WorkerCount = 128\n\
         CheckpointLevel = 2\n\
         Checkpoint = Y\n\
         Recovery = Default\n\
         Fail = Y\n\
         MTBF = 1800\n\
         Seed = 42\n\
         Scheduler= Horizontal\n\
         [Stencil]\n\
         BackupCost = 0.0013\n\
         ProcessCost = 7.1\n\
         StencilSize =128\n\
         Timesteps = 128\n"
    }

    #[test]
    fn parses_reference_block() {
        let cfg = parse_config(reference_text()).unwrap();
        assert_eq!(cfg.worker_count, 128);
        assert_eq!(cfg.checkpoint_level, 2);
        assert!(cfg.checkpoint_enabled);
        assert_eq!(cfg.recovery, RecoveryStrategy::Default);
        assert!(cfg.fail_enabled);
        assert_eq!(cfg.mtbf, 1800.0);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.backup_cost, 0.0013);
        assert_eq!(cfg.process_cost, 7.1);
        assert_eq!(cfg.stencil_size, 128);
        assert_eq!(cfg.timesteps, 128);
        assert_eq!(cfg.log_cost, 0.0);
        assert_eq!(cfg.effective_fetch_cost(), 0.0013);
        cfg.validate().unwrap();
    }

    #[test]
    fn dependency_recovery_is_selectable() {
        let text = reference_text().replace("Recovery = Default", "Recovery = Dependency");
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.recovery, RecoveryStrategy::Dependency);
    }

    #[test]
    fn invalid_enum_is_rejected_with_line() {
        let text = reference_text().replace("Checkpoint = Y", "Checkpoint = M");
        match parse_config(&text).unwrap_err() {
            ConfigError::BadValue { line, key, .. } => {
                assert_eq!(key, "Checkpoint");
                assert_eq!(line, 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = format!("{}Banana = 3\n", reference_text());
        assert!(matches!(
            parse_config(&text).unwrap_err(),
            ConfigError::UnknownKey { .. }
        ));
    }

    #[test]
    fn missing_mandatory_key_is_rejected() {
        let text = reference_text().replace("Seed = 42\n", "");
        assert_eq!(
            parse_config(&text).unwrap_err(),
            ConfigError::MissingKey("Seed")
        );
    }

    #[test]
    fn keys_are_case_sensitive() {
        let text = reference_text().replace("Seed = 42", "seed = 42");
        assert!(matches!(
            parse_config(&text).unwrap_err(),
            ConfigError::UnknownKey { .. }
        ));
    }

    #[test]
    fn divisibility_is_validated() {
        let mut cfg = parse_config(reference_text()).unwrap();
        cfg.checkpoint_level = 6;
        cfg.validate().unwrap(); // 128 % 64 == 0 and 128 % 32 == 0
        cfg.stencil_size = 100;
        cfg.checkpoint_level = 4;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("100"), "{err}");
    }

    #[test]
    fn single_worker_cannot_form_a_ring() {
        let mut cfg = parse_config(reference_text()).unwrap();
        cfg.worker_count = 1;
        assert!(cfg.validate().is_err());
        // Without resilience features a single worker is fine.
        cfg.checkpoint_enabled = false;
        cfg.fail_enabled = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn render_round_trips() {
        let mut cfg = parse_config(reference_text()).unwrap();
        cfg.log_cost = 0.0001;
        cfg.fetch_cost = Some(0.002);
        let rendered = cfg.render();
        assert_eq!(parse_config(&rendered).unwrap(), cfg);
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut cfg = parse_config(reference_text()).unwrap();
        cfg.apply_override("WorkerCount=64").unwrap();
        cfg.apply_override("Recovery = Dependency").unwrap();
        assert_eq!(cfg.worker_count, 64);
        assert_eq!(cfg.recovery, RecoveryStrategy::Dependency);
        assert!(matches!(
            cfg.apply_override("NotAKey=1").unwrap_err(),
            ConfigError::UnknownOverrideKey(_)
        ));
        assert!(matches!(
            cfg.apply_override("WorkerCount").unwrap_err(),
            ConfigError::MalformedOverride(_)
        ));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = parse_config(reference_text()).unwrap();
        let mut other = cfg.clone();
        assert_eq!(cfg.short_hash(), other.short_hash());
        other.seed = 43;
        assert_ne!(cfg.short_hash(), other.short_hash());
    }
}
