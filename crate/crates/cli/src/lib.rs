//! Experiment orchestration behind the `hpo` binary.
//!
//! Everything a run produces lives under one output directory:
//!
//! ```text
//! <out>/config.json            resolved experiment config
//! <out>/manifest.json          dataset manifest
//! <out>/fields.bin             reference solutions, 101×101 f64 each
//! <out>/inputs.bin             input functions, 101 f64 each
//! <out>/sensors.json           labeled nodes or sensor layout
//! <out>/checkpoints/step-<k>/  periodic and final checkpoints
//! <out>/reports/               loss traces, evaluation report, triptychs
//! ```

use std::path::{Path, PathBuf};

use hpo_core::{Error, ExperimentConfig, Result, System, Task};

pub mod checkpoints;
pub mod evaluate;
pub mod export;
pub mod sweep;
pub mod train;

pub use checkpoints::Trained;
pub use evaluate::{cmd_evaluate, EvaluateOptions};
pub use export::{cmd_export, ExportIndex};
pub use sweep::{cmd_sweep, SweepOptions, SweepRow};
pub use train::{cmd_train, train, TrainOptions, TrainOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_numerical() => EXIT_DIVERGENCE,
        Error::Validation(_) | Error::Precondition(_) | Error::Shape { .. } | Error::Domain(_) => EXIT_VALIDATION,
        _ => EXIT_FAILURE,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Full,
}

impl std::str::FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Validation(format!("unknown scale `{s}` (expected desk or full)"))),
        }
    }
}

pub const CONFIG_FILE: &str = "config.json";

/// Build a config from an explicit file, or from the built-in defaults for a
/// system/task pair. `seed` re-derives every seed when given.
pub fn resolve_config(
    file: Option<&Path>,
    system: Option<System>,
    task: Option<Task>,
    scale: Scale,
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut c = match (file, system, task) {
        (Some(path), _, _) => ExperimentConfig::load(path)?,
        (None, Some(system), Some(task)) => match scale {
            Scale::Desk => ExperimentConfig::desk(system, task, 0),
            Scale::Full => ExperimentConfig::defaults(system, task, 0),
        },
        _ => return Err(Error::Validation("pass --config, or both --system and --task".into())),
    };
    if file.is_some() && (system.is_some_and(|s| s != c.system) || task.is_some_and(|t| t != c.task)) {
        return Err(Error::Validation("--system/--task disagree with the config file".into()));
    }
    if let Some(seed) = seed {
        c.reseed(seed);
    }
    c.validate()?;
    Ok(c)
}

/// The config of an existing run directory unless one is given explicitly.
pub fn run_config(out: &Path, file: Option<&Path>) -> Result<ExperimentConfig> {
    let path = file.map(Path::to_path_buf).unwrap_or_else(|| out.join(CONFIG_FILE));
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "{} not found; run `hpo generate` first or pass --config",
            path.display()
        )));
    }
    ExperimentConfig::load(&path)
}

pub fn reports_dir(out: &Path) -> PathBuf {
    out.join("reports")
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// Generate the dataset for `config` into `out` and record the config next
/// to it.
pub fn cmd_generate(config: &ExperimentConfig, out: &Path, force: bool) -> Result<hpo_core::Dataset> {
    let data = hpo_core::Dataset::generate(config)?;
    data.save(out, force)?;
    config.save(&out.join(CONFIG_FILE))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Validation("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::Precondition("x".into())), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::NonFiniteLoss { step: 3, snapshot: String::new() }), EXIT_DIVERGENCE);
        assert_eq!(exit_code(&Error::Divergence { step: 3, magnitude: 1e300 }), EXIT_DIVERGENCE);
        let io = io_err(Path::new("x"), std::io::Error::other("boom"));
        assert_eq!(exit_code(&io), EXIT_FAILURE);
    }

    #[test]
    fn resolve_defaults_and_seed() {
        let a = resolve_config(None, Some(System::Rd), Some(Task::Dhpo), Scale::Desk, Some(7)).unwrap();
        assert_eq!(a, {
            let mut c = ExperimentConfig::desk(System::Rd, Task::Dhpo, 0);
            c.reseed(7);
            c
        });
        let full = resolve_config(None, Some(System::Rd), Some(Task::Dhpo), Scale::Full, None).unwrap();
        assert_eq!(full.dhpo().unwrap().model.n_train, ExperimentConfig::defaults(System::Rd, Task::Dhpo, 0).dhpo().unwrap().model.n_train);
        assert!(resolve_config(None, Some(System::Rd), None, Scale::Desk, None).is_err());
    }

    #[test]
    fn file_config_must_agree_with_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        ExperimentConfig::desk(System::Burgers, Task::Sysid, 3).save(&p).unwrap();
        let c = resolve_config(Some(&p), None, None, Scale::Desk, None).unwrap();
        assert_eq!(c.seed, 3);
        let e = resolve_config(Some(&p), Some(System::Rd), None, Scale::Desk, None).unwrap_err();
        assert_eq!(exit_code(&e), EXIT_VALIDATION);
    }
}
