//! Experiment configuration and its content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dhpo::DhpoConfig;
use crate::error::{Error, Result};
use crate::eval::Task;
use crate::function_spaces::{FunctionFamily, GrfSpec, MODIFIED_GRF_ALPHA};
use crate::pde_oracles::{SolverOptions, System, SystemParams};
use crate::sysid::SysidConfig;
use crate::{binio, rng};

pub const SCHEMA_VERSION: u32 = 1;

/// How hidden-physics inputs are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhpoData {
    pub train_family: FunctionFamily,
    pub test_family: FunctionFamily,
    /// Number of sine modes.
    pub n_frequencies: usize,
    pub grf: GrfSpec,
    pub alpha: f64,
    pub params: SystemParams,
}

impl DhpoData {
    pub fn defaults(system: System) -> Self {
        match system {
            System::Rd => Self {
                train_family: FunctionFamily::Sine,
                test_family: FunctionFamily::Sine,
                n_frequencies: 5,
                grf: GrfSpec::new(0.2),
                alpha: MODIFIED_GRF_ALPHA,
                params: SystemParams::rd(0.01, 0.01),
            },
            System::Burgers => Self {
                train_family: FunctionFamily::Grf,
                test_family: FunctionFamily::Grf,
                n_frequencies: 5,
                grf: GrfSpec::new(0.2),
                alpha: MODIFIED_GRF_ALPHA,
                params: SystemParams::burgers(0.01),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DhpoExperiment {
    pub model: DhpoConfig,
    pub data: DhpoData,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: System,
    pub task: Task,
    pub seed: u64,
    pub solver: SolverOptions,
    pub checkpoint_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dhpo: Option<DhpoExperiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sysid: Option<SysidConfig>,
}

impl ExperimentConfig {
    /// Full-scale defaults.
    pub fn defaults(system: System, task: Task, seed: u64) -> Self {
        let mut c = Self {
            schema_version: SCHEMA_VERSION,
            system,
            task,
            seed,
            solver: SolverOptions::default(),
            checkpoint_every: 1000,
            dhpo: None,
            sysid: None,
        };
        match task {
            Task::Dhpo => {
                c.dhpo = Some(DhpoExperiment {
                    model: DhpoConfig::defaults(system, seed),
                    data: DhpoData::defaults(system),
                })
            }
            Task::Sysid => c.sysid = Some(SysidConfig::defaults(system, seed)),
        }
        c
    }

    /// Reduced scale that trains on one CPU core in minutes to an hour.
    pub fn desk(system: System, task: Task, seed: u64) -> Self {
        let mut c = Self::defaults(system, task, seed);
        if let Some(d) = &mut c.dhpo {
            d.model.n_train = 100;
            d.model.n_test = 50;
            d.model.n_d = 200;
        }
        if task == Task::Sysid {
            c.sysid = Some(SysidConfig::desk(system, seed));
        }
        c
    }

    /// Replace the master seed and every seed derived from it.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        let s = |name: &str| rng::derive(seed, name, 0);
        if let Some(d) = &mut self.dhpo {
            d.model.seed = seed;
            d.model.branch.seed = s("branch");
            d.model.trunk.seed = s("trunk");
            d.model.hidden.seed = s("hidden");
        }
        if let Some(c) = &mut self.sysid {
            c.seed = seed;
            c.branch.seed = s("branch");
            c.trunk.seed = s("trunk");
            c.parameter_net.seed = s("parameter_net");
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Validation(format!(
                "config schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Validation("checkpoint_every must be positive".into()));
        }
        if !(self.solver.output_dt > 0.0) || self.solver.substeps == 0 {
            return Err(Error::Validation("solver output_dt and substeps must be positive".into()));
        }
        match (self.task, &self.dhpo, &self.sysid) {
            (Task::Dhpo, Some(d), None) => {
                if d.model.system != self.system {
                    return Err(Error::Validation("dhpo section targets a different system".into()));
                }
                d.model.validate()?;
                if d.data.n_frequencies == 0 {
                    return Err(Error::Validation("n_frequencies must be positive".into()));
                }
                if !(d.data.grf.length_scale > 0.0) {
                    return Err(Error::Validation("GRF length scale must be positive".into()));
                }
                Ok(())
            }
            (Task::Sysid, None, Some(s)) => {
                if s.system != self.system {
                    return Err(Error::Validation("sysid section targets a different system".into()));
                }
                s.validate()
            }
            _ => Err(Error::Validation(format!(
                "a {} config needs exactly the `{}` section",
                self.task.name(),
                self.task.name()
            ))),
        }
    }

    /// SHA-256 of the serialized config, as lowercase hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = binio::read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_json(path, self)
    }

    pub fn dhpo(&self) -> Result<&DhpoExperiment> {
        self.dhpo.as_ref().ok_or_else(|| Error::Validation("config has no dhpo section".into()))
    }

    pub fn sysid(&self) -> Result<&SysidConfig> {
        self.sysid.as_ref().ok_or_else(|| Error::Validation("config has no sysid section".into()))
    }
}
