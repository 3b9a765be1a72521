//! Checkpoint directories with their loss traces, and conversion back into
//! trained models.

use std::fs;
use std::path::{Path, PathBuf};

use hpo_core::dhpo::{read_trace_csv, write_trace_csv};
use hpo_core::nets::checkpoint::OptimizerState;
use hpo_core::{
    Checkpoint, DhpoModel, Error, ExperimentConfig, HiddenPhysicsNet, OperatorModel, ParameterNet, Result, Task,
    TraceRow,
};

use crate::io_err;

pub const KIND_DHPO: &str = "dhpo";
pub const KIND_STAGE1: &str = "sysid-stage1";
pub const KIND_STAGE2: &str = "sysid-stage2";
const TRACE_FILE: &str = "trace.csv";

pub fn checkpoints_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

pub fn step_dir(out: &Path, step: usize) -> PathBuf {
    checkpoints_dir(out).join(format!("step-{step}"))
}

/// The highest-numbered complete checkpoint, if any.
pub fn latest(out: &Path) -> Result<Option<(usize, PathBuf)>> {
    let dir = checkpoints_dir(out);
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(&dir).map_err(|e| io_err(&dir, e))? {
        let path = entry.map_err(|e| io_err(&dir, e))?.path();
        let Some(k) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.parse::<usize>().ok())
        else {
            continue;
        };
        if path.join("manifest.json").exists() && path.join(TRACE_FILE).exists() && best.as_ref().is_none_or(|b| k > b.0) {
            best = Some((k, path));
        }
    }
    Ok(best)
}

pub struct Saved {
    pub checkpoint: Checkpoint,
    pub trace: Vec<TraceRow>,
}

/// Writes into a sibling directory first and renames, so an interrupted save
/// never leaves a half-written checkpoint behind.
pub fn save(dir: &Path, checkpoint: &Checkpoint, trace: &[TraceRow]) -> Result<()> {
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| io_err(&tmp, e))?;
    }
    checkpoint.save(&tmp)?;
    write_trace_csv(&tmp.join(TRACE_FILE), trace)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| io_err(dir, e))
}

pub fn load(dir: &Path) -> Result<Saved> {
    let checkpoint = Checkpoint::load(dir)?;
    let trace = read_trace_csv(&dir.join(TRACE_FILE))?;
    Ok(Saved { checkpoint, trace })
}

pub(crate) fn snapshot(
    kind: &str,
    config: &ExperimentConfig,
    step: usize,
    model: &OperatorModel,
    aux: Option<&hpo_core::Mlp>,
    store: &hpo_core::autodiff::ParamStore,
) -> Checkpoint {
    let (m, v) = store.moments();
    Checkpoint {
        kind: kind.into(),
        config_hash: config.hash(),
        seed: config.seed,
        step: step as u64,
        model: model.clone(),
        aux: aux.cloned(),
        optimizer: Some(OptimizerState { step: store.step(), m: m.to_vec(), v: v.to_vec() }),
    }
}

pub(crate) fn expect_kind(c: &Checkpoint, kinds: &[&str]) -> Result<()> {
    if kinds.contains(&c.kind.as_str()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("checkpoint holds a `{}` model, expected {}", c.kind, kinds.join(" or "))))
    }
}

/// A model ready for evaluation.
#[derive(Clone, Debug)]
pub enum Trained {
    Dhpo(DhpoModel),
    Sysid { model: OperatorModel, pnet: ParameterNet },
}

impl Trained {
    /// Rebuild from a final checkpoint, checking it fits the config.
    pub fn from_checkpoint(c: Checkpoint, config: &ExperimentConfig) -> Result<Self> {
        match config.task {
            Task::Dhpo => {
                expect_kind(&c, &[KIND_DHPO])?;
                Ok(Trained::Dhpo(dhpo_model(c.model, c.aux, config)?))
            }
            Task::Sysid => {
                expect_kind(&c, &[KIND_STAGE2])?;
                let (model, pnet) = sysid_model(c.model, c.aux, config)?;
                Ok(Trained::Sysid { model, pnet })
            }
        }
    }
}

pub(crate) fn dhpo_model(operator: OperatorModel, aux: Option<hpo_core::Mlp>, config: &ExperimentConfig) -> Result<DhpoModel> {
    let mc = &config.dhpo()?.model;
    let aux = aux.ok_or_else(|| Error::Validation("checkpoint has no hidden-physics network".into()))?;
    if operator.spec() != mc.operator_spec() || *aux.spec() != mc.hidden {
        return Err(Error::Validation("checkpoint architecture differs from the config".into()));
    }
    Ok(DhpoModel { operator, hidden: HiddenPhysicsNet::from_mlp(aux)? })
}

pub(crate) fn sysid_model(
    operator: OperatorModel,
    aux: Option<hpo_core::Mlp>,
    config: &ExperimentConfig,
) -> Result<(OperatorModel, ParameterNet)> {
    let sc = config.sysid()?;
    let aux = aux.ok_or_else(|| Error::Validation("checkpoint has no parameter network".into()))?;
    if operator.spec() != sc.operator_spec() || *aux.spec() != sc.parameter_net {
        return Err(Error::Validation("checkpoint architecture differs from the config".into()));
    }
    Ok((operator, ParameterNet::from_mlp(aux)?))
}

pub(crate) fn optimizer(c: &mut Checkpoint) -> Result<OptimizerState> {
    c.optimizer.take().ok_or_else(|| Error::Validation("checkpoint has no optimizer state to resume from".into()))
}
