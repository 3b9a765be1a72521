//! Checkpoint directories: a JSON manifest plus one little-endian `f64` blob
//! per parameter group.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/branch.bin
//! <dir>/trunk.bin
//! <dir>/aux.bin        (hidden-physics or parameter network, optional)
//! <dir>/adam_m.bin     (optimizer state, optional)
//! <dir>/adam_v.bin
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Mlp, MlpSpec, OperatorModel};
use crate::binio;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub file: String,
    pub len: usize,
    pub spec: MlpSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub step: u64,
    pub len: usize,
    pub m_file: String,
    pub v_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    pub latent_width: usize,
    pub bias: f64,
    pub activations: Vec<(String, String)>,
    pub groups: Vec<GroupEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    pub model: OperatorModel,
    pub aux: Option<Mlp>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::create_dir(dir)?;
        let mut groups = Vec::new();
        let mut activations = Vec::new();
        let mut nets: Vec<(&str, &Mlp)> =
            vec![("branch", &self.model.branch), ("trunk", &self.model.trunk)];
        if let Some(aux) = &self.aux {
            nets.push(("aux", aux));
        }
        for (name, net) in nets {
            let file = format!("{name}.bin");
            binio::write(&dir.join(&file), net.params())?;
            activations.push((name.to_string(), net.spec().activation.name().to_string()));
            groups.push(GroupEntry {
                name: name.to_string(),
                file,
                len: net.num_params(),
                spec: net.spec().clone(),
            });
        }
        let optimizer = match &self.optimizer {
            Some(st) => {
                binio::write(&dir.join("adam_m.bin"), &st.m)?;
                binio::write(&dir.join("adam_v.bin"), &st.v)?;
                Some(OptimizerEntry {
                    step: st.step,
                    len: st.m.len(),
                    m_file: "adam_m.bin".into(),
                    v_file: "adam_v.bin".into(),
                })
            }
            None => None,
        };
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            step: self.step,
            latent_width: self.model.latent_width(),
            bias: self.model.bias,
            activations,
            groups,
            optimizer,
        };
        binio::write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::Precondition(format!("no checkpoint at {}", dir.display())));
        }
        let manifest: CheckpointManifest = binio::read_json(&path)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format {}",
                manifest.format_version
            )));
        }
        let load_group = |name: &str| -> Result<Option<Mlp>> {
            let Some(entry) = manifest.groups.iter().find(|g| g.name == name) else {
                return Ok(None);
            };
            if entry.len != entry.spec.num_params() {
                return Err(Error::Validation(format!(
                    "group {name}: manifest length {} does not match spec {:?}",
                    entry.len, entry.spec.widths
                )));
            }
            let params = binio::read(&dir.join(&entry.file), entry.len)?;
            Mlp::from_params(entry.spec.clone(), params).map(Some)
        };
        let missing = |name: &str| Error::Validation(format!("checkpoint lacks group {name}"));
        let branch = load_group("branch")?.ok_or_else(|| missing("branch"))?;
        let trunk = load_group("trunk")?.ok_or_else(|| missing("trunk"))?;
        let aux = load_group("aux")?;
        let model = OperatorModel::from_parts(branch, trunk, manifest.bias)?;
        if model.latent_width() != manifest.latent_width {
            return Err(Error::Validation("latent width does not match the networks".into()));
        }
        let optimizer = match &manifest.optimizer {
            Some(o) => Some(OptimizerState {
                step: o.step,
                m: binio::read(&dir.join(&o.m_file), o.len)?,
                v: binio::read(&dir.join(&o.v_file), o.len)?,
            }),
            None => None,
        };
        Ok(Checkpoint {
            kind: manifest.kind,
            config_hash: manifest.config_hash,
            seed: manifest.seed,
            step: manifest.step,
            model,
            aux,
            optimizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, OperatorSpec};

    #[test]
    fn save_and_load() {
        let spec = OperatorSpec {
            branch: MlpSpec::new(&[5, 4, 3], Activation::Relu, 1),
            trunk: MlpSpec::new(&[2, 4, 3], Activation::Tanh, 2),
        };
        let mut model = OperatorModel::new(&spec).unwrap();
        model.bias = 0.125;
        let aux = Mlp::new(MlpSpec::new(&[3, 4, 1], Activation::Tanh, 3)).unwrap();
        let n = model.num_params() + aux.num_params();
        let ck = Checkpoint {
            kind: "dhpo".into(),
            config_hash: "abc".into(),
            seed: 9,
            step: 1000,
            model,
            aux: Some(aux),
            optimizer: Some(OptimizerState { step: 1000, m: vec![0.5; n], v: vec![0.25; n] }),
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
        let len = std::fs::metadata(dir.path().join("trunk.bin")).unwrap().len();
        assert_eq!(len as usize, ck.model.trunk.num_params() * 8);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let spec = OperatorSpec {
            branch: MlpSpec::new(&[2, 2], Activation::Tanh, 1),
            trunk: MlpSpec::new(&[2, 2], Activation::Tanh, 2),
        };
        let ck = Checkpoint {
            kind: "x".into(),
            config_hash: String::new(),
            seed: 0,
            step: 0,
            model: OperatorModel::new(&spec).unwrap(),
            aux: None,
            optimizer: None,
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        std::fs::write(dir.path().join("branch.bin"), [0u8; 8]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Validation(_))));
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing")),
            Err(Error::Precondition(_))
        ));
    }
}
