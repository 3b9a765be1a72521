//! Dataset generation and on-disk layout.
//!
//! ```text
//! <dir>/manifest.json   counts, grid, samplers, per-sample metadata
//! <dir>/fields.bin      one 101×101 field per sample, x-major, LE f64
//! <dir>/inputs.bin      one 101-point input function per sample
//! <dir>/sensors.json    label nodes (hidden physics) or sensor layout (identification)
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dhpo::{label_nodes, labels_at, DhpoSample};
use crate::error::{Error, Result};
use crate::eval::{DhpoTestCase, SysidTestCase, Task};
use crate::function_spaces::{sample_sine, sensor_grid, FunctionFamily, FunctionSample, GrfSampler, GrfSpec};
use crate::pde_oracles::{solve, FieldGrid, System, SystemParams};
use crate::sysid::{SensorLayout, SysidSample};
use crate::{binio, rng, GRID_DX, GRID_N};

pub const FORMAT_VERSION: u32 = 1;
const FIELD_LEN: usize = GRID_N * GRID_N;
const INPUT_LEN: usize = GRID_N;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: usize,
    pub split: Split,
    pub family: FunctionFamily,
    pub input_seed: u64,
    pub params: SystemParams,
    /// Offsets in f64 units into `fields.bin` / `inputs.bin`.
    pub field_offset: usize,
    pub input_offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub nx: usize,
    pub nt: usize,
    pub dx: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub values_per_sample: usize,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub task: Task,
    pub system: System,
    pub config_hash: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub grid: GridInfo,
    /// Input-function families with their sampler settings.
    pub samplers: serde_json::Value,
    pub fields: BlobInfo,
    pub inputs: BlobInfo,
    pub sensors_file: String,
    pub samples: Vec<SampleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SensorFile {
    /// Labeled nodes of each training sample, indexed like the train split.
    Dhpo {
        input_abscissae: Vec<f64>,
        n_d: usize,
        labels: Vec<Vec<(usize, usize)>>,
    },
    Sysid {
        input_abscissae: Vec<f64>,
        layout: SensorLayout,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub inputs: Vec<FunctionSample>,
    pub fields: Vec<FieldGrid>,
    pub sensors: SensorFile,
}

struct InputSampler {
    family: FunctionFamily,
    n_frequencies: usize,
    grf: Option<GrfSampler>,
    alpha: f64,
}

impl InputSampler {
    fn new(family: FunctionFamily, n_frequencies: usize, grf: GrfSpec, alpha: f64) -> Result<Self> {
        let grf = match family {
            FunctionFamily::Sine => None,
            _ => Some(GrfSampler::new(grf)?),
        };
        Ok(Self { family, n_frequencies, grf, alpha })
    }

    fn sample(&self, seed: u64) -> Result<FunctionSample> {
        match (self.family, &self.grf) {
            (FunctionFamily::Sine, _) => sample_sine(seed, self.n_frequencies),
            (FunctionFamily::Grf, Some(g)) => Ok(g.sample(seed)),
            (FunctionFamily::ModifiedGrf, Some(g)) => g.sample_modified(seed, self.alpha),
            _ => unreachable!("GRF sampler is built for GRF families"),
        }
    }
}

/// Burgers initial conditions are stored with matching endpoints, as the
/// solver sees them.
fn periodic_input(system: System, mut f: FunctionSample) -> FunctionSample {
    if system == System::Burgers {
        let n = f.values.len() - 1;
        let avg = 0.5 * (f.values[0] + f.values[n]);
        f.values[0] = avg;
        f.values[n] = avg;
    }
    f
}

impl Dataset {
    /// Generate every field the config describes. Pure in the config.
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        match config.task {
            Task::Dhpo => Self::generate_dhpo(config),
            Task::Sysid => Self::generate_sysid(config),
        }
    }

    fn generate_dhpo(config: &ExperimentConfig) -> Result<Self> {
        let exp = config.dhpo()?;
        let (m, d) = (&exp.model, &exp.data);
        let train = InputSampler::new(d.train_family, d.n_frequencies, d.grf, d.alpha)?;
        let test = InputSampler::new(d.test_family, d.n_frequencies, d.grf, d.alpha)?;
        let mut entries = Vec::new();
        let mut inputs = Vec::new();
        let mut fields = Vec::new();
        let mut labels = Vec::new();
        for id in 0..m.n_train + m.n_test {
            let (split, sampler) = if id < m.n_train { (Split::Train, &train) } else { (Split::Test, &test) };
            let input_seed = rng::derive(config.seed, "input", id as u64);
            let f = periodic_input(config.system, sampler.sample(input_seed)?);
            let field = solve(config.system, &f, d.params, config.solver)?;
            if split == Split::Train {
                labels.push(label_nodes(m.n_d, rng::derive(config.seed, "labels", id as u64))?);
            }
            entries.push(SampleEntry {
                id,
                split,
                family: sampler.family,
                input_seed,
                params: d.params,
                field_offset: id * FIELD_LEN,
                input_offset: id * INPUT_LEN,
            });
            inputs.push(f);
            fields.push(field);
        }
        let samplers = serde_json::json!({
            "train_family": d.train_family,
            "test_family": d.test_family,
            "n_frequencies": d.n_frequencies,
            "grf": d.grf,
            "alpha": d.alpha,
        });
        let sensors = SensorFile::Dhpo { input_abscissae: sensor_grid(GRID_N), n_d: m.n_d, labels };
        Ok(Self::assemble(config, m.n_train, m.n_test, samplers, entries, inputs, fields, sensors))
    }

    fn generate_sysid(config: &ExperimentConfig) -> Result<Self> {
        let c = config.sysid()?;
        let sampler = InputSampler::new(FunctionFamily::Grf, 0, c.grf, 0.0)?;
        let total = c.n_values * c.n_functions;
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng::stream(config.seed, "split", 0));
        let mut split = vec![Split::Test; total];
        for &k in &order[..c.n_train] {
            split[k] = Split::Train;
        }
        let mut entries = Vec::with_capacity(total);
        let mut inputs = Vec::with_capacity(total);
        let mut fields = Vec::with_capacity(total);
        for (v, &xi) in c.parameter_values().iter().enumerate() {
            let params = match config.system {
                System::Rd => SystemParams::rd(xi, c.reaction),
                System::Burgers => SystemParams::burgers(xi),
            };
            for f_idx in 0..c.n_functions {
                let id = v * c.n_functions + f_idx;
                let input_seed = rng::derive(config.seed, "input", id as u64);
                let f = periodic_input(config.system, sampler.sample(input_seed)?);
                fields.push(solve(config.system, &f, params, config.solver)?);
                entries.push(SampleEntry {
                    id,
                    split: split[id],
                    family: FunctionFamily::Grf,
                    input_seed,
                    params,
                    field_offset: id * FIELD_LEN,
                    input_offset: id * INPUT_LEN,
                });
                inputs.push(f);
            }
        }
        let layout = SensorLayout::random(c.n_sensors, rng::derive(config.seed, "layout", 0), config.solver.output_dt)?;
        let samplers = serde_json::json!({
            "family": FunctionFamily::Grf,
            "grf": c.grf,
            "param_range": c.param_range,
            "n_values": c.n_values,
            "n_functions": c.n_functions,
        });
        let sensors = SensorFile::Sysid { input_abscissae: sensor_grid(GRID_N), layout };
        Ok(Self::assemble(config, c.n_train, c.n_test, samplers, entries, inputs, fields, sensors))
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: &ExperimentConfig,
        n_train: usize,
        n_test: usize,
        samplers: serde_json::Value,
        samples: Vec<SampleEntry>,
        inputs: Vec<FunctionSample>,
        fields: Vec<FieldGrid>,
        sensors: SensorFile,
    ) -> Self {
        let n = samples.len() as u64;
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            task: config.task,
            system: config.system,
            config_hash: config.hash(),
            seed: config.seed,
            n_train,
            n_test,
            grid: GridInfo { nx: GRID_N, nt: GRID_N, dx: GRID_DX, dt: config.solver.output_dt },
            samplers,
            fields: BlobInfo { file: "fields.bin".into(), values_per_sample: FIELD_LEN, bytes: n * FIELD_LEN as u64 * 8 },
            inputs: BlobInfo { file: "inputs.bin".into(), values_per_sample: INPUT_LEN, bytes: n * INPUT_LEN as u64 * 8 },
            sensors_file: "sensors.json".into(),
            samples,
        };
        Self { manifest, inputs, fields, sensors }
    }

    /// Write the dataset. An existing non-empty directory is refused unless
    /// `force` is set.
    pub fn save(&self, dir: &Path, force: bool) -> Result<()> {
        if dir.join("manifest.json").exists() && !force {
            return Err(Error::Validation(format!(
                "{} already holds a dataset; pass --force to overwrite",
                dir.display()
            )));
        }
        binio::create_dir(dir)?;
        let fields: Vec<f64> = self.fields.iter().flat_map(|f| f.values.iter().copied()).collect();
        let inputs: Vec<f64> = self.inputs.iter().flat_map(|f| f.values.iter().copied()).collect();
        binio::write(&dir.join(&self.manifest.fields.file), &fields)?;
        binio::write(&dir.join(&self.manifest.inputs.file), &inputs)?;
        binio::write_json(&dir.join(&self.manifest.sensors_file), &self.sensors)?;
        binio::write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::Precondition(format!("no dataset manifest in {}", dir.display())));
        }
        let manifest: DatasetManifest = binio::read_json(&manifest_path)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!("dataset format {} is not supported", manifest.format_version)));
        }
        let n = manifest.samples.len();
        if n != manifest.n_train + manifest.n_test {
            return Err(Error::Validation("sample table disagrees with split counts".into()));
        }
        for blob in [&manifest.fields, &manifest.inputs] {
            let path = dir.join(&blob.file);
            let len = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
            if len != blob.bytes || blob.bytes != (n * blob.values_per_sample * 8) as u64 {
                return Err(Error::Validation(format!(
                    "{} holds {len} bytes, manifest declares {} for {n} samples",
                    blob.file, blob.bytes
                )));
            }
        }
        if manifest.fields.values_per_sample != FIELD_LEN || manifest.inputs.values_per_sample != INPUT_LEN {
            return Err(Error::Validation("unexpected grid size in manifest".into()));
        }
        let raw_fields = binio::read(&dir.join(&manifest.fields.file), n * FIELD_LEN)?;
        let raw_inputs = binio::read(&dir.join(&manifest.inputs.file), n * INPUT_LEN)?;
        let sensors: SensorFile = binio::read_json(&dir.join(&manifest.sensors_file))?;
        let mut fields = Vec::with_capacity(n);
        let mut inputs = Vec::with_capacity(n);
        for e in &manifest.samples {
            let end = e.field_offset + FIELD_LEN;
            if end > raw_fields.len() || e.input_offset + INPUT_LEN > raw_inputs.len() {
                return Err(Error::Validation(format!("sample {} points outside the blobs", e.id)));
            }
            let mut grid = FieldGrid::zeros(manifest.system, e.params, manifest.grid.dt);
            grid.values.copy_from_slice(&raw_fields[e.field_offset..end]);
            if grid.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("sample {} has non-finite values", e.id)));
            }
            fields.push(grid);
            inputs.push(FunctionSample::new(
                raw_inputs[e.input_offset..e.input_offset + INPUT_LEN].to_vec(),
                e.family,
                e.input_seed,
            ));
        }
        let d = Self { manifest, inputs, fields, sensors };
        if let SensorFile::Dhpo { labels, .. } = &d.sensors {
            if labels.len() != d.manifest.n_train {
                return Err(Error::Validation("label table does not cover the train split".into()));
            }
        }
        Ok(d)
    }

    /// Refuse to train or evaluate with a dataset built for something else.
    pub fn check_matches(&self, config: &ExperimentConfig) -> Result<()> {
        let m = &self.manifest;
        if m.task != config.task || m.system != config.system {
            return Err(Error::Validation(format!(
                "dataset is {} {}, config asks for {} {}",
                m.task.name(),
                m.system.name(),
                config.task.name(),
                config.system.name()
            )));
        }
        let (n_train, n_test) = match config.task {
            Task::Dhpo => {
                let d = config.dhpo()?;
                if let SensorFile::Dhpo { n_d, .. } = &self.sensors {
                    if *n_d != d.model.n_d {
                        return Err(Error::Validation(format!("dataset has n_d = {n_d}, config {}", d.model.n_d)));
                    }
                }
                (d.model.n_train, d.model.n_test)
            }
            Task::Sysid => {
                let s = config.sysid()?;
                if self.layout()?.len() != s.n_sensors {
                    return Err(Error::Validation("sensor count differs from config".into()));
                }
                (s.n_train, s.n_test)
            }
        };
        if (n_train, n_test) != (m.n_train, m.n_test) {
            return Err(Error::Validation(format!(
                "dataset split {}/{} differs from config {n_train}/{n_test}",
                m.n_train, m.n_test
            )));
        }
        Ok(())
    }

    pub fn ids(&self, split: Split) -> Vec<usize> {
        self.manifest.samples.iter().filter(|e| e.split == split).map(|e| e.id).collect()
    }

    pub fn layout(&self) -> Result<&SensorLayout> {
        match &self.sensors {
            SensorFile::Sysid { layout, .. } => Ok(layout),
            SensorFile::Dhpo { .. } => Err(Error::Validation("dataset has no sensor layout".into())),
        }
    }

    /// Training samples with their labeled points.
    pub fn dhpo_train(&self) -> Result<Vec<DhpoSample>> {
        let SensorFile::Dhpo { labels, .. } = &self.sensors else {
            return Err(Error::Validation("not a hidden-physics dataset".into()));
        };
        Ok(self
            .ids(Split::Train)
            .into_iter()
            .zip(labels)
            .map(|(id, nodes)| DhpoSample { input: self.inputs[id].clone(), labels: labels_at(&self.fields[id], nodes) })
            .collect())
    }

    pub fn dhpo_test(&self) -> Vec<DhpoTestCase<'_>> {
        self.ids(Split::Test)
            .into_iter()
            .map(|id| DhpoTestCase { id, input: &self.inputs[id], field: &self.fields[id] })
            .collect()
    }

    pub fn sysid_samples(&self, split: Split) -> Result<Vec<(usize, SysidSample)>> {
        let layout = self.layout()?;
        Ok(self
            .ids(split)
            .into_iter()
            .map(|id| {
                let field = &self.fields[id];
                let sample = SysidSample {
                    sensors: layout.read(field),
                    source: (self.manifest.system == System::Rd).then(|| self.inputs[id].clone()),
                    xi: field.params.identified(self.manifest.system),
                };
                (id, sample)
            })
            .collect())
    }

    pub fn sysid_cases<'a>(&'a self, samples: &'a [(usize, SysidSample)]) -> Vec<SysidTestCase<'a>> {
        samples.iter().map(|(id, s)| SysidTestCase { id: *id, sample: s, field: &self.fields[*id] }).collect()
    }
}
