//! Error metrics, per-sample reports and field exports.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dhpo::{predict_grids, DhpoModel};
use crate::error::{Error, Result};
use crate::function_spaces::{sample_modified_grf, FunctionSample, GrfSpec, MODIFIED_GRF_ALPHA};
use crate::nets::{OperatorModel, ParameterNet};
use crate::pde_oracles::{solve_reaction_diffusion, true_hidden_term, FieldGrid, System, SystemParams};
use crate::sysid::{predict_fields, SysidSample};
use crate::{binio, rng, GRID_N};

/// `‖pred − reference‖ / ‖reference‖`.
pub fn relative_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Shape { expected: reference.len(), got: pred.len() });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        num += (p - r) * (p - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((num / den).sqrt())
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub fn summarize(errors: &[f64]) -> Result<Summary> {
    if errors.is_empty() {
        return Err(Error::Domain("cannot summarize an empty error list".into()));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
    Ok(Summary { mean, std: var.sqrt(), count: errors.len() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dhpo,
    Sysid,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Dhpo => "dhpo",
            Task::Sysid => "sysid",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dhpo" => Ok(Task::Dhpo),
            "sysid" => Ok(Task::Sysid),
            other => Err(Error::Validation(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sample_id: usize,
    pub field_rel_l2: f64,
    /// Learned against true hidden term (hidden-physics runs only).
    pub hidden_rel_l2: Option<f64>,
    pub xi_true: Option<f64>,
    pub xi_pred: Option<f64>,
}

impl ReportRow {
    pub fn xi_abs_error(&self) -> Option<f64> {
        Some((self.xi_pred? - self.xi_true?).abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub task: Task,
    pub system: System,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Always `population`: σ divides by the sample count.
    pub std_kind: String,
    pub field_rel_l2: Summary,
    pub hidden_rel_l2: Option<Summary>,
    pub xi_abs_error: Option<Summary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub summary: ReportSummary,
}

#[derive(Serialize, Deserialize)]
struct DhpoCsvRow {
    sample_id: usize,
    field_rel_l2: f64,
    hidden_rel_l2: f64,
}

#[derive(Serialize, Deserialize)]
struct SysidCsvRow {
    sample_id: usize,
    xi_true: f64,
    xi_pred: f64,
    field_rel_l2: f64,
}

impl EvalReport {
    pub fn new(task: Task, system: System, config_hash: String, seeds: Vec<u64>, rows: Vec<ReportRow>) -> Result<Self> {
        let summary = Self::summarize_rows(task, system, config_hash, seeds, &rows)?;
        Ok(Self { rows, summary })
    }

    fn summarize_rows(
        task: Task,
        system: System,
        config_hash: String,
        seeds: Vec<u64>,
        rows: &[ReportRow],
    ) -> Result<ReportSummary> {
        let field: Vec<f64> = rows.iter().map(|r| r.field_rel_l2).collect();
        let hidden: Option<Vec<f64>> = rows.iter().map(|r| r.hidden_rel_l2).collect();
        let xi: Option<Vec<f64>> = rows.iter().map(|r| r.xi_abs_error()).collect();
        Ok(ReportSummary {
            task,
            system,
            config_hash,
            seeds,
            std_kind: "population".into(),
            field_rel_l2: summarize(&field)?,
            hidden_rel_l2: hidden.filter(|_| task == Task::Dhpo).map(|h| summarize(&h)).transpose()?,
            xi_abs_error: xi.filter(|_| task == Task::Sysid).map(|x| summarize(&x)).transpose()?,
        })
    }

    /// Whether the stored summary equals one recomputed from the rows.
    pub fn is_consistent(&self) -> bool {
        let s = &self.summary;
        Self::summarize_rows(s.task, s.system, s.config_hash.clone(), s.seeds.clone(), &self.rows)
            .map(|r| &r == s)
            .unwrap_or(false)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            match self.summary.task {
                Task::Dhpo => w.serialize(DhpoCsvRow {
                    sample_id: r.sample_id,
                    field_rel_l2: r.field_rel_l2,
                    hidden_rel_l2: r.hidden_rel_l2.unwrap_or(f64::NAN),
                })?,
                Task::Sysid => w.serialize(SysidCsvRow {
                    sample_id: r.sample_id,
                    xi_true: r.xi_true.unwrap_or(f64::NAN),
                    xi_pred: r.xi_pred.unwrap_or(f64::NAN),
                    field_rel_l2: r.field_rel_l2,
                })?,
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `<dir>/report.csv` and `<dir>/summary.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        binio::create_dir(dir)?;
        self.write_csv(&dir.join("report.csv"))?;
        binio::write_json(&dir.join("summary.json"), &self.summary)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let summary: ReportSummary = binio::read_json(&dir.join("summary.json"))?;
        let mut r = csv::Reader::from_path(dir.join("report.csv"))?;
        let rows = match summary.task {
            Task::Dhpo => r
                .deserialize::<DhpoCsvRow>()
                .map(|row| {
                    let row = row?;
                    Ok(ReportRow {
                        sample_id: row.sample_id,
                        field_rel_l2: row.field_rel_l2,
                        hidden_rel_l2: Some(row.hidden_rel_l2),
                        xi_true: None,
                        xi_pred: None,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            Task::Sysid => r
                .deserialize::<SysidCsvRow>()
                .map(|row| {
                    let row = row?;
                    Ok(ReportRow {
                        sample_id: row.sample_id,
                        field_rel_l2: row.field_rel_l2,
                        hidden_rel_l2: None,
                        xi_true: Some(row.xi_true),
                        xi_pred: Some(row.xi_pred),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self { rows, summary })
    }
}

/// A held-out hidden-physics sample.
pub struct DhpoTestCase<'a> {
    pub id: usize,
    pub input: &'a FunctionSample,
    pub field: &'a FieldGrid,
}

const EVAL_CHUNK: usize = 16;

/// Relative L2 of `u` over the full grid and of the learned `N` against the
/// finite-difference right-hand side.
pub fn evaluate_dhpo(
    model: &DhpoModel,
    cases: &[DhpoTestCase<'_>],
    config_hash: String,
    seeds: Vec<u64>,
) -> Result<EvalReport> {
    let system = cases.first().map(|c| c.field.system).ok_or_else(|| Error::Domain("no test samples".into()))?;
    let mut rows = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(EVAL_CHUNK) {
        let inputs: Vec<&FunctionSample> = chunk.iter().map(|c| c.input).collect();
        let preds = predict_grids(model, &inputs, chunk[0].field.dt)?;
        for (c, p) in chunk.iter().zip(preds) {
            let hidden = true_hidden_term(c.field, c.field.params, c.field.system);
            rows.push(ReportRow {
                sample_id: c.id,
                field_rel_l2: relative_l2(&p.u, &c.field.values)?,
                hidden_rel_l2: Some(relative_l2(&p.hidden, &hidden.values)?),
                xi_true: None,
                xi_pred: None,
            });
        }
    }
    EvalReport::new(Task::Dhpo, system, config_hash, seeds, rows)
}

/// A held-out identification sample.
pub struct SysidTestCase<'a> {
    pub id: usize,
    pub sample: &'a SysidSample,
    pub field: &'a FieldGrid,
}

pub fn evaluate_sysid(
    model: &OperatorModel,
    pnet: &ParameterNet,
    cases: &[SysidTestCase<'_>],
    config_hash: String,
    seeds: Vec<u64>,
) -> Result<EvalReport> {
    let system = cases.first().map(|c| c.field.system).ok_or_else(|| Error::Domain("no test samples".into()))?;
    let m = model.sensor_count();
    let mut rows = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(EVAL_CHUNK) {
        let mut s = Array2::zeros((chunk.len(), m));
        for (i, c) in chunk.iter().enumerate() {
            if c.sample.sensors.len() != m {
                return Err(Error::Validation(format!(
                    "sample {} has {} sensors, model expects {m}",
                    c.id,
                    c.sample.sensors.len()
                )));
            }
            s.row_mut(i).assign(&ndarray::ArrayView1::from(&c.sample.sensors));
        }
        let fields = predict_fields(model, s.view(), chunk[0].field.dt)?;
        for (i, c) in chunk.iter().enumerate() {
            let pred = fields.row(i);
            rows.push(ReportRow {
                sample_id: c.id,
                field_rel_l2: relative_l2(pred.as_slice().unwrap(), &c.field.values)?,
                hidden_rel_l2: None,
                xi_true: Some(c.sample.xi),
                xi_pred: Some(pnet.predict(&c.sample.sensors)?),
            });
        }
    }
    EvalReport::new(Task::Sysid, system, config_hash, seeds, rows)
}

/// Reference, prediction and absolute error for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Triptych {
    pub sample_id: usize,
    pub reference: Vec<f64>,
    pub prediction: Vec<f64>,
    pub rel_l2: f64,
    pub sensors: Option<Vec<(f64, f64)>>,
    pub title: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriptychMeta {
    pub sample_id: usize,
    /// `[3, nx, nt]`: reference, prediction, absolute error.
    pub shape: [usize; 3],
    pub layout: String,
    pub panels: [String; 3],
    pub rel_l2: f64,
    pub title: String,
    pub x: [f64; 2],
    pub t: [f64; 2],
    pub sensors: Option<Vec<(f64, f64)>>,
    pub data_file: String,
}

impl Triptych {
    pub fn new(
        sample_id: usize,
        reference: Vec<f64>,
        prediction: Vec<f64>,
        sensors: Option<Vec<(f64, f64)>>,
        title: impl Into<String>,
    ) -> Result<Self> {
        let n = GRID_N * GRID_N;
        for v in [&reference, &prediction] {
            if v.len() != n {
                return Err(Error::Shape { expected: n, got: v.len() });
            }
        }
        let rel_l2 = relative_l2(&prediction, &reference)?;
        Ok(Self { sample_id, reference, prediction, rel_l2, sensors, title: title.into() })
    }

    pub fn abs_error(&self) -> Vec<f64> {
        self.reference.iter().zip(&self.prediction).map(|(r, p)| (r - p).abs()).collect()
    }

    /// Writes `triptych-<id>.bin` (three row-major grids) and
    /// `triptych-<id>.json`; returns the JSON path.
    pub fn save(&self, dir: &Path, t_max: f64) -> Result<PathBuf> {
        binio::create_dir(dir)?;
        let stem = format!("triptych-{}", self.sample_id);
        let mut data = Vec::with_capacity(3 * GRID_N * GRID_N);
        data.extend_from_slice(&self.reference);
        data.extend_from_slice(&self.prediction);
        data.extend(self.abs_error());
        binio::write(&dir.join(format!("{stem}.bin")), &data)?;
        let meta = TriptychMeta {
            sample_id: self.sample_id,
            shape: [3, GRID_N, GRID_N],
            layout: "panel, x index, t index; little-endian f64".into(),
            panels: ["reference".into(), "prediction".into(), "absolute error".into()],
            rel_l2: self.rel_l2,
            title: self.title.clone(),
            x: [0.0, 1.0],
            t: [0.0, t_max],
            sensors: self.sensors.clone(),
            data_file: format!("{stem}.bin"),
        };
        let json = dir.join(format!("{stem}.json"));
        binio::write_json(&json, &meta)?;
        Ok(json)
    }

    pub fn load(json: &Path) -> Result<Self> {
        let meta: TriptychMeta = binio::read_json(json)?;
        if meta.shape != [3, GRID_N, GRID_N] {
            return Err(Error::Validation(format!("unexpected triptych shape {:?}", meta.shape)));
        }
        let dir = json.parent().unwrap_or(Path::new("."));
        let data = binio::read(&dir.join(&meta.data_file), 3 * GRID_N * GRID_N)?;
        let n = GRID_N * GRID_N;
        let t = Self::new(meta.sample_id, data[..n].to_vec(), data[n..2 * n].to_vec(), meta.sensors, meta.title)?;
        let stored_err = &data[2 * n..];
        if t.abs_error().iter().zip(stored_err).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::Validation("stored absolute error disagrees with the panels".into()));
        }
        Ok(t)
    }
}

/// Triptychs for hidden-physics test cases.
pub fn dhpo_triptychs(model: &DhpoModel, cases: &[DhpoTestCase<'_>]) -> Result<Vec<Triptych>> {
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(EVAL_CHUNK) {
        let inputs: Vec<&FunctionSample> = chunk.iter().map(|c| c.input).collect();
        let preds = predict_grids(model, &inputs, chunk[0].field.dt)?;
        for (c, p) in chunk.iter().zip(preds) {
            out.push(Triptych::new(c.id, c.field.values.clone(), p.u, None, format!("sample {}", c.id))?);
        }
    }
    Ok(out)
}

/// Triptychs for identification test cases, with the sensor locations
/// attached for overlay.
pub fn sysid_triptychs(
    model: &OperatorModel,
    pnet: &ParameterNet,
    cases: &[SysidTestCase<'_>],
    sensors: &[(f64, f64)],
) -> Result<Vec<Triptych>> {
    let m = model.sensor_count();
    let mut out = Vec::with_capacity(cases.len());
    for c in cases {
        let s = Array2::from_shape_vec((1, m), c.sample.sensors.clone())
            .map_err(|_| Error::Shape { expected: m, got: c.sample.sensors.len() })?;
        let fields = predict_fields(model, s.view(), c.field.dt)?;
        let xi = pnet.predict(&c.sample.sensors)?;
        let title = format!("sample {}: true {:.5}, predicted {:.5}", c.id, c.sample.xi, xi);
        out.push(Triptych::new(c.id, c.field.values.clone(), fields.row(0).to_vec(), Some(sensors.to_vec()), title)?);
    }
    Ok(out)
}

/// Length scales of the out-of-distribution study on modified GRF sources.
pub const LENGTH_SCALE_SWEEP: [f64; 5] = [0.1, 0.15, 0.2, 0.4, 0.6];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthScaleRow {
    pub length_scale: f64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Evaluate a reaction–diffusion model on fresh modified-GRF test sets, one
/// per length scale.
pub fn length_scale_study(
    model: &DhpoModel,
    params: SystemParams,
    length_scales: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<LengthScaleRow>> {
    let mut out = Vec::with_capacity(length_scales.len());
    for (k, &l) in length_scales.iter().enumerate() {
        let mut inputs = Vec::with_capacity(n_samples);
        let mut fields = Vec::with_capacity(n_samples);
        for s in 0..n_samples {
            let f = sample_modified_grf(rng::derive(seed, "length_scale", (k * n_samples + s) as u64), GrfSpec::new(l), MODIFIED_GRF_ALPHA)?;
            fields.push(solve_reaction_diffusion(&f, params)?);
            inputs.push(f);
        }
        let cases: Vec<DhpoTestCase> = inputs
            .iter()
            .zip(&fields)
            .enumerate()
            .map(|(id, (input, field))| DhpoTestCase { id, input, field })
            .collect();
        let report = evaluate_dhpo(model, &cases, String::new(), vec![seed])?;
        let s = report.summary.field_rel_l2;
        out.push(LengthScaleRow { length_scale: l, mean: s.mean, std: s.std, count: s.count });
    }
    Ok(out)
}

pub fn write_length_scale_csv(path: &Path, rows: &[LengthScaleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
