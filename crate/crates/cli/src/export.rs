//! Plot-ready artifacts: a flat directory with an index the renderer can
//! read without touching the dataset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hpo_core::dataset::SensorFile;
use hpo_core::{binio, Error, EvalReport, Result, Triptych};

use crate::evaluate::TRIPTYCH_DIR;
use crate::train::{TRACE_DHPO, TRACE_STAGE1, TRACE_STAGE2};
use crate::{io_err, reports_dir};

pub const INDEX_FILE: &str = "index.json";
pub const SENSORS_FILE: &str = "sensors.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportIndex {
    pub task: String,
    pub system: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Per-sample errors, one row per test sample.
    pub report: String,
    /// Mean and population std of the errors.
    pub summary: String,
    /// Loss traces with columns `iteration, L_ic, L_bc, L_eqn, L_data, L_total`.
    pub loss_traces: Vec<String>,
    /// Triptych JSON descriptors.
    pub triptychs: Vec<String>,
    /// `(x, t)` sensor locations, for identification runs.
    pub sensors: Option<String>,
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| io_err(from, e))
}

/// Collect the evaluated run in `out` into `dest` (default `<out>/plots`).
pub fn cmd_export(out: &Path, dest: Option<&Path>) -> Result<ExportIndex> {
    let reports = reports_dir(out);
    if !reports.join("summary.json").exists() {
        return Err(Error::Precondition(format!("no report in {}; run `hpo evaluate` first", reports.display())));
    }
    let report = EvalReport::load(&reports)?;
    if !report.is_consistent() {
        return Err(Error::Validation("report summary disagrees with its rows".into()));
    }
    let dest: PathBuf = dest.map(Path::to_path_buf).unwrap_or_else(|| out.join("plots"));
    binio::create_dir(&dest)?;

    report.save(&dest)?;
    let mut loss_traces = Vec::new();
    for name in [TRACE_DHPO, TRACE_STAGE1, TRACE_STAGE2] {
        let src = reports.join(name);
        if src.exists() {
            copy(&src, &dest.join(name))?;
            loss_traces.push(name.to_string());
        }
    }

    let mut triptychs = Vec::new();
    let src_dir = reports.join(TRIPTYCH_DIR);
    if src_dir.exists() {
        let mut jsons: Vec<PathBuf> = fs::read_dir(&src_dir)
            .map_err(|e| io_err(&src_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        jsons.sort();
        let t_dir = dest.join(TRIPTYCH_DIR);
        for json in jsons {
            // reload so a corrupt bundle is caught here rather than in the renderer
            let t = Triptych::load(&json)?;
            let meta: hpo_core::eval::TriptychMeta = binio::read_json(&json)?;
            let saved = t.save(&t_dir, meta.t[1])?;
            triptychs.push(format!("{TRIPTYCH_DIR}/{}", saved.file_name().unwrap().to_string_lossy()));
        }
    }

    let sensors = match binio::read_json::<SensorFile>(&out.join("sensors.json")) {
        Ok(SensorFile::Sysid { layout, .. }) => {
            binio::write_json(&dest.join(SENSORS_FILE), &layout.coords())?;
            Some(SENSORS_FILE.to_string())
        }
        _ => None,
    };

    let s = &report.summary;
    let index = ExportIndex {
        task: s.task.name().into(),
        system: s.system.name().into(),
        config_hash: s.config_hash.clone(),
        seeds: s.seeds.clone(),
        report: "report.csv".into(),
        summary: "summary.json".into(),
        loss_traces,
        triptychs,
        sensors,
    };
    binio::write_json(&dest.join(INDEX_FILE), &index)?;
    Ok(index)
}
