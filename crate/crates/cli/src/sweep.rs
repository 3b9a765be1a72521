//! Train and evaluate over a grid of training-set sizes and label counts.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use hpo_core::{Dataset, Error, ExperimentConfig, Result, Task};

use crate::evaluate::evaluate;
use crate::train::{train, TrainOptions};
use crate::{io_err, reports_dir, CONFIG_FILE};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    pub n_train: Vec<usize>,
    pub n_d: Vec<usize>,
    /// Cells run concurrently.
    pub jobs: usize,
    pub dry_run: bool,
    pub force: bool,
    pub log_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_train: usize,
    pub n_d: usize,
    pub status: String,
    pub steps: Option<usize>,
    pub field_mean: Option<f64>,
    pub field_std: Option<f64>,
    pub hidden_mean: Option<f64>,
    pub hidden_std: Option<f64>,
    pub count: Option<usize>,
    pub error: String,
}

impl SweepRow {
    fn failed(n_train: usize, n_d: usize, e: &Error) -> Self {
        Self {
            n_train,
            n_d,
            status: "failed".into(),
            steps: None,
            field_mean: None,
            field_std: None,
            hidden_mean: None,
            hidden_std: None,
            count: None,
            error: e.to_string(),
        }
    }
}

pub fn cell_name(n_train: usize, n_d: usize) -> String {
    format!("ntrain-{n_train}-nd-{n_d}")
}

fn run_cell(base: &ExperimentConfig, n_train: usize, n_d: usize, out: &Path, opts: &SweepOptions) -> Result<SweepRow> {
    let mut c = base.clone();
    let d = c.dhpo.as_mut().ok_or_else(|| Error::Validation("sweeps need a dhpo config".into()))?;
    d.model.n_train = n_train;
    d.model.n_d = n_d;
    c.validate()?;

    let dir = out.join("cells").join(cell_name(n_train, n_d));
    let data = Dataset::generate(&c)?;
    if !opts.dry_run {
        data.save(&dir, opts.force)?;
        c.save(&dir.join(CONFIG_FILE))?;
    }
    let topts = TrainOptions { dry_run: opts.dry_run, resume: false, force: opts.force, log_every: opts.log_every };
    let outcome = train(&c, &data, Some(&dir), &topts)?;
    let report = evaluate(&data, &outcome.trained, c.hash(), vec![c.seed])?;
    if !opts.dry_run {
        report.save(&reports_dir(&dir))?;
    }
    let s = &report.summary;
    Ok(SweepRow {
        n_train,
        n_d,
        status: "ok".into(),
        steps: Some(outcome.steps),
        field_mean: Some(s.field_rel_l2.mean),
        field_std: Some(s.field_rel_l2.std),
        hidden_mean: s.hidden_rel_l2.map(|h| h.mean),
        hidden_std: s.hidden_rel_l2.map(|h| h.std),
        count: Some(s.field_rel_l2.count),
        error: String::new(),
    })
}

/// One row per grid cell, in grid order. A failing cell is recorded and the
/// sweep carries on.
pub fn cmd_sweep(base: &ExperimentConfig, out: &Path, opts: &SweepOptions) -> Result<Vec<SweepRow>> {
    if base.task != Task::Dhpo {
        return Err(Error::Validation("sweeps vary n_train and n_d of a dhpo config".into()));
    }
    if opts.n_train.is_empty() || opts.n_d.is_empty() {
        return Err(Error::Validation("sweep grid is empty".into()));
    }
    let cells: Vec<(usize, usize)> =
        opts.n_train.iter().flat_map(|&a| opts.n_d.iter().map(move |&b| (a, b))).collect();
    let rows = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let jobs = opts.jobs.clamp(1, cells.len());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(nt, nd)) = cells.get(i) else { break };
                let row = run_cell(base, nt, nd, out, opts).unwrap_or_else(|e| {
                    eprintln!("cell n_train={nt} n_d={nd} failed: {e}");
                    SweepRow::failed(nt, nd, &e)
                });
                rows.lock().unwrap()[i] = Some(row);
            });
        }
    });
    let rows: Vec<SweepRow> = rows.into_inner().unwrap().into_iter().map(|r| r.expect("every cell ran")).collect();

    hpo_core::binio::create_dir(out)?;
    let path = out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    Ok(rows)
}
