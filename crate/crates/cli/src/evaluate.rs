use std::path::{Path, PathBuf};

use hpo_core::eval::{
    dhpo_triptychs, evaluate_dhpo, evaluate_sysid, length_scale_study, sysid_triptychs, write_length_scale_csv,
    LENGTH_SCALE_SWEEP,
};
use hpo_core::{Dataset, Error, EvalReport, ExperimentConfig, Result, Split, System, Triptych};

use crate::checkpoints::{self, Trained};
use crate::{reports_dir, run_config};

pub const TRIPTYCH_DIR: &str = "triptychs";
pub const LENGTH_SCALE_FILE: &str = "length_scales.csv";

#[derive(Clone, Debug, Default)]
pub struct EvaluateOptions {
    /// Defaults to the newest checkpoint of the run.
    pub checkpoint: Option<PathBuf>,
    /// Test samples exported as triptychs.
    pub triptychs: usize,
    /// Samples per length scale for the GRF-source study; 0 skips it.
    pub length_scale_samples: usize,
}

/// Score `trained` on the test split.
pub fn evaluate(data: &Dataset, trained: &Trained, config_hash: String, seeds: Vec<u64>) -> Result<EvalReport> {
    match trained {
        Trained::Dhpo(model) => evaluate_dhpo(model, &data.dhpo_test(), config_hash, seeds),
        Trained::Sysid { model, pnet } => {
            let samples = data.sysid_samples(Split::Test)?;
            evaluate_sysid(model, pnet, &data.sysid_cases(&samples), config_hash, seeds)
        }
    }
}

/// Triptychs for the first `n` test samples.
pub fn triptychs(data: &Dataset, trained: &Trained, n: usize) -> Result<Vec<Triptych>> {
    match trained {
        Trained::Dhpo(model) => {
            let cases = data.dhpo_test();
            dhpo_triptychs(model, &cases[..n.min(cases.len())])
        }
        Trained::Sysid { model, pnet } => {
            let mut samples = data.sysid_samples(Split::Test)?;
            samples.truncate(n);
            sysid_triptychs(model, pnet, &data.sysid_cases(&samples), &data.layout()?.coords())
        }
    }
}

/// Evaluate a checkpoint of the run in `out`; writes `report.csv`,
/// `summary.json` and triptychs under `<out>/reports/`.
pub fn cmd_evaluate(out: &Path, config: Option<&Path>, opts: &EvaluateOptions) -> Result<EvalReport> {
    let c = run_config(out, config)?;
    let data = Dataset::load(out)?;
    data.check_matches(&c)?;
    let dir = match &opts.checkpoint {
        Some(d) => d.clone(),
        None => checkpoints::latest(out)?
            .map(|(_, d)| d)
            .ok_or_else(|| Error::Precondition(format!("no checkpoint in {}; run `hpo train` first", out.display())))?,
    };
    let saved = checkpoints::load(&dir)?;
    let hash = saved.checkpoint.config_hash.clone();
    let seeds = vec![data.manifest.seed, saved.checkpoint.seed];
    let trained = Trained::from_checkpoint(saved.checkpoint, &c)?;

    let report = evaluate(&data, &trained, hash, seeds)?;
    let reports = reports_dir(out);
    report.save(&reports)?;
    let t_max = data.manifest.grid.dt * (data.manifest.grid.nt - 1) as f64;
    for t in triptychs(&data, &trained, opts.triptychs)? {
        t.save(&reports.join(TRIPTYCH_DIR), t_max)?;
    }
    if opts.length_scale_samples > 0 {
        length_scales(&c, &trained, opts.length_scale_samples, &reports.join(LENGTH_SCALE_FILE))?;
    }
    Ok(report)
}

fn length_scales(c: &ExperimentConfig, trained: &Trained, n: usize, path: &Path) -> Result<()> {
    let Trained::Dhpo(model) = trained else {
        return Err(Error::Validation("the length-scale study applies to hidden-physics models".into()));
    };
    if c.system != System::Rd {
        return Err(Error::Validation("the length-scale study uses reaction-diffusion sources".into()));
    }
    let rows = length_scale_study(model, c.dhpo()?.data.params, &LENGTH_SCALE_SWEEP, n, c.seed)?;
    write_length_scale_csv(path, &rows)
}
