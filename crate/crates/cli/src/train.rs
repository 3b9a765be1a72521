use std::fs;
use std::path::Path;

use hpo_core::dhpo::write_trace_csv;
use hpo_core::{
    Dataset, DhpoTrainer, Error, ExperimentConfig, Result, Split, StopReason, SysidSample, SysidTrainer, Task,
    TraceRow,
};

use crate::checkpoints::{self, expect_kind, snapshot, step_dir, Saved, Trained, KIND_DHPO, KIND_STAGE1, KIND_STAGE2};
use crate::{io_err, reports_dir, run_config};

/// Steps per stage in dry-run mode.
pub const DRY_RUN_STEPS: usize = 10;

pub const TRACE_DHPO: &str = "loss_trace.csv";
pub const TRACE_STAGE1: &str = "loss_trace_stage1.csv";
pub const TRACE_STAGE2: &str = "loss_trace_stage2.csv";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// A few steps, nothing written.
    pub dry_run: bool,
    /// Continue from the newest checkpoint.
    pub resume: bool,
    /// Discard existing checkpoints.
    pub force: bool,
    /// Progress line every this many steps; 0 is silent.
    pub log_every: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trained: Trained,
    /// Steps taken in total over all stages.
    pub steps: usize,
    pub stop: StopReason,
    pub final_loss: f64,
}

/// Load the dataset in `out`, train, and write checkpoints plus loss traces
/// there.
pub fn cmd_train(out: &Path, config: Option<&Path>, seed: Option<u64>, opts: &TrainOptions) -> Result<TrainOutcome> {
    let mut c = run_config(out, config)?;
    if let Some(seed) = seed {
        c.reseed(seed);
    }
    let data = Dataset::load(out)?;
    data.check_matches(&c)?;
    train(&c, &data, Some(out), opts)
}

/// Train on an in-memory dataset. Checkpoints and traces go to `out` unless
/// it is `None` or this is a dry run.
pub fn train(c: &ExperimentConfig, data: &Dataset, out: Option<&Path>, opts: &TrainOptions) -> Result<TrainOutcome> {
    data.check_matches(c)?;
    let persist = if opts.dry_run { None } else { out };
    let mut resume = None;
    if let Some(out) = persist {
        let found = checkpoints::latest(out)?;
        if opts.force {
            let dir = checkpoints::checkpoints_dir(out);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            }
        } else if opts.resume {
            resume = found.map(|(_, dir)| checkpoints::load(&dir)).transpose()?;
        } else if let Some((k, _)) = found {
            return Err(Error::Precondition(format!(
                "{} already holds checkpoints up to step {k}; pass --resume to continue or --force to restart",
                out.display()
            )));
        }
    }
    match c.task {
        Task::Dhpo => train_dhpo(c, data, persist, resume, opts),
        Task::Sysid => train_sysid(c, data, persist, resume, opts),
    }
}

fn log(opts: &TrainOptions, label: &str, k: usize, until: usize, row: Option<&TraceRow>) {
    if opts.log_every == 0 || !k.is_multiple_of(opts.log_every) {
        return;
    }
    if let Some(r) = row {
        eprintln!(
            "{label} step {k}/{until}  total {:.3e}  ic {:.3e}  bc {:.3e}  eqn {:.3e}  data {:.3e}",
            r.total, r.ic, r.bc, r.eqn, r.data
        );
    }
}

fn write_trace(out: &Path, name: &str, rows: &[TraceRow]) -> Result<()> {
    let dir = reports_dir(out);
    hpo_core::binio::create_dir(&dir)?;
    write_trace_csv(&dir.join(name), rows)
}

fn train_dhpo(
    c: &ExperimentConfig,
    data: &Dataset,
    persist: Option<&Path>,
    resume: Option<Saved>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let mc = c.dhpo()?.model.clone();
    let samples = data.dhpo_train()?;
    let mut trainer = match resume {
        Some(Saved { mut checkpoint, trace }) => {
            expect_kind(&checkpoint, &[KIND_DHPO])?;
            let opt = checkpoints::optimizer(&mut checkpoint)?;
            let model = checkpoints::dhpo_model(checkpoint.model, checkpoint.aux, c)?;
            DhpoTrainer::resume(mc.clone(), &samples, model, opt.m, opt.v, opt.step, trace)?
        }
        None => DhpoTrainer::new(mc.clone(), &samples)?,
    };
    let until = if opts.dry_run { trainer.step() + DRY_RUN_STEPS } else { mc.iterations };
    let every = c.checkpoint_every;
    let save = |out: &Path, t: &DhpoTrainer| {
        let m = t.model();
        let ck = snapshot(KIND_DHPO, c, t.step(), &m.operator, Some(&m.hidden.mlp), t.store());
        checkpoints::save(&step_dir(out, t.step()), &ck, t.trace())
    };
    let stop = trainer.run(until, |t| {
        log(opts, "dhpo", t.step(), until, t.trace().last());
        match persist {
            Some(out) if t.step() % every == 0 => save(out, t),
            _ => Ok(()),
        }
    })?;
    if let Some(out) = persist {
        if trainer.step() % every != 0 {
            save(out, &trainer)?;
        }
        write_trace(out, TRACE_DHPO, trainer.trace())?;
    }
    let steps = trainer.step();
    let final_loss = trainer.trace().last().map_or(f64::NAN, |r| r.total);
    let (model, _) = trainer.into_parts();
    Ok(TrainOutcome { trained: Trained::Dhpo(model), steps, stop, final_loss })
}

/// Stage 1 checkpoints are numbered `1..=S1`, stage 2 continues at `S1 + k`.
fn train_sysid(
    c: &ExperimentConfig,
    data: &Dataset,
    persist: Option<&Path>,
    resume: Option<Saved>,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let sc = c.sysid()?.clone();
    let layout = data.layout()?;
    let samples: Vec<SysidSample> = data.sysid_samples(Split::Train)?.into_iter().map(|(_, s)| s).collect();
    let (s1, s2) = if opts.dry_run {
        (DRY_RUN_STEPS, DRY_RUN_STEPS)
    } else {
        (sc.stage1_iterations, sc.stage2_iterations)
    };
    let every = c.checkpoint_every;

    let mut stage2_resume = None;
    let mut stage1 = None;
    match resume {
        Some(s) if s.checkpoint.kind == KIND_STAGE2 => stage2_resume = Some(s),
        Some(Saved { mut checkpoint, trace }) => {
            expect_kind(&checkpoint, &[KIND_STAGE1])?;
            let opt = checkpoints::optimizer(&mut checkpoint)?;
            let mut t = SysidTrainer::stage1_with_model(sc.clone(), layout, &samples, checkpoint.model)?;
            t.restore(opt.m, opt.v, opt.step, trace)?;
            stage1 = Some(t);
        }
        None => stage1 = Some(SysidTrainer::stage1(sc.clone(), layout, &samples)?),
    }

    let save = |out: &Path, t: &SysidTrainer, kind: &str, global: usize| {
        let ck = snapshot(kind, c, global, t.model(), t.parameter_net().map(|p| &p.mlp), t.store());
        checkpoints::save(&step_dir(out, global), &ck, t.trace())
    };

    let mut stage2 = match stage2_resume {
        Some(Saved { mut checkpoint, trace }) => {
            let opt = checkpoints::optimizer(&mut checkpoint)?;
            let (model, pnet) = checkpoints::sysid_model(checkpoint.model, checkpoint.aux, c)?;
            let mut t = SysidTrainer::stage2(sc.clone(), layout, &samples, model, Some(pnet))?;
            t.restore(opt.m, opt.v, opt.step, trace)?;
            t
        }
        None => {
            let mut t1 = stage1.take().expect("stage 1 trainer exists without a stage-2 checkpoint");
            t1.run(s1, |t| {
                log(opts, "stage1", t.step(), s1, t.trace().last());
                match persist {
                    Some(out) if t.step() % every == 0 => save(out, t, KIND_STAGE1, t.step()),
                    _ => Ok(()),
                }
            })?;
            if let Some(out) = persist {
                if t1.step() % every != 0 {
                    save(out, &t1, KIND_STAGE1, t1.step())?;
                }
                write_trace(out, TRACE_STAGE1, t1.trace())?;
            }
            let (warm, _, _) = t1.into_parts();
            SysidTrainer::stage2(sc.clone(), layout, &samples, warm, None)?
        }
    };

    stage2.run(s2, |t| {
        log(opts, "stage2", t.step(), s2, t.trace().last());
        match persist {
            Some(out) if t.step() % every == 0 => save(out, t, KIND_STAGE2, s1 + t.step()),
            _ => Ok(()),
        }
    })?;
    if let Some(out) = persist {
        if stage2.step() % every != 0 {
            save(out, &stage2, KIND_STAGE2, s1 + stage2.step())?;
        }
        write_trace(out, TRACE_STAGE2, stage2.trace())?;
    }
    let steps = s1 + stage2.step();
    let final_loss = stage2.trace().last().map_or(f64::NAN, |r| r.total);
    let (model, pnet, _) = stage2.into_parts();
    let pnet = pnet.expect("stage 2 carries a parameter network");
    Ok(TrainOutcome { trained: Trained::Sysid { model, pnet }, steps, stop: StopReason::Budget, final_loss })
}
