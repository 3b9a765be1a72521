use std::fs;
use std::path::Path;
use std::process::Command;

use hpo_cli::checkpoints::{latest, step_dir};
use hpo_cli::{
    cmd_evaluate, cmd_export, cmd_generate, cmd_sweep, cmd_train, exit_code, EvaluateOptions, SweepOptions,
    TrainOptions, EXIT_DIVERGENCE, EXIT_VALIDATION,
};
use hpo_core::dhpo::read_trace_csv;
use hpo_core::{Activation, ExperimentConfig, MlpSpec, System, Task, Triptych};

fn tiny_dhpo() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk(System::Rd, Task::Dhpo, 11);
    c.checkpoint_every = 10;
    let m = &mut c.dhpo.as_mut().unwrap().model;
    m.n_train = 4;
    m.n_test = 2;
    m.n_d = 20;
    m.n_coll = 30;
    m.n_ic = 10;
    m.n_bc = 10;
    m.batch_size = 2;
    m.iterations = 30;
    m.branch = MlpSpec::new(&[101, 8, 6], Activation::Tanh, 1);
    m.trunk = MlpSpec::new(&[2, 8, 6], Activation::Tanh, 2);
    m.hidden = MlpSpec::new(&[3, 8, 1], Activation::Tanh, 3);
    c
}

fn tiny_sysid() -> ExperimentConfig {
    let mut c = ExperimentConfig::desk(System::Burgers, Task::Sysid, 12);
    c.checkpoint_every = 10;
    let s = c.sysid.as_mut().unwrap();
    s.n_values = 4;
    s.n_functions = 2;
    s.n_train = 6;
    s.n_test = 2;
    s.n_sensors = 20;
    s.n_coll = 30;
    s.batch_size = 3;
    s.stage1_iterations = 15;
    s.stage2_iterations = 12;
    s.branch = MlpSpec::new(&[20, 8, 6], Activation::Tanh, 1);
    s.trunk = MlpSpec::new(&[2, 8, 6], Activation::Tanh, 2);
    s.parameter_net = MlpSpec::new(&[20, 8, 1], Activation::Tanh, 3);
    c
}

fn hpo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hpo")).args(args).output().unwrap()
}

fn quiet() -> TrainOptions {
    TrainOptions::default()
}

#[test]
fn generate_refuses_existing_and_regenerates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let c = tiny_dhpo();
    cmd_generate(&c, out, false).unwrap();
    for f in ["manifest.json", "fields.bin", "inputs.bin", "sensors.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    assert_eq!(fs::metadata(out.join("fields.bin")).unwrap().len(), 6 * 101 * 101 * 8);
    let first = fs::read(out.join("fields.bin")).unwrap();

    let e = cmd_generate(&c, out, false).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_VALIDATION);
    cmd_generate(&c, out, true).unwrap();
    assert_eq!(fs::read(out.join("fields.bin")).unwrap(), first);
}

#[test]
fn train_checkpoints_resume_evaluate_export() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let c = tiny_dhpo();
    cmd_generate(&c, out, false).unwrap();

    let dry = cmd_train(out, None, None, &TrainOptions { dry_run: true, ..quiet() }).unwrap();
    assert_eq!(dry.steps, 10);
    assert!(latest(out).unwrap().is_none());

    // interrupted at 20 steps, then resumed to 30
    let mut short = c.clone();
    short.dhpo.as_mut().unwrap().model.iterations = 20;
    short.save(&out.join("config.json")).unwrap();
    cmd_train(out, None, None, &quiet()).unwrap();
    assert_eq!(latest(out).unwrap().unwrap().0, 20);
    c.save(&out.join("config.json")).unwrap();
    let e = cmd_train(out, None, None, &quiet()).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_VALIDATION);
    cmd_train(out, None, None, &TrainOptions { resume: true, ..quiet() }).unwrap();
    for k in [10, 20, 30] {
        assert!(step_dir(out, k).join("manifest.json").exists());
    }
    let resumed = read_trace_csv(&out.join("reports/loss_trace.csv")).unwrap();
    assert_eq!(resumed.len(), 30);

    let fresh = tempfile::tempdir().unwrap();
    cmd_generate(&c, fresh.path(), false).unwrap();
    cmd_train(fresh.path(), None, None, &quiet()).unwrap();
    let straight = read_trace_csv(&fresh.path().join("reports/loss_trace.csv")).unwrap();
    for (a, b) in resumed.iter().zip(&straight) {
        assert!((a.total - b.total).abs() <= 1e-10 * b.total.abs().max(1.0), "{a:?} vs {b:?}");
    }

    let opts = EvaluateOptions { triptychs: 2, ..Default::default() };
    let r1 = cmd_evaluate(out, None, &opts).unwrap();
    let csv1 = fs::read(out.join("reports/report.csv")).unwrap();
    let r2 = cmd_evaluate(out, None, &opts).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(fs::read(out.join("reports/report.csv")).unwrap(), csv1);
    assert!(r1.is_consistent());
    assert_eq!(r1.rows.len(), 2);
    assert_eq!(r1.summary.config_hash, c.hash());

    let idx = cmd_export(out, None).unwrap();
    assert_eq!(idx.triptychs.len(), 2);
    assert_eq!(idx.loss_traces, vec!["loss_trace.csv".to_string()]);
    assert!(idx.sensors.is_none());
    let t = Triptych::load(&out.join("plots").join(&idx.triptychs[0])).unwrap();
    assert_eq!(t.reference.len(), 101 * 101);
    let bin = out.join("plots/triptychs").join(format!("triptych-{}.bin", t.sample_id));
    assert_eq!(fs::metadata(bin).unwrap().len(), 3 * 101 * 101 * 8);
}

#[test]
fn sysid_pipeline_exports_sensor_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let c = tiny_sysid();
    cmd_generate(&c, out, false).unwrap();
    let o = cmd_train(out, None, None, &quiet()).unwrap();
    assert_eq!(o.steps, 27);
    // stage-1 checkpoints at 10 and 15, stage-2 at 25 and 27
    for k in [10, 15, 25, 27] {
        assert!(step_dir(out, k).join("manifest.json").exists(), "step {k}");
    }
    assert_eq!(read_trace_csv(&out.join("reports/loss_trace_stage1.csv")).unwrap().len(), 15);
    assert_eq!(read_trace_csv(&out.join("reports/loss_trace_stage2.csv")).unwrap().len(), 12);

    let r = cmd_evaluate(out, None, &EvaluateOptions { triptychs: 1, ..Default::default() }).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.summary.xi_abs_error.is_some());
    let idx = cmd_export(out, None).unwrap();
    let sensors: Vec<(f64, f64)> =
        serde_json::from_slice(&fs::read(out.join("plots").join(idx.sensors.unwrap())).unwrap()).unwrap();
    assert_eq!(sensors.len(), 20);
    let t = Triptych::load(&out.join("plots").join(&idx.triptychs[0])).unwrap();
    assert_eq!(t.sensors.unwrap().len(), 20);
}

#[test]
fn sysid_resume_from_stage_one_checkpoint() {
    let c = tiny_sysid();
    let run = |interrupt: bool| {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_path_buf();
        cmd_generate(&c, &out, false).unwrap();
        cmd_train(&out, None, None, &quiet()).unwrap();
        if interrupt {
            // pretend the run died right after the first stage-1 checkpoint
            for k in [15, 25, 27] {
                fs::remove_dir_all(step_dir(&out, k)).unwrap();
            }
            fs::remove_dir_all(out.join("reports")).unwrap();
            cmd_train(&out, None, None, &TrainOptions { resume: true, ..quiet() }).unwrap();
        }
        let t = read_trace_csv(&out.join("reports/loss_trace_stage2.csv")).unwrap();
        (dir, t)
    };
    let (_a, straight) = run(false);
    let (_b, resumed) = run(true);
    assert_eq!(straight.len(), resumed.len());
    for (a, b) in straight.iter().zip(&resumed) {
        assert!((a.total - b.total).abs() <= 1e-10 * a.total.abs().max(1.0));
    }
}

#[test]
fn sweep_records_each_cell_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SweepOptions { n_train: vec![1, 4], n_d: vec![20], jobs: 2, dry_run: true, ..Default::default() };
    let rows = cmd_sweep(&tiny_dhpo(), dir.path(), &opts).unwrap();
    assert_eq!(rows.len(), 2);
    // one sample cannot fill a batch of two
    assert_eq!(rows[0].status, "failed");
    assert!(!rows[0].error.is_empty());
    assert_eq!(rows[1].status, "ok");
    assert_eq!(rows[1].steps, Some(10));
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(cmd_sweep(&tiny_sysid(), dir.path(), &opts).is_err());
}

#[test]
fn non_finite_loss_maps_to_divergence_exit() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny_dhpo();
    c.dhpo.as_mut().unwrap().model.learning_rate = 1e200;
    cmd_generate(&c, dir.path(), false).unwrap();
    let e = cmd_train(dir.path(), None, None, &quiet()).unwrap_err();
    assert_eq!(exit_code(&e), EXIT_DIVERGENCE, "{e}");
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("tiny.json");
    tiny_dhpo().save(&cfg).unwrap();
    let p = |x: &Path| x.to_str().unwrap().to_string();

    let ok = hpo(&["generate", "--config", &p(&cfg), "--out", &p(&out)]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let again = hpo(&["generate", "--config", &p(&cfg), "--out", &p(&out)]);
    assert_eq!(again.status.code(), Some(EXIT_VALIDATION));

    let dry = hpo(&["train", "--out", &p(&out), "--dry-run"]);
    assert!(dry.status.success(), "{}", String::from_utf8_lossy(&dry.stderr));
    assert!(!out.join("checkpoints").exists());

    let sysid_cfg = dir.path().join("sysid.json");
    tiny_sysid().save(&sysid_cfg).unwrap();
    let mismatch = hpo(&["train", "--out", &p(&out), "--config", &p(&sysid_cfg), "--dry-run"]);
    assert_eq!(mismatch.status.code(), Some(EXIT_VALIDATION));

    let no_ckpt = hpo(&["evaluate", "--out", &p(&out)]);
    assert_eq!(no_ckpt.status.code(), Some(EXIT_VALIDATION));

    let defaults = hpo(&["generate", "--system", "rd", "--task", "dhpo", "--dry-run", "--out", &p(&out)]);
    assert!(defaults.status.success());
    assert!(String::from_utf8_lossy(&defaults.stdout).contains("config hash"));
}
