//! Acceptance checks P1–P9, one line each.
//!
//! Runs as a plain binary so the result lines are always shown. Pass criterion
//! ids (`P3 P8`) as arguments to run a subset. P6 and P7 train desk-scale
//! models and take on the order of an hour each.
//!
//! A failed criterion is printed and summarized but only fails the process
//! with `--strict` or `ACCEPTANCE_STRICT=1`. A check that errors always does.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;

use hpo_core::autodiff::{Bindings, Graph};
use hpo_core::dhpo::loss_and_grad;
use hpo_core::eval::{evaluate_dhpo, evaluate_sysid, relative_l2, summarize};
use hpo_core::function_spaces::{latin_hypercube, lhs_points, rbf_kernel, sample_sine, sine_from_coefficients, GrfSampler};
use hpo_core::nets::{forward_operator, OperatorSpec};
use hpo_core::pde_oracles::{solve_burgers_with, solve_reaction_diffusion};
use hpo_core::sysid::{train_stage1, train_stage2};
use hpo_core::{
    rng, Activation, Dataset, DhpoModel, DhpoSample, DhpoTrainer, ExperimentConfig, FieldGrid, GrfSpec, MlpSpec,
    OperatorModel, Result, SolverOptions, Split, SysidSample, System, SystemParams, Task, GRID_N,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(a.abs()).max(floor)
}

fn p1_autodiff() -> Result<Outcome> {
    let t0 = Instant::now();
    let mut r = rng::rng(101);
    let (mut worst1, mut worst2) = (0.0f64, 0.0f64);
    for case in 0..100u64 {
        let w = r.random_range(4..=24);
        let p = r.random_range(2..=12);
        let spec = OperatorSpec {
            branch: MlpSpec::new(&[10, w, w, p], Activation::Tanh, rng::derive(7, "branch", case)),
            trunk: MlpSpec::new(&[2, w, w, p], Activation::Tanh, rng::derive(7, "trunk", case)),
        };
        let model = OperatorModel::new(&spec)?;
        let sensors: Vec<f64> = (0..10).map(|_| r.random_range(-1.0..1.0)).collect();
        let (x, t) = (r.random_range(0.05..0.95), r.random_range(0.05..0.95));

        let mut g = Graph::new();
        let (xe, te) = (g.input(0), g.input(1));
        let u = forward_operator(&mut g, &model, &sensors, xe, te)?;
        let d = g.grad(u, &[xe, te])?;
        let dxx = g.grad(d[0], &[xe])?[0];
        let params = model.flat_params();
        let at = |x: f64, t: f64| g.evaluate(u, &Bindings::new(&[x, t], &params));
        let ad = g.evaluate_many(&[d[0], d[1], dxx], &Bindings::new(&[x, t], &params))?;

        let h1 = 1e-5;
        let fd_x = (at(x + h1, t)? - at(x - h1, t)?) / (2.0 * h1);
        let fd_t = (at(x, t + h1)? - at(x, t - h1)?) / (2.0 * h1);
        // fourth-order stencil keeps the reference's own truncation error negligible
        let h2 = 2e-3;
        let fd_xx = (-at(x + 2.0 * h2, t)? + 16.0 * at(x + h2, t)? - 30.0 * at(x, t)? + 16.0 * at(x - h2, t)?
            - at(x - 2.0 * h2, t)?)
            / (12.0 * h2 * h2);
        worst1 = worst1.max(rel(ad[0], fd_x, 1e-6)).max(rel(ad[1], fd_t, 1e-6));
        worst2 = worst2.max(rel(ad[2], fd_xx, 1e-6));
    }
    let el = t0.elapsed();
    outcome(
        worst1 < 1e-4 && worst2 < 1e-3 && el < Duration::from_secs(60),
        format!("100 cases, worst rel err u_x/u_t {worst1:.2e} (< 1e-4), u_xx {worst2:.2e} (< 1e-3), {}", secs(el)),
    )
}

fn p2_loss_gradient() -> Result<Outcome> {
    let t0 = Instant::now();
    let mut c = ExperimentConfig::desk(System::Rd, Task::Dhpo, 21);
    let d = c.dhpo.as_mut().unwrap();
    d.model.n_train = 3;
    d.model.n_test = 1;
    d.model.n_d = 30;
    d.model.batch_size = 3;
    d.model.branch = MlpSpec::new(&[GRID_N, 4, 4], Activation::Tanh, 1);
    d.model.trunk = MlpSpec::new(&[2, 4, 4], Activation::Tanh, 2);
    d.model.hidden = MlpSpec::new(&[3, 4, 1], Activation::Tanh, 3);
    let mc = d.model.clone();
    let data = Dataset::generate(&c)?;
    let samples = data.dhpo_train()?;
    let batch: Vec<&DhpoSample> = samples.iter().collect();
    let points = lhs_points(5, 40, 12, 12)?;
    let mut model = DhpoModel::new(&mc)?;
    let (_, grad) = loss_and_grad(&model, System::Rd, &batch, &points, true, true)?;
    let grad = grad.unwrap();
    let theta = model.flat_params();

    let mut r = rng::rng(22);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let k = r.random_range(0..theta.len());
        let h = 1e-6 * theta[k].abs().max(1.0);
        let mut loss_at = |v: f64| -> Result<f64> {
            let mut p = theta.clone();
            p[k] = v;
            model.load_flat(&p)?;
            Ok(loss_and_grad(&model, System::Rd, &batch, &points, true, false)?.0.total)
        };
        let fd = (loss_at(theta[k] + h)? - loss_at(theta[k] - h)?) / (2.0 * h);
        worst = worst.max(rel(grad[k], fd, 1e-6));
    }
    let el = t0.elapsed();
    outcome(
        worst < 1e-3 && el < Duration::from_secs(60),
        format!("20 of {} parameters, worst rel err {worst:.2e} (< 1e-3), {}", theta.len(), secs(el)),
    )
}

fn p3_rd_analytic() -> Result<Outcome> {
    let t0 = Instant::now();
    let d = 0.01;
    let f = sine_from_coefficients(&[1.0, 0.0, 0.0, 0.0, 0.0], 0);
    let u = solve_reaction_diffusion(&f, SystemParams::rd(d, 0.0))?;
    let lam = d * std::f64::consts::PI.powi(2);
    let j = GRID_N - 1;
    let t = u.t(j);
    let err = (0..GRID_N)
        .map(|i| {
            let x = FieldGrid::x(i);
            let exact = (std::f64::consts::PI * x).sin() * (1.0 - (-lam * t).exp()) / lam;
            (u.at(i, j) - exact).abs()
        })
        .fold(0.0, f64::max);
    let el = t0.elapsed();
    outcome(err < 1e-3, format!("max |u - exact| at t = {t} is {err:.2e} (< 1e-3), {}", secs(el)))
}

fn p4_burgers() -> Result<Outcome> {
    let t0 = Instant::now();
    let sampler = GrfSampler::new(GrfSpec::new(0.2))?;
    let params = SystemParams::burgers(0.01);
    let mut drift = 0.0f64;
    for seed in 0..5 {
        let u = solve_burgers_with(&sampler.sample(seed), params, SolverOptions::default())?;
        let m0 = u.periodic_mass(0);
        for j in 1..GRID_N {
            drift = drift.max((u.periodic_mass(j) - m0).abs());
        }
    }
    // temporal Richardson estimate on the fixed spatial grid
    let u0 = sampler.sample(9);
    let run = |s: usize| solve_burgers_with(&u0, params, SolverOptions { output_dt: 0.01, substeps: s });
    let (a, b, c) = (run(5)?, run(10)?, run(20)?);
    let diff = |p: &FieldGrid, q: &FieldGrid| p.values.iter().zip(&q.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let rate = (diff(&a, &b) / diff(&b, &c)).log2();
    let el = t0.elapsed();
    outcome(
        drift < 1e-6 && (1.5..=2.5).contains(&rate) && el < Duration::from_secs(60),
        format!("mass drift {drift:.2e} (< 1e-6), Richardson rate {rate:.3} (in [1.5, 2.5]), {}", secs(el)),
    )
}

fn p5_samplers() -> Result<Outcome> {
    let t0 = Instant::now();
    let l = 0.2;
    let sampler = GrfSampler::new(GrfSpec::new(l))?;
    let pairs = [(50, 50), (20, 25), (10, 20), (40, 60), (60, 90)];
    let n = 20_000;
    let mut sums = [0.0; 5];
    let mut means = [(0.0, 0.0); 5];
    for s in 0..n as u64 {
        let f = sampler.sample(rng::derive(31, "grf", s));
        for (k, &(a, b)) in pairs.iter().enumerate() {
            sums[k] += f.values[a] * f.values[b];
            means[k].0 += f.values[a];
            means[k].1 += f.values[b];
        }
    }
    let mut worst = 0.0f64;
    for (k, &(a, b)) in pairs.iter().enumerate() {
        let nf = n as f64;
        let cov = sums[k] / nf - (means[k].0 / nf) * (means[k].1 / nf);
        let want = rbf_kernel(FieldGrid::x(a), FieldGrid::x(b), l);
        worst = worst.max((cov - want).abs() / want);
    }
    let sine_ok = (0..1000).all(|s| {
        let f = sample_sine(s, 5).unwrap();
        f.values[0] == 0.0 && f.values[GRID_N - 1] == 0.0
    });
    let mut r = rng::rng(32);
    let lhs_ok = (1..=64).all(|m| {
        let pts = latin_hypercube(&mut r, m, 2);
        (0..2).all(|d| {
            let mut hits = vec![0; m];
            pts.iter().for_each(|p| hits[(p[d] * m as f64) as usize] += 1);
            hits.iter().all(|&h| h == 1)
        })
    });
    let el = t0.elapsed();
    outcome(
        worst < 0.10 && sine_ok && lhs_ok && el < Duration::from_secs(60),
        format!(
            "GRF covariance worst rel dev {worst:.3} (< 0.10, {n} draws), sine ends exact: {sine_ok}, LHS strata exact: {lhs_ok}, {}",
            secs(el)
        ),
    )
}

fn p6_desk_dhpo() -> Result<Outcome> {
    let t0 = Instant::now();
    let c = ExperimentConfig::desk(System::Rd, Task::Dhpo, 1);
    let mc = c.dhpo()?.model.clone();
    let data = Dataset::generate(&c)?;
    let train = data.dhpo_train()?;
    let mut trainer = DhpoTrainer::new(mc.clone(), &train)?;
    let stop = trainer.run(mc.iterations, |_| Ok(()))?;
    let report = evaluate_dhpo(trainer.model(), &data.dhpo_test(), c.hash(), vec![c.seed])?;
    let s = report.summary.field_rel_l2;
    let hidden = report.summary.hidden_rel_l2.map_or(f64::NAN, |h| h.mean);
    let el = t0.elapsed();
    outcome(
        s.mean < 0.10 && el <= Duration::from_secs(2 * 3600),
        format!(
            "N_train {} N_d {}, {} steps ({stop:?}), test rel L2 of u {:.4} ± {:.4} over {} (< 0.10), hidden term {:.4}, {}",
            mc.n_train,
            mc.n_d,
            trainer.step(),
            s.mean,
            s.std,
            s.count,
            hidden,
            secs(el)
        ),
    )
}

fn p7_desk_sysid() -> Result<Outcome> {
    let t0 = Instant::now();
    let c = ExperimentConfig::desk(System::Burgers, Task::Sysid, 1);
    let sc = c.sysid()?.clone();
    let data = Dataset::generate(&c)?;
    let layout = data.layout()?;
    let train: Vec<SysidSample> = data.sysid_samples(Split::Train)?.into_iter().map(|(_, s)| s).collect();
    let (warm, _) = train_stage1(&sc, layout, &train)?;
    let fit = train_stage2(&sc, layout, &train, warm)?;
    let test = data.sysid_samples(Split::Test)?;
    let report = evaluate_sysid(&fit.model, &fit.pnet, &data.sysid_cases(&test), c.hash(), vec![c.seed])?;
    let xi = report.summary.xi_abs_error.expect("identification reports carry parameter errors");
    let u = report.summary.field_rel_l2;
    let el = t0.elapsed();
    outcome(
        xi.mean < 0.01 && u.mean < 0.15 && el <= Duration::from_secs(3 * 3600),
        format!(
            "{} sensors, {}+{} steps, mean |nu err| {:.2e} ± {:.2e} (< 0.01), field rel L2 {:.4} (< 0.15) over {}, {}",
            sc.n_sensors,
            sc.stage1_iterations,
            sc.stage2_iterations,
            xi.mean,
            xi.std,
            u.mean,
            u.count,
            secs(el)
        ),
    )
}

fn p8_metrics() -> Result<Outcome> {
    let mut r = rng::rng(81);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = r.random_range(1..300);
        let scale = 10f64.powf(r.random_range(-6.0..6.0));
        let a: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let b: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) * scale).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            num += (a[i] - b[i]) * (a[i] - b[i]);
            den += b[i] * b[i];
        }
        let naive = (num / den).sqrt();
        worst = worst.max(rel(relative_l2(&a, &b)?, naive, 1e-300));

        let mean = a.iter().sum::<f64>() / n as f64;
        let var = a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let s = summarize(&a)?;
        worst = worst.max((s.mean - mean).abs() / scale).max((s.std - var.sqrt()).abs() / scale);
    }
    outcome(worst < 1e-12, format!("1000 random inputs, worst deviation {worst:.2e} (< 1e-12)"))
}

fn p9_determinism() -> Result<Outcome> {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| hpo_core::Error::Io { path: "tempdir".into(), source: e })?;
    let mut bytes_equal = true;
    for (i, (system, task)) in [(System::Rd, Task::Dhpo), (System::Burgers, Task::Sysid)].into_iter().enumerate() {
        let mut c = ExperimentConfig::desk(system, task, 5);
        if let Some(s) = &mut c.sysid {
            s.n_values = 6;
            s.n_functions = 2;
            s.n_train = 10;
            s.n_test = 2;
            s.batch_size = 5;
        }
        if let Some(d) = &mut c.dhpo {
            d.model.n_train = 12;
            d.model.n_test = 2;
        }
        let (a, b) = (dir.path().join(format!("a{i}")), dir.path().join(format!("b{i}")));
        Dataset::generate(&c)?.save(&a, false)?;
        Dataset::generate(&c)?.save(&b, false)?;
        for f in ["manifest.json", "fields.bin", "inputs.bin", "sensors.json"] {
            bytes_equal &= std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok();
        }
    }

    let mut c = ExperimentConfig::desk(System::Burgers, Task::Dhpo, 6);
    let d = c.dhpo.as_mut().unwrap();
    d.model.n_train = 8;
    d.model.n_test = 1;
    d.model.batch_size = 4;
    d.model.branch = MlpSpec::new(&[GRID_N, 16, 16, 8], Activation::Tanh, 1);
    d.model.trunk = MlpSpec::new(&[2, 16, 16, 8], Activation::Tanh, 2);
    d.model.hidden = MlpSpec::new(&[3, 16, 1], Activation::Tanh, 3);
    let mc = d.model.clone();
    let data = Dataset::generate(&c)?;
    let train = data.dhpo_train()?;
    let trace = || -> Result<Vec<f64>> {
        let mut t = DhpoTrainer::new(mc.clone(), &train)?;
        t.run(40, |_| Ok(()))?;
        Ok(t.trace().iter().map(|r| r.total).collect())
    };
    let (x, y) = (trace()?, trace()?);
    let trace_dev = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let el = t0.elapsed();
    outcome(
        bytes_equal && x.len() == y.len() && trace_dev <= 1e-10,
        format!("dataset files bit-identical: {bytes_equal}, loss trace max deviation {trace_dev:.1e} (<= 1e-10), {}", secs(el)),
    )
}

type Check = fn() -> Result<Outcome>;

const CHECKS: [(&str, &str, Check); 9] = [
    ("P1", "autodiff vs finite differences", p1_autodiff),
    ("P2", "loss gradient vs finite differences", p2_loss_gradient),
    ("P3", "reaction-diffusion solver vs analytic transient", p3_rd_analytic),
    ("P4", "Burgers mass conservation and convergence", p4_burgers),
    ("P5", "sampler statistics", p5_samplers),
    ("P6", "desk-scale hidden-physics operator", p6_desk_dhpo),
    ("P7", "desk-scale parameter identification", p7_desk_sysid),
    ("P8", "metric equivalence", p8_metrics),
    ("P9", "determinism", p9_determinism),
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let only: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let strict = args.iter().any(|a| a == "--strict") || std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1");
    let mut failed = Vec::new();
    let mut errored = false;
    let mut ran = 0;
    for (id, name, check) in CHECKS {
        if !only.is_empty() && !only.iter().any(|o| *o == id) {
            continue;
        }
        ran += 1;
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                errored = true;
                (false, format!("error: {e}"))
            }
        };
        println!("{id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {ran} criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("acceptance: {} of {ran} criteria passed; failed: {}", ran - failed.len(), failed.join(" "));
    // A check that could not run is a defect; a missed target is reported and
    // only gates the exit status in strict mode.
    if errored || strict {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
