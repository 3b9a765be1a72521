use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hpo_cli::{
    cmd_evaluate, cmd_export, cmd_generate, cmd_sweep, cmd_train, exit_code, resolve_config, EvaluateOptions, Scale,
    SweepOptions, TrainOptions,
};
use hpo_core::{Result, System, Task};

#[derive(Parser)]
#[command(name = "hpo", version, about = "Hidden-physics operator learning and PDE parameter identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from built-in defaults for this system (rd, burgers).
    #[arg(long)]
    system: Option<System>,
    /// Task for built-in defaults (dhpo, sysid).
    #[arg(long)]
    task: Option<Task>,
    /// Scale of the built-in defaults (desk, full).
    #[arg(long, default_value = "desk")]
    scale: Scale,
    /// Master seed; every other seed is derived from it.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the reference PDEs and write a dataset.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing dataset.
        #[arg(long)]
        force: bool,
        /// Validate and print the config without solving anything.
        #[arg(long)]
        dry_run: bool,
    },
    /// Train on the dataset in --out, checkpointing as configured.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>/config.json.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from the newest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Discard existing checkpoints and start over.
        #[arg(long)]
        force: bool,
        /// Run 10 steps per stage without writing anything.
        #[arg(long)]
        dry_run: bool,
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the newest checkpoint under <out>/checkpoints.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of test samples exported as triptychs.
        #[arg(long, default_value_t = 3)]
        triptychs: usize,
        /// Also run the GRF length-scale study with this many samples per scale.
        #[arg(long, default_value_t = 0)]
        length_scale_samples: usize,
    },
    /// Train and evaluate over a grid of n_train × n_d.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        n_train: Vec<usize>,
        #[arg(long, value_delimiter = ',', required = true)]
        n_d: Vec<usize>,
        /// Cells trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        dry_run: bool,
        #[arg(long, default_value_t = 0)]
        log_every: usize,
    },
    /// Collect reports, loss traces and triptychs for plotting.
    ExportPlotsData {
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>/plots.
        #[arg(long)]
        dest: Option<PathBuf>,
    },
}

fn resolve(a: &ConfigArgs) -> Result<hpo_core::ExperimentConfig> {
    resolve_config(a.config.as_deref(), a.system, a.task, a.scale, a.seed)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, force, dry_run } => {
            let c = resolve(&config)?;
            if dry_run {
                println!("{}", serde_json::to_string_pretty(&c)?);
                println!("config hash {}", c.hash());
                return Ok(());
            }
            let d = cmd_generate(&c, &out, force)?;
            println!(
                "wrote {} train + {} test fields to {} (config {})",
                d.manifest.n_train,
                d.manifest.n_test,
                out.display(),
                d.manifest.config_hash
            );
        }
        Command::Train { out, config, seed, resume, force, dry_run, log_every } => {
            let opts = TrainOptions { dry_run, resume, force, log_every };
            let o = cmd_train(&out, config.as_deref(), seed, &opts)?;
            println!("trained {} steps ({:?}), final loss {:.4e}", o.steps, o.stop, o.final_loss);
        }
        Command::Evaluate { out, config, checkpoint, triptychs, length_scale_samples } => {
            let opts = EvaluateOptions { checkpoint, triptychs, length_scale_samples };
            let r = cmd_evaluate(&out, config.as_deref(), &opts)?;
            let s = &r.summary;
            println!("field relative L2 {:.5} ± {:.5} over {}", s.field_rel_l2.mean, s.field_rel_l2.std, s.field_rel_l2.count);
            if let Some(h) = s.hidden_rel_l2 {
                println!("hidden-term relative L2 {:.5} ± {:.5}", h.mean, h.std);
            }
            if let Some(x) = s.xi_abs_error {
                println!("parameter absolute error {:.3e} ± {:.3e}", x.mean, x.std);
            }
        }
        Command::Sweep { config, out, n_train, n_d, jobs, force, dry_run, log_every } => {
            let c = resolve(&config)?;
            let opts = SweepOptions { n_train, n_d, jobs, dry_run, force, log_every };
            let rows = cmd_sweep(&c, &out, &opts)?;
            for r in &rows {
                match r.field_mean {
                    Some(m) => println!("n_train {:>4}  n_d {:>4}  {m:.5}", r.n_train, r.n_d),
                    None => println!("n_train {:>4}  n_d {:>4}  failed: {}", r.n_train, r.n_d, r.error),
                }
            }
        }
        Command::ExportPlotsData { out, dest } => {
            let idx = cmd_export(&out, dest.as_deref())?;
            println!("exported {} triptychs and {} loss traces", idx.triptychs.len(), idx.loss_traces.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
