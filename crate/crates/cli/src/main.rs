use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mam_cli::commands::{self, Init, Task};
use mam_cli::config::{RunConfig, CONFIG_ENV};
use mam_cli::manifest::Manifest;
use mam_cli::synth::{self, SynthConfig};
use mam_core::masking::Objective;

/// Masked acoustic-frame pre-training for music.
#[derive(Parser)]
#[command(name = "mam", version)]
struct Cli {
    /// key = value run configuration.
    #[arg(long, global = true, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic WAV corpus and its manifest.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 10.0)]
        min_s: f64,
        #[arg(long, default_value_t = 35.0)]
        max_s: f64,
        /// Multi-label tags instead of one genre per clip.
        #[arg(long)]
        tags: bool,
    },
    /// Compute and cache features for every manifest clip.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Masked-reconstruction pre-training.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_enum)]
        objective: Option<ObjectiveArg>,
    },
    /// Grid-search finetuning of a task head.
    Finetune {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Cross-validated genre accuracy or test-split tag metrics.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        #[command(flatten)]
        init: InitArgs,
    },
    /// Print the effective configuration (defaults, config file, --seed).
    Config,
    /// Print a sampled mask plan and masking statistics.
    MaskDemo {
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

#[derive(Args)]
struct InitArgs {
    /// Pre-trained (or, for tag evaluation, finetuned) checkpoint.
    #[arg(long, alias = "model", conflicts_with = "random_init")]
    checkpoint: Option<PathBuf>,
    /// Start from random parameters instead of a checkpoint.
    #[arg(long)]
    random_init: bool,
}

impl InitArgs {
    fn init(&self) -> Result<Init> {
        match (&self.checkpoint, self.random_init) {
            (Some(p), false) => Ok(Init::Checkpoint(p.clone())),
            (None, true) => Ok(Init::Random),
            _ => bail!("pass --checkpoint PATH or --random-init"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Genre,
    Tags,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Genre => Task::Genre,
            TaskArg::Tags => Task::Tags,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Cfm,
    Ccm,
    Both,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Cfm => Objective::Cfm,
            ObjectiveArg::Ccm => Objective::Ccm,
            ObjectiveArg::Both => Objective::Both,
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Synth { classes, per_class, min_s, max_s, tags } => {
            let sc = SynthConfig {
                n_classes: classes,
                clips_per_class: per_class,
                min_s,
                max_s,
                seed: cfg.seed,
                multi_label: tags,
                ..SynthConfig::default()
            };
            let m = synth::generate(&sc, &cli.out)?;
            println!("wrote {} clips and {}", m.entries.len(), cli.out.join("manifest.tsv").display());
        }
        Command::Extract { manifest } => {
            let m = Manifest::load(&manifest)?;
            let s = commands::extract(&m, &cfg)?;
            println!("extracted {}, up to date {}, failed {}", s.extracted.len(), s.skipped.len(), s.failed.len());
            for (id, err) in &s.failed {
                eprintln!("{id}\t{err}");
            }
            if !s.failed.is_empty() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Pretrain { manifest, steps, objective } => {
            if let Some(s) = steps {
                cfg.pretrain.total_steps = s;
            }
            if let Some(o) = objective {
                cfg.pretrain.objective = o.into();
            }
            cfg.validate()?;
            let m = Manifest::load(&manifest)?;
            let path = commands::pretrain(&m, &cfg, &cli.out)?;
            println!("{}", path.display());
        }
        Command::Finetune { manifest, task, init } => {
            let m = Manifest::load(&manifest)?;
            let out = commands::finetune(&m, &cfg, &init.init()?, task.into(), &cli.out)?;
            print!("{}", out.report);
        }
        Command::Evaluate { manifest, task, init } => {
            let m = Manifest::load(&manifest)?;
            let report = commands::evaluate(&m, &cfg, &init.init()?, task.into(), &cli.out)?;
            print!("{report}");
        }
        Command::Config => print!("{cfg}"),
        Command::MaskDemo { frames, trials } => {
            print!("{}", commands::mask_demo(&cfg, frames, trials)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
