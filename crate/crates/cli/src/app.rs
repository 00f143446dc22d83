//! Command-line surface.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use dap_core::checks;

use crate::ablate::{self, Sweep};
use crate::config::RunConfig;
use crate::context::Workspace;
use crate::{distill, evaluate, scatter, train, CheckFailed, UsageError};

#[derive(Debug, Parser)]
#[command(name = "dap", version, about = "Training-free dataset distillation with diffusion priors")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override a config key, e.g. `--set guidance.gamma=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Output directory (else config `output_dir`, then $DAP_OUTPUT_DIR).
    #[arg(long, short, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Produce one distilled set per (method, ipc, seed).
    Distill {
        /// Run DAP at every γ of `run.gamma_grid` instead of `run.methods`.
        #[arg(long)]
        gamma_grid: bool,
    },
    /// Train downstream classifiers on distilled sets and report metrics.
    Eval {
        files: Vec<PathBuf>,
        /// Also report classifiers trained on the full training split.
        #[arg(long)]
        full_train: bool,
    },
    /// Sweep γ or t_stop and plot accuracy curves.
    Ablate {
        #[arg(long, value_parser = parse_sweep)]
        sweep: Sweep,
    },
    /// Draw a smaller set from an existing one.
    Subsample {
        file: PathBuf,
        #[arg(long)]
        ipc: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Scatter plot of real and distilled samples.
    Scatter {
        file: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        with_test: bool,
    },
    /// Fit the small denoiser on the configured task.
    TrainDenoiser {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the kernel and gradient property checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the resolved configuration and its hash.
    ShowConfig,
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    s.parse().map_err(|e: UsageError| e.0)
}

pub fn resolve_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        config.apply_override(o)?;
    }
    if let Some(out) = &cli.out {
        config.output_dir = Some(out.clone());
    }
    if let Some(t) = cli.threads {
        config.run.threads = t;
    }
    Ok(config)
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Command::Selftest { seed } = cli.command {
        let outcomes = checks::run_all(seed)?;
        let mut failed = Vec::new();
        for o in &outcomes {
            println!("{} {:<28} {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            if !o.passed {
                failed.push(o.name.clone());
            }
        }
        if !failed.is_empty() {
            return Err(CheckFailed(failed.join(", ")).into());
        }
        return Ok(());
    }
    let config = resolve_config(&cli)?;
    if config.run.threads > 0 {
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(config.run.threads).build_global();
    }
    if let Command::ShowConfig = cli.command {
        config.validate()?;
        println!("# config_hash={}", config.hash());
        print!("{}", config.to_toml());
        return Ok(());
    }
    let ws = Workspace::open(config)?;
    match cli.command {
        Command::Distill { gamma_grid } => {
            let produced = distill::run(&ws, gamma_grid)?;
            println!("{} sets written to {}", produced.len(), ws.out_dir.display());
        }
        Command::Eval { files, full_train } => {
            let evaluated = evaluate::run(&ws, &files, full_train)?;
            for e in &evaluated {
                let accs: Vec<String> = e.report.accuracy.iter().map(|a| format!("{}={:.4}", a.classifier, a.mean)).collect();
                println!("{}: {}", e.file.display(), accs.join(" "));
            }
        }
        Command::Ablate { sweep } => {
            let summary = ablate::run(&ws, sweep)?;
            for p in &summary.points {
                println!("{}={:<6} ipc={} family_mean_acc={:.4}", sweep.as_str(), p.value, p.ipc, p.family_mean_accuracy);
            }
        }
        Command::Subsample { file, ipc, seed } => {
            let path = distill::subsample(&ws, &file, ipc, seed)?;
            println!("{}", path.display());
        }
        Command::Scatter { file, output, with_test } => {
            let path = scatter::run(&ws, &file, output, with_test)?;
            println!("{}", path.display());
        }
        Command::TrainDenoiser { checkpoint } => {
            let s = train::run(&ws, checkpoint)?;
            println!(
                "checkpoint {} ({} params): val eps-MSE {:.4}{}",
                s.checkpoint.display(),
                s.num_params,
                s.report.val_mse,
                s.analytic_val_mse.map(|a| format!(" (analytic optimum {a:.4})")).unwrap_or_default()
            );
        }
        Command::Selftest { .. } | Command::ShowConfig => unreachable!(),
    }
    Ok(())
}
