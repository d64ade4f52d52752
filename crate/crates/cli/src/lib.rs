//! Command-line front end: config-driven synthesis and verification, the
//! benchmark demo and the success-rate sweep.

pub mod config;
pub mod output;
pub mod run;

use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use ddsf_core::lti::LtiSystem;

use config::{ExperimentConfig, PlantSpec, BENCHMARK_PRESET};

#[derive(Debug, Parser)]
#[command(name = "ddsf", version, about = "Robust state feedback from one noisy input-state trajectory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Trials per N (sweep).
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// H-infinity level to certify.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Disturbance bound w_bar (0 means noise-free data).
    #[arg(long, global = true)]
    pub wbar: Option<f64>,
    /// Do not print the report.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// The three-state benchmark: N = 20, w_bar = 0.02, gamma = 2.4.
    Demo,
    /// Successes versus N for N = 4..20 with w_bar = 0.001 N.
    Sweep,
    /// Design from a config, then audit the gain.
    Synth,
    /// Audit the `gain` of a config on fresh data.
    Verify,
}

impl Cli {
    /// Config file (or defaults) with the command-line overrides applied.
    pub fn experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(g) = self.gamma {
            cfg.gamma = g;
        }
        if let Some(w) = self.wbar {
            if self.command == Command::Sweep {
                anyhow::bail!("sweep scales w_bar with N; set `sweep.noise_per_sample` in the config instead");
            }
            cfg.noise_bound = w;
        }
        if matches!(self.command, Command::Synth | Command::Verify) && self.config.is_none() {
            anyhow::bail!("{} needs --config", if self.command == Command::Synth { "synth" } else { "verify" });
        }
        cfg.resolve()?;
        Ok(cfg)
    }
}

fn prepare_out(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Run a parsed command line and return the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    match try_execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn try_execute(cli: &Cli) -> anyhow::Result<i32> {
    let cfg = cli.experiment()?;
    prepare_out(&cli.out)?;
    match cli.command {
        Command::Demo | Command::Synth | Command::Verify => {
            let report = match cli.command {
                Command::Demo => run::run_demo(&cfg)?,
                Command::Synth => run::run_synth(&cfg)?,
                _ => run::run_verify(&cfg)?,
            };
            let text = output::render_run(&report);
            output::write_text(&cli.out.join("report.txt"), &text)?;
            output::write_json(&cli.out.join("result.json"), &report)?;
            if cli.command == Command::Demo {
                output::write_text(&cli.out.join("summary.csv"), &output::summary_csv(&report))?;
            }
            if !cli.quiet {
                print!("{text}");
            }
            Ok(report.exit_code())
        }
        Command::Sweep => {
            let sys = match &cfg.plant {
                PlantSpec::Preset(p) if p == BENCHMARK_PRESET => LtiSystem::benchmark(),
                _ => cfg.resolve()?.system,
            };
            if cfg.mixed.is_some() {
                anyhow::bail!("sweep does not take a `mixed` section");
            }
            let opts = run::synth_options(&cfg)?;
            let report =
                run::run_sweep(&sys, &cfg.sweep, cfg.trials, cfg.seed, cfg.gamma, cfg.input_bound, cfg.audit_samples, &opts);
            let text = output::render_sweep(&report);
            output::write_text(&cli.out.join("sweep.csv"), &output::sweep_csv(&report))?;
            output::write_text(&cli.out.join("sweep.svg"), &output::sweep_svg(&report))?;
            output::write_text(&cli.out.join("report.txt"), &text)?;
            output::write_json(&cli.out.join("result.json"), &report)?;
            if !cli.quiet {
                print!("{text}");
            }
            Ok(0)
        }
    }
}
