mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::report::Emitter;

/// Anchor assignment, missed-detection mining and warp-probe analysis for
/// anchor-based object detectors.
#[derive(Debug, Parser)]
#[command(name = "anchorlens", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "ANCHORLENS_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Omit the `# anchorlens ...` metadata line from outputs.
    #[arg(long, global = true)]
    no_header: bool,
    #[arg(long, global = true)]
    gamma_min: Option<f64>,
    #[arg(long, global = true)]
    gamma_ratio: Option<f64>,
    #[arg(long, global = true)]
    gamma_max: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    switch_window: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List every anchor of the configured pyramid.
    Anchors {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign anchors to ground-truth boxes, one table per frame.
    Assign {
        #[arg(long)]
        gt: PathBuf,
        /// Preset name; overrides the config's `strategy`.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract momentarily missed detections from a score dump.
    Mmd {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Warp probing: write manifests or analyze probe scores.
    Probe {
        #[command(subcommand)]
        action: ProbeCommand,
    },
    /// Count MMD frames per cause.
    Tally {
        #[arg(long)]
        verdicts: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-frame breakdown CSV.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Bar chart of the totals.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Write a synthetic scenario's dump, ground truth and probe files.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum ProbeCommand {
    /// Write the warp sweep for one or more families (all by default).
    Manifest {
        #[arg(long = "family")]
        families: Vec<String>,
        /// Image size as WIDTHxHEIGHT; defaults to the pyramid's extent.
        #[arg(long)]
        extent: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyze probe scores listed in a probe list file.
    Analyze {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        probes: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<commands::Outcome> {
    if let Some(jobs) = cli.jobs {
        anyhow::ensure!(jobs > 0, "--jobs must be at least 1");
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let overrides = Overrides {
        gamma_min: cli.gamma_min,
        gamma_ratio: cli.gamma_ratio,
        gamma_max: cli.gamma_max,
        alpha: cli.alpha,
        beta: cli.beta,
        switch_window: cli.switch_window,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let emit = Emitter::new(&cfg.digest(), cli.no_header);

    match cli.command {
        Command::Anchors { out } => commands::anchors(&cfg, &emit, out.as_deref()),
        Command::Assign { gt, strategy, out } => {
            commands::assign_cmd(&cfg, &emit, &gt, strategy.as_deref(), out.as_deref())
        }
        Command::Mmd { dump, gt, out } => commands::mmd(&cfg, &emit, &dump, &gt, out.as_deref()),
        Command::Probe { action } => match action {
            ProbeCommand::Manifest { families, extent, out } => {
                let extent = extent.as_deref().map(commands::parse_extent).transpose()?;
                commands::probe_manifest(&cfg, &emit, &families, extent, out.as_deref())
            }
            ProbeCommand::Analyze { manifest, probes, out } => {
                commands::probe_analyze(&cfg, &emit, &manifest, &probes, out.as_deref())
            }
        },
        Command::Tally {
            verdicts,
            labels,
            out,
            frames,
            svg,
        } => commands::tally(
            &emit,
            &verdicts,
            labels.as_deref(),
            out.as_deref(),
            frames.as_deref(),
            svg.as_deref(),
        ),
        Command::Simulate { scenario, out_dir } => commands::simulate(&cfg, cli.no_header, &scenario, &out_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) if outcome.error_rows == 0 => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("{} probe(s) failed", outcome.error_rows);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
