use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use filament::io::{
    export_dataset, open_run, parse_stages, run_pipeline, runs_root, theorem_report, Dataset, Format, RunConfig,
    RunDir, RunStatus, Stage,
};

#[derive(Parser)]
#[command(name = "filament", version, about = "Binormal-flow filament laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (default: $FILAMENT_RUNS_DIR/<run id>).
    #[arg(long)]
    run_dir: Option<PathBuf>,
    /// Comma-separated stages, overriding the subcommand's own.
    #[arg(long)]
    stages: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the self-similar profile.
    Profile(Common),
    /// Evolve the renormalized NLS.
    Evolve(Common),
    /// Rebuild curves and frames from an evolved run.
    Reconstruct(Common),
    /// Fit rates and check the asymptotic bounds.
    Analyze(Common),
    /// Integrate the linearized modes.
    Modes(Common),
    /// Run the configured stages (all by default) and print the theorem report.
    Report(Common),
    /// Export a dataset of an existing run.
    Export {
        #[command(flatten)]
        common: Common,
        /// Run id under the runs root; ignored with --run-dir.
        #[arg(long)]
        run: Option<String>,
        /// curves, frames, rates or modes.
        #[arg(long)]
        what: String,
        /// csv or json.
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

fn load_config(c: &Common, default: Option<Stage>) -> anyhow::Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(list) = &c.stages {
        cfg.stages = parse_stages(list)?;
    } else if let Some(st) = default {
        cfg.stages = vec![st];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let (common, stage) = match &cli.cmd {
        Command::Profile(c) => (c, Some(Stage::Profile)),
        Command::Evolve(c) => (c, Some(Stage::Evolve)),
        Command::Reconstruct(c) => (c, Some(Stage::Reconstruct)),
        Command::Analyze(c) => (c, Some(Stage::Analyze)),
        Command::Modes(c) => (c, Some(Stage::Modes)),
        Command::Report(c) => (c, None),
        Command::Export { common, run, what, format } => {
            let dir = match (&common.run_dir, run) {
                (Some(d), _) => RunDir::open(d)?,
                (None, Some(id)) => open_run(&runs_root(), id)?,
                (None, None) => bail!("export needs --run or --run-dir"),
            };
            let path = export_dataset(&dir, what.parse::<Dataset>()?, format.parse::<Format>()?)?;
            println!("{}", path.display());
            return Ok(ExitCode::SUCCESS);
        }
    };
    let cfg = load_config(common, stage)?;
    let manifest = run_pipeline(&cfg, common.run_dir.as_deref())?;
    let dir = common.run_dir.clone().unwrap_or_else(|| runs_root().join(&manifest.run_id));
    println!("run {} in {}", manifest.run_id, dir.display());
    for f in &manifest.files {
        println!("  {}  {}", &f.sha256[..16], f.path);
    }
    if manifest.status != RunStatus::Complete {
        return Ok(ExitCode::FAILURE);
    }
    finish(&dir, matches!(cli.cmd, Command::Report(_)), manifest.checks_passed)
}

fn finish(dir: &Path, print_report: bool, passed: Option<bool>) -> anyhow::Result<ExitCode> {
    let run = RunDir::open(dir)?;
    let bad = run.verify()?;
    for m in &bad {
        eprintln!("checksum mismatch: {}", m.path);
    }
    if !bad.is_empty() {
        return Ok(ExitCode::FAILURE);
    }
    if print_report {
        if let Ok(report) = theorem_report(&run) {
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(match passed {
        Some(false) => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
