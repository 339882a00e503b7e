use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use calemu::pipeline::{
    cmd_calibrate, cmd_emulate, cmd_report, cmd_reweight, cmd_synthesize_target, cmd_wave,
    PipelineConfig, Workspace,
};
use calemu::{Error, Result};

/// Calibrate a stochastic disease-history simulator against count data by
/// emulating its log-likelihood surface.
#[derive(Parser)]
#[command(name = "calemu", version, about)]
struct Cli {
    /// Run configuration JSON; defaults to the built-in desk-scale study.
    /// Later commands verify it against the manifest's snapshot.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Manifest location; its directory holds all artifacts.
    #[arg(long, global = true, default_value = "manifest.json")]
    manifest: PathBuf,

    /// Master seed override, applied when the manifest is first created.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the configured truth point and write the target data.
    SynthesizeTarget,
    /// Run one history-matching wave: design, simulate, reduce the region.
    Wave {
        /// Wave number, starting at 0.
        #[arg(long)]
        wave: usize,
    },
    /// Fit the log-likelihood emulator over the final region.
    Emulate,
    /// Run the calibration loop and write the calibrated sample.
    Calibrate,
    /// Re-derive the calibrated sample under a different discrepancy setting.
    Reweight {
        /// Four discount factors: cases by age, cases by type, obstructed,
        /// undetected adenomas.
        #[arg(long, num_args = 4, value_names = ["AGE", "TYPE", "OBSTRUCTED", "ADENOMA"])]
        lambda: Vec<f64>,
    },
    /// Emit the plot-ready CSV series.
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => calemu::pipeline::manifest::read_json_file(path)?,
        None => PipelineConfig::desk_default(),
    };
    if let Some(seed) = cli.seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn open_workspace(cli: &Cli) -> Result<Workspace> {
    let ws = Workspace::open(&cli.manifest)?;
    if cli.config.is_some() || cli.seed.is_some() {
        ws.check_config(&load_config(cli)?)?;
    }
    Ok(ws)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Cmd::SynthesizeTarget => {
            let config = load_config(&cli)?;
            let mut ws = Workspace::create(config, &cli.manifest)?;
            cmd_synthesize_target(&mut ws)
        }
        Cmd::Wave { wave } => cmd_wave(&mut open_workspace(&cli)?, *wave),
        Cmd::Emulate => cmd_emulate(&mut open_workspace(&cli)?),
        Cmd::Calibrate => cmd_calibrate(&mut open_workspace(&cli)?),
        Cmd::Reweight { lambda } => {
            let l: [f64; 4] = lambda
                .as_slice()
                .try_into()
                .map_err(|_| Error::validation("--lambda takes exactly four values"))?;
            cmd_reweight(&mut open_workspace(&cli)?, l)
        }
        Cmd::Report => cmd_report(&mut open_workspace(&cli)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
