use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualdub::harness::config::PipelineConfig;
use dualdub::harness::pipeline::Workspace;
use dualdub::harness::selftest::run_selftest;

/// Joint background-audio and dubbed-speech generation on a synthetic world.
#[derive(Debug, Parser)]
#[command(name = "dualdub", version)]
struct Cli {
    /// JSON config; fields left out are taken from its `profile` (default desk).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in profile when no config is given and the output directory has none.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for data, checkpoints, logs and reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Load checkpoints written under a different config.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset splits.
    Synth,
    /// Run one curriculum stage.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        stage: u8,
    },
    VaeTrain,
    FlowTrain,
    CaspTrain,
    /// Tokens from the stage-3 model, then waveforms through flow and VAE.
    Generate {
        /// Also write 16-bit WAV files next to the tensors.
        #[arg(long)]
        wav: bool,
    },
    /// Compute the full evaluation report.
    Eval,
    /// Every step from synth to eval.
    All,
    /// Run the invariant suite.
    Selftest,
}

fn config(cli: &Cli) -> dualdub::Result<PipelineConfig> {
    let saved = cli.out.join("config.json");
    let mut cfg = match (&cli.config, &cli.profile) {
        (Some(path), _) => PipelineConfig::load(path)?,
        (None, Some(name)) => PipelineConfig::profile(name)?,
        (None, None) if saved.exists() && !matches!(cli.cmd, Cmd::Synth | Cmd::All) => PipelineConfig::load(&saved)?,
        (None, None) => PipelineConfig::profile("desk")?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> dualdub::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: &Cli) -> dualdub::Result<bool> {
    if let Cmd::Selftest = cli.cmd {
        let report = run_selftest();
        for c in &report.checks {
            println!("{} {:<28} {:>6} ms  {}", if c.ok { "PASS" } else { "FAIL" }, c.name, c.millis, c.detail);
        }
        return Ok(report.all_ok());
    }
    let mut ws = Workspace::new(&cli.out, config(cli)?);
    ws.force = cli.force;
    match cli.cmd {
        Cmd::Synth => print_json(&ws.synth()?)?,
        Cmd::Train { stage } => {
            let r = ws.train_stage(stage)?;
            print_json(&serde_json::json!({
                "stage": r.stage,
                "final_loss": r.log.steps.last().map(|s| s.loss),
                "train_probe": r.train_probe,
                "heldout_probe": r.heldout_probe,
            }))?
        }
        Cmd::VaeTrain => {
            let log = ws.train_vae()?;
            print_json(&serde_json::json!({ "final_loss": log.losses.last() }))?
        }
        Cmd::FlowTrain => {
            let r = ws.train_flow()?;
            print_json(&serde_json::json!({ "final_loss": r.log.losses.last(), "recovery_error": r.recovery_error }))?
        }
        Cmd::CaspTrain => {
            let losses = ws.train_casp()?;
            print_json(&serde_json::json!({ "final_loss": losses.last() }))?
        }
        Cmd::Generate { wav } => {
            ws.wav = wav;
            print_json(&ws.generate()?)?
        }
        Cmd::Eval => println!("{}", ws.eval()?.to_json()),
        Cmd::All => println!("{}", ws.run_all()?.to_json()),
        Cmd::Selftest => unreachable!(),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("selftest failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
