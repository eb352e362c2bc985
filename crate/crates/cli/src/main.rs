use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use smoothdyn::commands::{exit_code, Command, Runner};
use smoothdyn::config::PipelineConfig;
use smoothdyn::field::TrainingMode;
use smoothdyn::pipeline::Variant;
use smoothdyn::systems::System;

/// Learn smooth state variables and vector fields from simulated systems.
///
/// Log verbosity follows `SMOOTHDYN_LOG` (for example `info` or `debug`).
#[derive(Debug, Parser)]
#[command(name = "smoothdyn", version)]
struct Cli {
    /// Pipeline configuration (TOML). Without it the defaults for `--system` apply.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// System used when no configuration file is given.
    #[arg(long, global = true, default_value = "spring_mass")]
    system: String,
    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Validate configuration and inputs without computing or writing.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Embedding the field and analysis commands operate on.
    #[arg(long, global = true, value_enum, default_value_t = VariantArg::Smooth)]
    variant: VariantArg,
    /// Field training mode override.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// RK4 substeps per sample for the learned field.
    #[arg(long, global = true)]
    substeps: Option<usize>,
    /// Trajectory filter percentile.
    #[arg(long, global = true)]
    percentile: Option<f64>,
    /// Train the field on unfiltered trajectories.
    #[arg(long, global = true)]
    no_filter: bool,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Smooth,
    Baseline,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Integrated,
    FiniteDifference,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate and lift the dataset.
    Simulate,
    /// Estimate the intrinsic dimension of the observations.
    EstimateDim,
    /// Train the embedding and encode the dataset.
    TrainEmbed,
    /// Train the vector field on the encoded dataset.
    TrainField,
    /// Find equilibria, certify stability and report frequencies.
    AnalyzeEquilibria,
    /// Coverage and divergence analysis of paired trajectories.
    AnalyzeChaos,
    /// Limit-cycle detection on long integrations.
    AnalyzeCycles,
    /// Damped synthesis towards the equilibrium.
    Synthesize,
    /// Unregularized embedding and field on the same dataset.
    Baseline,
    /// Every stage in order.
    Pipeline,
    /// Print the resolved configuration as an annotated template.
    Template,
}

fn resolve(cli: &Cli) -> smoothdyn::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::for_system(System::from_name(&cli.system)?, 0),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(m) = cli.mode {
        cfg.field.mode = match m {
            ModeArg::Integrated => TrainingMode::Integrated,
            ModeArg::FiniteDifference => TrainingMode::FiniteDifference,
        };
    }
    if let Some(n) = cli.substeps {
        cfg.field.substeps = n;
    }
    if let Some(p) = cli.percentile {
        cfg.field.filter_percentile = p;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> smoothdyn::Result<()> {
    let cfg = resolve(cli)?;
    let command = match cli.command {
        Cmd::Template => {
            print!("{}", cfg.template()?);
            return Ok(());
        }
        Cmd::Simulate => Command::Simulate,
        Cmd::EstimateDim => Command::EstimateDim,
        Cmd::TrainEmbed => Command::TrainEmbed,
        Cmd::TrainField => Command::TrainField,
        Cmd::AnalyzeEquilibria => Command::AnalyzeEquilibria,
        Cmd::AnalyzeChaos => Command::AnalyzeChaos,
        Cmd::AnalyzeCycles => Command::AnalyzeCycles,
        Cmd::Synthesize => Command::Synthesize,
        Cmd::Baseline => Command::Baseline,
        Cmd::Pipeline => Command::Pipeline,
    };
    let mut runner = Runner::new(cfg);
    runner.dry_run = cli.dry_run;
    runner.command_line = std::env::args().collect();
    runner.unfiltered = cli.no_filter;
    runner.variant = match cli.variant {
        VariantArg::Smooth => Variant::Smooth,
        VariantArg::Baseline => Variant::Baseline,
    };
    for o in runner.run(command)? {
        if o.dry_run {
            println!("{}: configuration and inputs valid", o.command);
        } else {
            println!(
                "{}: wrote {} files under {}",
                o.command,
                o.outputs.len(),
                runner.out().display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMOOTHDYN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
