//! Command-line shell over [`cagekit::harness`]: one subcommand per
//! pipeline stage, a JSON experiment config, and a few common overrides.
//!
//! Exit codes: 0 on success, 2 on input errors, 3 when a mesh fails
//! geometric validation, 4 when a stage finds no results to work with.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cagekit::harness::{
    cmd_attack, cmd_build_cages, cmd_defend, cmd_gen_data, cmd_report, cmd_train, AblationVariant,
    AttackSelect, ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(
    name = "cagekit",
    version,
    about = "Cage-based deformation attacks on point-cloud classifiers"
)]
struct Cli {
    /// Experiment config as JSON; defaults apply for absent fields.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Global seed driving the train/test split (overrides the config).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Number of test clouds the attack stages cover (overrides the config).
    #[arg(long, global = true, value_name = "N")]
    samples: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured dataset as XYZ files plus a JSON listing.
    GenData,
    /// Train the classifier and store the model with its accuracy report.
    Train,
    /// Build cages (and their point bindings) for every attack target.
    BuildCage {
        /// Which construction stages to run.
        #[arg(long, value_enum, default_value_t = AblationArg::Full)]
        ablation: AblationArg,
    },
    /// Run attacks against the stored model over the attack targets.
    Attack {
        /// Which attacks to run.
        #[arg(long, value_enum, default_value_t = AttackArg::Both)]
        attack: AttackArg,
        /// Which cage variant the cage attack deforms.
        #[arg(long, value_enum, default_value_t = AblationArg::Full)]
        ablation: AblationArg,
    },
    /// Re-evaluate stored attacks behind input filters; write the CSV.
    Defend,
    /// Recompute all aggregate CSV tables from stored per-sample results.
    Report,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblationArg {
    Full,
    NoSubdiv,
    NoOpt,
    Neither,
}

impl From<AblationArg> for AblationVariant {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => AblationVariant::Full,
            AblationArg::NoSubdiv => AblationVariant::NoSubdiv,
            AblationArg::NoOpt => AblationVariant::NoOpt,
            AblationArg::Neither => AblationVariant::Neither,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackArg {
    Cage,
    Ifgm,
    Both,
}

impl From<AttackArg> for AttackSelect {
    fn from(a: AttackArg) -> Self {
        match a {
            AttackArg::Cage => AttackSelect::Cage,
            AttackArg::Ifgm => AttackSelect::Ifgm,
            AttackArg::Both => AttackSelect::Both,
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::desk_default(),
    };
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(samples) = cli.samples {
        config.samples = samples;
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let config = resolve_config(cli)?;
    match &cli.command {
        Command::GenData => {
            let entries = cmd_gen_data(&config)?;
            println!(
                "wrote {} clouds under {}",
                entries.len(),
                config.out_dir.join("dataset").display()
            );
        }
        Command::Train => {
            let out = cmd_train(&config)?;
            println!(
                "trained model at {} (test accuracy {:.4})",
                out.model_path.display(),
                out.test_accuracy
            );
        }
        Command::BuildCage { ablation } => {
            let variant = AblationVariant::from(*ablation);
            let built = cmd_build_cages(&config, variant)?;
            println!("built {built} {} cages", variant.name());
        }
        Command::Attack { attack, ablation } => {
            let variant = AblationVariant::from(*ablation);
            let ran = cmd_attack(&config, variant, AttackSelect::from(*attack))?;
            println!("ran {ran} attacks on the {} variant", variant.name());
        }
        Command::Defend => {
            let rows = cmd_defend(&config)?;
            for row in &rows {
                println!(
                    "{}: undefended {:.4}, srs {:.4}, sor {:.4}",
                    row.attack, row.undefended, row.srs, row.sor
                );
            }
        }
        Command::Report => {
            let report = cmd_report(&config)?;
            println!(
                "wrote {} attack row(s), {} defense row(s), {} ablation row(s) under {}",
                report.naturalness.len(),
                report.defense.len(),
                report.ablation.len(),
                config.out_dir.join("reports").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
