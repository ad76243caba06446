use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use mcds_harness::calibrate::{calibrate, with_deadlines};
use mcds_harness::eval::{check_calibrated, read_json, write_json};
use mcds_harness::{
    emit_report, run_eval, run_sensitivity, run_training, Error, ExperimentConfig, RunSummary,
    SchedulerKind,
};
use mcds_mcts::Ablations;

#[derive(Parser)]
#[command(
    name = "mcds",
    version,
    about = "Surrogate-guided tree-search workflow scheduling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one surrogate per seed with the search in training mode.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the latest checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a scheduler over every seed.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scheduler: SchedulerArgs,
        #[arg(long)]
        psi: Option<usize>,
    },
    /// Derive per-application deadlines from a greedy reference run.
    Calibrate {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate once per value of ψ.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scheduler: SchedulerArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [5, 25, 50, 100])]
        psi: Vec<usize>,
    },
    /// Render CSV tables and plots from `summary.json` files.
    Report {
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SchedulerArgs {
    #[arg(long)]
    scheduler: Option<String>,
    /// Comma-separated ablation flags.
    #[arg(long)]
    ablate: Option<String>,
    /// Training output directory or model file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn apply(config: &mut ExperimentConfig, args: &SchedulerArgs) -> Result<()> {
    if let Some(s) = &args.scheduler {
        config.scheduler = s.parse::<SchedulerKind>()?;
    }
    if let Some(flags) = &args.ablate {
        config.ablations =
            Ablations::parse(flags).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    }
    if let Some(c) = &args.checkpoint {
        config.checkpoint = Some(c.clone());
    }
    Ok(())
}

/// Calibrates in place when the configuration carries no deadlines.
fn ensure_calibrated(config: &mut ExperimentConfig) -> Result<()> {
    if check_calibrated(config).is_err() {
        eprintln!(
            "no deadlines configured; calibrating over {} intervals",
            config.calibration.n_intervals
        );
        let cal = calibrate(config)?;
        *config = with_deadlines(config, &cal);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let config = load(&common)?;
            for run in run_training(&config, resume)? {
                let last = run.losses.last().copied().unwrap_or(f64::NAN);
                println!(
                    "seed {}: {} intervals, final loss {last:.6}, saved to {}",
                    run.seed,
                    run.metrics.len(),
                    run.dir.display()
                );
            }
        }
        Command::Eval {
            common,
            scheduler,
            psi,
        } => {
            let mut config = load(&common)?;
            apply(&mut config, &scheduler)?;
            if let Some(psi) = psi {
                config.search.psi = psi;
            }
            config.validate()?;
            ensure_calibrated(&mut config)?;
            let eval = run_eval(&config)?;
            print_summary(&eval.summary);
        }
        Command::Calibrate { common } => {
            let config = load(&common)?;
            let cal = calibrate(&config)?;
            let dir = &config.output_dir;
            write_json(&dir.join("calibration.json"), &cal)?;
            with_deadlines(&config, &cal).save(&dir.join("config.json"))?;
            for (app, d) in &cal.deadlines {
                println!(
                    "{app}: deadline {d:.3} intervals ({} samples)",
                    cal.responses[app].len()
                );
            }
            println!(
                "violation rate on the calibration run: {:.4}",
                cal.violation_rate()
            );
        }
        Command::Sensitivity {
            common,
            scheduler,
            psi,
        } => {
            let mut config = load(&common)?;
            apply(&mut config, &scheduler)?;
            config.validate()?;
            ensure_calibrated(&mut config)?;
            for row in run_sensitivity(&config, &psi)? {
                println!("ψ = {}", row.psi);
                print_summary(&row.summary);
            }
        }
        Command::Report { out, summaries } => {
            let loaded = summaries
                .iter()
                .map(|p| read_json::<RunSummary>(p))
                .collect::<mcds_harness::Result<Vec<_>>>()?;
            let files = emit_report(&loaded, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!("{} over seeds {:?}", s.label, s.seeds);
    for m in &s.metrics {
        match m.ci {
            Some(ci) => println!("  {:<18} {:>12.6} ± {:.6}", m.name, m.mean, ci.half_width()),
            None => println!("  {:<18} {:>12.6}", m.name, m.mean),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli).context("mcds failed") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .map_or(3, Error::exit_code);
            ExitCode::from(code)
        }
    }
}
