use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use sbp_dp::experiment::{configure_threads, run, ExperimentConfig, ExperimentKind, Outcome};
use sbp_dp::SbpError;

/// Degree-preserving SBP operators, non-conforming SAT coupling and the
/// accompanying numerical experiments.
#[derive(Parser)]
#[command(name = "sbp-dp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convergence study over mesh levels.
    Converge(RunArgs),
    /// Long-time mass and energy trace.
    Conserve(RunArgs),
    /// Eigenvalues of the assembled semi-discrete operator.
    Spectrum(RunArgs),
    /// Largest stable CFL number from the spectrum.
    MaxCfl(RunArgs),
    /// Construct and certify one 1D operator.
    BuildOperator(RunArgs),
    /// Construct one interface projection pair.
    BuildProjection(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Run mesh levels concurrently.
    #[arg(long)]
    parallel: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::Converge(a) => (ExperimentKind::Converge, a),
            Command::Conserve(a) => (ExperimentKind::Conserve, a),
            Command::Spectrum(a) => (ExperimentKind::Spectrum, a),
            Command::MaxCfl(a) => (ExperimentKind::MaxCfl, a),
            Command::BuildOperator(a) => (ExperimentKind::BuildOperator, a),
            Command::BuildProjection(a) => (ExperimentKind::BuildProjection, a),
        }
    }
}

fn report(outcome: &Outcome) {
    match outcome {
        Outcome::Converge { rows } => {
            println!("{:>10}  {:>12}  {:>6}", "DOFS", "L2", "EOC");
            for r in rows {
                let eoc = r.eoc.map_or(String::new(), |e| format!("{e:.2}"));
                println!("{:>10}  {:>12.3e}  {:>6}", r.dofs, r.l2_error, eoc);
            }
        }
        Outcome::Conserve(s) => {
            println!("dofs {}  steps {}  dt {:.4e}", s.dofs, s.steps, s.dt);
            println!("mass drift (final / max): {:.3e} / {:.3e}", s.mass_drift_final, s.mass_drift_max);
            println!(
                "energy E(T)/E(0) = {:.12}  max |E/E0 - 1| = {:.3e}  increasing steps: {}",
                s.energy_final / s.energy_initial,
                s.energy_max_relative_deviation,
                s.energy_increases
            );
        }
        Outcome::Spectrum { method, report } => {
            println!(
                "dim {}  method {:?}  max Re = {:.3e}  max |Re| = {:.3e}  ||A|| = {:.3e}",
                report.dim, method, report.max_real, report.max_abs_real, report.norm
            );
        }
        Outcome::MaxCfl { levels, max_cfl } => {
            for l in levels {
                println!("level {}  dofs {}  max CFL {:.3}", l.level, l.dofs, l.report.max_cfl);
            }
            println!("max CFL {max_cfl:.3}");
        }
        Outcome::BuildOperator { certificate, file } => {
            println!(
                "{:?} p={} N={} bp={} norm degree {} -> {}",
                certificate.kind,
                certificate.p,
                certificate.n,
                certificate.bp,
                certificate.norm_degree,
                file.display()
            );
        }
        Outcome::BuildProjection(s) => {
            println!(
                "degree {} on {} glue nodes; condition residuals {:?}",
                s.degree, s.glue_nodes, s.condition_residuals
            );
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .chain()
                .find_map(|e| e.downcast_ref::<SbpError>())
                .is_none_or(SbpError::is_validation);
            ExitCode::from(if validation { 2 } else { 3 })
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SBP_DP_THREADS") {
        let threads: usize = v
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| SbpError::Configuration(format!("SBP_DP_THREADS must be a positive integer, got {v:?}")))?;
        configure_threads(threads)?;
    }
    let (kind, args) = cli.command.split();
    let cfg = ExperimentConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if cfg.experiment != kind {
        bail!(SbpError::Configuration(format!(
            "config describes a {} experiment, not {}",
            cfg.experiment.name(),
            kind.name()
        )));
    }
    let manifest = run(&cfg, &args.out, args.parallel).with_context(|| format!("running {}", kind.name()))?;
    report(&manifest.outcome);
    println!("manifest: {}", args.out.join("manifest.json").display());
    Ok(())
}
