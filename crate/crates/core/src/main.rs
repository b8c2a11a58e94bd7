use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crossfv::scenario::{
    resolve_scenario, run_convergence, run_ode, run_scenario, run_stationary_analysis,
    Mode, RunOptions, Scenario,
};
use crossfv::stationary::StationaryClassification;
use crossfv::Error;

/// Finite-volume simulator for a two-phase cross-diffusion mixture coupled
/// across a moving interface.
#[derive(Parser)]
#[command(name = "crossfv", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario (PDE or ODE mode, per its configuration)
    Run {
        /// Builtin preset name or path to a config file
        config: String,
        /// Output directory (overrides the scenario setting)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Abort with exit code 4 on any structural invariant breach
        #[arg(long)]
        strict_invariants: bool,
        /// Comma-separated snapshot times (overrides the scenario setting)
        #[arg(long, value_delimiter = ',')]
        snapshot_times: Option<Vec<f64>>,
    },
    /// Classify the stationary states for a scenario's initial masses
    Stationary {
        config: String,
    },
    /// Mesh-refinement study against a fine-grid reference solution
    Converge {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Use the full ladder 2^3..2^10 against a 2^11 reference
        #[arg(long)]
        full: bool,
        #[arg(long)]
        strict_invariants: bool,
    },
}

fn apply_overrides(scenario: &mut Scenario, out: Option<PathBuf>, snapshots: Option<Vec<f64>>) {
    if let Some(dir) = out {
        scenario.output_dir = dir;
    }
    if let Some(times) = snapshots {
        scenario.snapshot_times = times;
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Invariant(_) => 4,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out, strict_invariants, snapshot_times } => {
            let mut scenario = resolve_scenario(&config)?;
            apply_overrides(&mut scenario, out, snapshot_times);
            match scenario.mode {
                Mode::Ode => {
                    let options = RunOptions { strict_invariants, ..Default::default() };
                    let report = run_ode(&scenario, &options)?;
                    let last = report.times.len() - 1;
                    println!(
                        "ode run '{}': t = {:.6}, X = {:.12}, H = {:.12}",
                        scenario.name, report.times[last], report.xs[last], report.energies[last]
                    );
                    if let Some(event) = &report.extinction {
                        println!("phase extinction at t = {:.6}: {}", event.time, event.reason);
                    }
                    for path in &report.written {
                        println!("wrote {}", path.display());
                    }
                }
                Mode::Converge => {
                    let options = RunOptions { strict_invariants, ..Default::default() };
                    let study = run_convergence(&scenario, false, &options)?;
                    print_study(&study);
                }
                Mode::Stationary => {
                    print_stationary(&run_stationary_analysis(&scenario)?);
                }
                Mode::Pde => {
                    let options = RunOptions { strict_invariants, ..Default::default() };
                    let report = run_scenario(&scenario, &options)?;
                    let last = report.records.last().unwrap();
                    println!(
                        "run '{}': {} steps to t = {:.6}, X = {:.12}, H = {:.12}",
                        scenario.name, report.newton.steps, last.t, last.x, last.h
                    );
                    println!(
                        "invariants: volume filling {:.2e}, min c {:.2e}, mass drift {:.2e}, max dH {:.2e}",
                        report.summary.max_volume_filling,
                        report.summary.min_concentration,
                        report.summary.max_mass_drift_rel,
                        report.summary.max_energy_increase,
                    );
                    if !report.breaches.is_empty() {
                        eprintln!("warning: {} invariant breach(es); first: {}", report.breaches.len(), report.breaches[0]);
                    }
                    for path in &report.written {
                        println!("wrote {}", path.display());
                    }
                }
            }
            Ok(())
        }
        Command::Stationary { config } => {
            let scenario = resolve_scenario(&config)?;
            print_stationary(&run_stationary_analysis(&scenario)?);
            Ok(())
        }
        Command::Converge { config, out, full, strict_invariants } => {
            let mut scenario = resolve_scenario(&config)?;
            apply_overrides(&mut scenario, out, None);
            let options = RunOptions { strict_invariants, ..Default::default() };
            let study = run_convergence(&scenario, full, &options)?;
            print_study(&study);
            Ok(())
        }
    }
}

fn print_study(study: &crossfv::scenario::ConvergenceStudy) {
    println!("reference grid: {} cells, dt = {}", study.reference_cells, study.dt_used);
    println!("{:>6} {:>12} {:>14} {:>14}", "N", "dx", "error_c", "error_X");
    for level in &study.levels {
        println!(
            "{:>6} {:>12.6e} {:>14.6e} {:>14.6e}",
            level.n_cells, level.dx, level.error_c, level.error_x
        );
    }
    println!(
        "fitted spatial order: concentrations {:.3} (r2 = {:.4}), interface {:.3}",
        study.order_c, study.r2_c, study.order_x
    );
    for path in &study.written {
        println!("wrote {}", path.display());
    }
}

fn print_stationary((m0, classification): &(Vec<f64>, StationaryClassification)) {
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.12}")).collect::<Vec<_>>().join(", ");
    println!("initial masses: ({})", fmt(m0));
    match classification {
        StationaryClassification::IndistinguishableFamily { composition } => {
            println!("indistinguishable phases: stationary family (m0, m0, X) for any X in (0,1)");
            println!("composition: ({})", fmt(composition));
        }
        StationaryClassification::TwoPhase(st) => {
            println!("two-phase stationary state exists and is unique:");
            println!("  X = {:.12}", st.x);
            println!("  solid composition: ({})", fmt(&st.c_s));
            println!("  gas composition:   ({})", fmt(&st.c_g));
        }
        StationaryClassification::PureOnly { solid, gas } => {
            println!("no two-phase stationary state; only the pure states remain:");
            println!("  solid: X = {}, composition ({})", solid.x, fmt(&solid.c_s));
            println!("  gas:   X = {}, composition ({})", gas.x, fmt(&gas.c_g));
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
