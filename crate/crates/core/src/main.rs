use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cavityq::analysis;
use cavityq::config::{load_config, RunConfig};
use cavityq::scan::{self, Emit};
use cavityq::{angular_to_mhz, Error, Result};

#[derive(Parser)]
#[command(name = "cavityq", version, about = "Cavity / spin-ensemble dynamics: simulate, scan, validate, poles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write the cavity trace.
    Simulate(Common),
    /// Sweep omega_p, Omega or tau and write the summary table (and map).
    Scan(Common),
    /// Compare the Volterra solver against the finite-N ODE reference.
    Validate(Common),
    /// Dominant Laplace poles and closed-form decay rates.
    Poles(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file; defaults to `output.path` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for scans; overrides the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Omit the timestamp so identical runs give identical files.
    #[arg(long)]
    reproducible: bool,
}

fn prepare(common: &Common, subcommand: &str) -> Result<(RunConfig, Emit)> {
    let mut config = load_config(&common.config)?;
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(Error::validation("--workers", "must be >= 1"));
        }
        config.workers = w;
    }
    let emit = Emit {
        path: scan::output_path(common.out.as_deref(), &config, subcommand),
        format: config.output.format,
        reproducible: common.reproducible,
    };
    Ok((config, emit))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate(c) => {
            let (config, emit) = prepare(&c, "simulate")?;
            let sim = scan::run_simulate(&config, &emit)?;
            println!("wrote {} ({} samples)", emit.path.display(), sim.trajectory.len());
            if let Some(off) = sim.protocol.last_drive_off() {
                if let Ok((_, t_r)) = analysis::extract_rabi(&sim.trajectory, off) {
                    println!("rabi period after switch-off: {t_r:.2} ns");
                }
                if let Ok(g) = analysis::extract_decay_rate(&sim.trajectory, off) {
                    println!("decay rate after switch-off: 2pi x {:.3} MHz", angular_to_mhz(g));
                }
            }
            Ok(true)
        }
        Command::Scan(c) => {
            let (config, emit) = prepare(&c, "scan")?;
            let result = scan::run_scan(&config, &emit)?;
            let failed = result.records.iter().filter(|r| r.status != "ok").count();
            println!("wrote {} ({} points, {failed} failed)", emit.path.display(), result.records.len());
            for (k, v) in &result.summary {
                println!("{k}: {v:.4}");
            }
            Ok(true)
        }
        Command::Validate(c) => {
            let (config, emit) = prepare(&c, "validate")?;
            let report = scan::run_validate(&config, &emit)?;
            for check in &report.checks {
                println!(
                    "{} {} = {:.3e} (threshold {:.0e})",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.check,
                    check.value,
                    check.threshold
                );
            }
            println!("wrote {}", emit.path.display());
            Ok(report.pass)
        }
        Command::Poles(c) => {
            let (config, emit) = prepare(&c, "poles")?;
            let rows = scan::run_poles(&config, &emit)?;
            for row in &rows {
                match &row.poles {
                    Some(p) => println!(
                        "Omega = {:.3} MHz: s+ = {:.6}, s- = {:.6}, gamma = 2pi x {:.3} MHz, Omega_R = 2pi x {:.3} MHz",
                        row.omega_mhz,
                        p.s_plus,
                        p.s_minus,
                        angular_to_mhz(p.gamma()),
                        angular_to_mhz(p.rabi_splitting())
                    ),
                    None => println!("Omega = {:.3} MHz: {}", row.omega_mhz, row.status),
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
