use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmucal_cli::commands::{self, ApplyArgs, CalibrateArgs, CheckArgs, SensitivityArgs, SimulateArgs};
use pmucal_cli::EXIT_USAGE;

#[derive(Parser)]
#[command(name = "pmucal", version, about = "PMU bias calibration with joint line impedance recovery")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic measurement CSV.
    Simulate(SimulateArgs),
    /// Identify channel biases and line parameters from a measurement CSV.
    Calibrate(CalibrateArgs),
    /// Bias estimates under deliberately wrong impedance references.
    Sensitivity(SensitivityArgs),
    /// Compare analytic sensitivities against finite differences.
    CheckDerivatives(CheckArgs),
    /// Remove a report's identified biases from a measurement CSV.
    Apply(ApplyArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let result = match &cli.cmd {
        Cmd::Simulate(a) => commands::simulate(a).map(|_| None),
        Cmd::Calibrate(a) => commands::calibrate_cmd(a).map(Some),
        Cmd::Sensitivity(a) => commands::sensitivity_cmd(a).map(Some),
        Cmd::CheckDerivatives(a) => commands::check_derivatives(a).map(Some),
        Cmd::Apply(a) => commands::apply(a).map(|_| None),
    };
    match result {
        Ok(out) => {
            if let Some(s) = out {
                print!("{s}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
