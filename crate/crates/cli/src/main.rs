//! `ddfilt`: build optimized decoupling sequence sets, predict decoherence
//! curves, calibrate a set against a probe, and cross-check the analytic
//! model with a Monte Carlo simulation.

mod calibrate;
mod curves;
mod manifest;
mod ofdd;
mod oracle;
mod spectrum_args;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "ddfilt", version, about = "Filter-function optimized dynamical decoupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build an OFDD sequence set by continuation in τ'.
    Ofdd(ofdd::OfddArgs),
    /// Decoherence curves for several strategies under one spectrum.
    Curves(curves::CurvesArgs),
    /// Scale a set to a probe's noise cutoff with golden-section feedback.
    Calibrate(calibrate::CalibrateArgs),
    /// Compare the analytic error with a time-domain Monte Carlo estimate.
    Oracle(oracle::OracleArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
    /// Serve a simulated probe over the line protocol on stdin/stdout.
    #[command(hide = true)]
    ServeProbe(calibrate::ServeProbeArgs),
}

#[derive(Debug, clap::Args)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failures the user can fix by changing the invocation.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_PROBE: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    use ddfilt::Error as E;
    for cause in err.chain() {
        if cause.downcast_ref::<Usage>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Probe(_) | E::Protocol(_) => EXIT_PROBE,
                E::QuadratureDiverged { .. } | E::NoCrossing(_) | E::Optimizer { .. } | E::NotUnimodal { .. } => {
                    EXIT_NUMERIC
                }
                E::InvalidSequence(_)
                | E::InvalidSet(_)
                | E::InvalidSpectrum(_)
                | E::InvalidConfig(_)
                | E::OutOfCoverage { .. }
                | E::TooManyPulses(_)
                | E::Parse { .. }
                | E::Io(_) => EXIT_USAGE,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_USAGE;
        }
    }
    EXIT_NUMERIC
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DDFILT_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| usage(format!("DDFILT_THREADS must be a positive integer, got '{value}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    manifest.check_version()?;
    let params = manifest.parameters.clone();
    let out = args.out.clone();
    match manifest.subcommand.as_str() {
        "ofdd" => ofdd::run(&with_out(serde_json::from_value::<ofdd::OfddArgs>(params)?, out, |a, o| a.out = o)),
        "curves" => {
            curves::run(&with_out(serde_json::from_value::<curves::CurvesArgs>(params)?, out, |a, o| a.out = o))
        }
        "calibrate" => {
            calibrate::run(&with_out(serde_json::from_value::<calibrate::CalibrateArgs>(params)?, out, |a, o| {
                a.out = o
            }))
        }
        "oracle" => {
            oracle::run(&with_out(serde_json::from_value::<oracle::OracleArgs>(params)?, out, |a, o| a.out = o))
        }
        other => Err(usage(format!("manifest names unknown subcommand '{other}'"))),
    }
}

fn with_out<A>(mut args: A, out: Option<PathBuf>, set: impl FnOnce(&mut A, PathBuf)) -> A {
    if let Some(o) = out {
        set(&mut args, o);
    }
    args
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Ofdd(a) => ofdd::run(a),
        Command::Curves(a) => curves::run(a),
        Command::Calibrate(a) => calibrate::run(a),
        Command::Oracle(a) => oracle::run(a),
        Command::Replay(a) => replay(a),
        Command::ServeProbe(a) => calibrate::serve_probe(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
