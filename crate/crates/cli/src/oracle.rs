use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use ddfilt::coherence::{chi, monte_carlo_error, Strategy, MIN_REALIZATIONS};
use ddfilt::sequence::{cpmg_deltas, fmt_float, udd_deltas};
use ddfilt::FilterEvalContext;
use serde::{Deserialize, Serialize};

use crate::manifest::{sibling, write_file, RunManifest};
use crate::spectrum_args::SpectrumArgs;
use crate::usage;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    /// cpmg or udd pulse placement.
    #[arg(long, default_value = "cpmg")]
    pub strategy: String,
    #[arg(long)]
    pub tau_prime: f64,
    /// Only instantaneous pulses are simulated; anything else is refused.
    #[arg(long, default_value_t = 0.0)]
    pub tau_pi_prime: f64,
    #[arg(long, default_value_t = 10_000)]
    pub realizations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; the manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// Relative tolerance of the agreement flag; the statistical bound is
/// three standard errors.
pub const RELATIVE_TOLERANCE: f64 = 0.05;

pub fn run(args: &OracleArgs) -> Result<()> {
    let mut args = args.clone();
    args.spectrum.resolve()?;
    if args.tau_pi_prime != 0.0 {
        return Err(usage("the Monte Carlo oracle supports instantaneous pulses only (--tau-pi-prime 0)"));
    }
    let deltas = match args.strategy.parse::<Strategy>().map_err(|e| usage(e.to_string()))? {
        Strategy::Cpmg => cpmg_deltas(args.n),
        Strategy::Udd => udd_deltas(args.n),
        Strategy::Free if args.n == 0 => Vec::new(),
        other => return Err(usage(format!("the oracle compares cpmg or udd sequences, not {other}"))),
    };
    let spectrum = args.spectrum.build()?;
    let ctx = FilterEvalContext::new(deltas, args.tau_prime, 0.0)?;
    let analytic = chi(&spectrum, &ctx)?.error;
    let mc = monte_carlo_error(&spectrum, &ctx, args.realizations, args.seed)?;
    let bound = (RELATIVE_TOLERANCE * analytic).max(3.0 * mc.standard_error);
    let agree = (mc.error - analytic).abs() <= bound;
    let sufficient = args.realizations >= MIN_REALIZATIONS;

    let csv = format!(
        "n,tau_prime,analytic_error,mc_error,standard_error,realizations,agree,sufficient_statistics\n{},{},{},{},{},{},{},{}\n",
        args.n,
        fmt_float(args.tau_prime),
        fmt_float(analytic),
        fmt_float(mc.error),
        fmt_float(mc.standard_error),
        mc.realizations,
        agree,
        sufficient
    );
    write_file(&args.out, &csv)?;
    let mut manifest = RunManifest::new("oracle", &args, Some(args.seed))?.output(&args.out);
    if let Some(p) = args.spectrum.input_file() {
        manifest = manifest.input(p);
    }
    manifest.save(&sibling(&args.out, ".manifest.json"))?;

    println!("analytic {analytic:.6e}  monte carlo {:.6e} +/- {:.1e}  agree={agree}", mc.error, mc.standard_error);
    if !sufficient {
        println!("warning: insufficient statistics ({} < {MIN_REALIZATIONS} realizations)", args.realizations);
    }
    Ok(())
}
