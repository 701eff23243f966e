use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use ddfilt::filter::tau_f1;
use ddfilt::optimize::{build_ofdd_set_observed, convergence_log_csv, OptimizerConfig, TauGrid, MAX_PULSES};
use ddfilt::sequence::{Generator, SequenceSet};
use serde::{Deserialize, Serialize};

use crate::manifest::{sibling, write_file, RunManifest};
use crate::usage;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OfddArgs {
    /// Number of π-pulses.
    #[arg(long)]
    pub n: usize,
    /// Pulse duration in units of 1/ω_D.
    #[arg(long, default_value_t = 0.0)]
    pub tau_pi_prime: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tau_min: f64,
    /// Longest duration (default 2nπ).
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Number of grid points.
    #[arg(long, default_value_t = 3000)]
    pub grid: usize,
    #[arg(long, default_value_t = OptimizerConfig::default().restarts)]
    pub restarts: usize,
    #[arg(long, default_value_t = OptimizerConfig::default().min_gap)]
    pub min_gap: f64,
    /// Output set file; the convergence log and manifest are written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &OfddArgs) -> Result<()> {
    if args.n > MAX_PULSES {
        return Err(usage(format!("n={} exceeds the supported maximum of {MAX_PULSES} pulses", args.n)));
    }
    if args.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let mut args = args.clone();
    let tau_max = *args.tau_max.get_or_insert(2.0 * args.n as f64 * std::f64::consts::PI);
    let config = OptimizerConfig {
        grid: TauGrid::new(args.tau_min, tau_max, args.grid),
        restarts: args.restarts,
        min_gap: args.min_gap,
        ..OptimizerConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let mut partial = Vec::new();
    let build =
        build_ofdd_set_observed(args.n, args.tau_pi_prime, &config, &mut |entry, _| partial.push(entry.clone()));
    let build = match build {
        Ok(b) => b,
        Err(e) => {
            if !partial.is_empty() {
                let path = partial_path(&args.out);
                let set =
                    SequenceSet::new(args.n, args.tau_pi_prime, Generator::Ofdd, partial)?.with_meta("partial", "true");
                write_file(&path, &set.to_text())?;
                eprintln!("wrote {} entries before the failure to {}", set.len(), path.display());
            }
            return Err(e.into());
        }
    };

    let log_path = sibling(&args.out, ".convergence.csv");
    let manifest_path = sibling(&args.out, ".manifest.json");
    write_file(&args.out, &build.set.to_text())?;
    write_file(&log_path, &convergence_log_csv(&build.log))?;
    RunManifest::new("ofdd", &args, None)?.output(&args.out).output(&log_path).save(&manifest_path)?;

    println!("wrote {} sequences to {}", build.set.len(), args.out.display());
    match tau_f1(&build.set) {
        Ok(t) => println!("tau_F1 = {t:.6}"),
        Err(e) => println!("tau_F1 unavailable: {e}"),
    }
    if !build.branch_jumps.is_empty() {
        println!("warning: {} branch jump(s), first at tau'={:.4}", build.branch_jumps.len(), build.branch_jumps[0]);
    }
    let stalled = build.log.iter().filter(|r| !r.converged).count();
    if stalled > 0 {
        println!("warning: {stalled} grid point(s) hit the iteration limit");
    }
    Ok(())
}

fn partial_path(out: &std::path::Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}
