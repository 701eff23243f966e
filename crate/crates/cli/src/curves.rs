use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use ddfilt::coherence::{coherence_time, decoherence_curve, CurveOptions, DecoherenceCurve, Strategy};
use ddfilt::sequence::{fmt_float, SequenceSet};
use serde::{Deserialize, Serialize};

use crate::manifest::{write_file, RunManifest};
use crate::spectrum_args::SpectrumArgs;
use crate::usage;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CurvesArgs {
    #[command(flatten)]
    pub spectrum: SpectrumArgs,
    /// Comma-separated list from free, cpmg, udd, ofdd, lodd.
    #[arg(long, default_value = "cpmg,udd,ofdd,lodd")]
    pub strategies: String,
    #[arg(long)]
    pub n: usize,
    /// Sequence set for ofdd and lodd.
    #[arg(long)]
    pub set: Option<PathBuf>,
    /// Durations as `start:stop:points` (inclusive, evenly spaced).
    #[arg(long, default_value = "0.1:30:300")]
    pub tau_grid: String,
    #[arg(long, default_value_t = 0.0)]
    pub tau_pi_prime: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    let list: Vec<Strategy> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<Strategy>().map_err(|e| usage(e.to_string())))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(usage("--strategies must name at least one strategy"));
    }
    let mut seen = Vec::new();
    for s in &list {
        if seen.contains(s) {
            return Err(usage(format!("strategy {s} listed twice")));
        }
        seen.push(*s);
    }
    Ok(list)
}

pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || usage(format!("--tau-grid expects start:stop:points, got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, k] = parts.as_slice() else {
        return Err(bad());
    };
    let a: f64 = a.parse().map_err(|_| bad())?;
    let b: f64 = b.parse().map_err(|_| bad())?;
    let k: usize = k.parse().map_err(|_| bad())?;
    if !(a > 0.0 && b > a && b.is_finite()) || k < 2 {
        return Err(bad());
    }
    let h = (b - a) / (k - 1) as f64;
    Ok((0..k).map(|i| if i + 1 == k { b } else { a + h * i as f64 }).collect())
}

pub fn run(args: &CurvesArgs) -> Result<()> {
    let mut args = args.clone();
    args.spectrum.resolve()?;
    let strategies = parse_strategies(&args.strategies)?;
    let grid = parse_grid(&args.tau_grid)?;
    let spectrum = args.spectrum.build()?;
    let needs_set = strategies.iter().any(|s| s.needs_set());
    let set = match (&args.set, needs_set) {
        (Some(p), true) => {
            let set = SequenceSet::load(p)?;
            if set.n() != args.n {
                return Err(usage(format!("set {} holds n={} sequences but --n is {}", p.display(), set.n(), args.n)));
            }
            if set.tau_pi_prime() != args.tau_pi_prime {
                return Err(usage(format!(
                    "set was built for tau_pi'={} but --tau-pi-prime is {}",
                    set.tau_pi_prime(),
                    args.tau_pi_prime
                )));
            }
            Some(set)
        }
        (None, true) => return Err(usage("strategies ofdd and lodd need --set")),
        (_, false) => None,
    };
    let opts = CurveOptions { tau_pi_prime: args.tau_pi_prime, ..CurveOptions::default() };

    let mut curves: Vec<DecoherenceCurve> = Vec::new();
    for s in &strategies {
        curves.push(decoherence_curve(&spectrum, *s, args.n, &grid, set.as_ref(), &opts)?);
    }

    let mut manifest = RunManifest::new("curves", &args, None)?;
    if let Some(p) = &args.set {
        manifest = manifest.input(p);
    }
    if let Some(p) = args.spectrum.input_file() {
        manifest = manifest.input(p);
    }
    let mut combined = format!("# n={}\n# spectrum={}\nstrategy,tau_prime,error\n", args.n, spectrum.id());
    let mut times = String::from("strategy,coherence_time\n");
    for c in &curves {
        let path = args.out.join(format!("{}.csv", c.strategy));
        write_file(&path, &c.to_csv())?;
        manifest = manifest.output(path);
        for (t, e) in &c.points {
            combined.push_str(&format!("{},{},{}\n", c.strategy, fmt_float(*t), fmt_float(*e)));
        }
        match coherence_time(c) {
            Ok(t) => {
                times.push_str(&format!("{},{}\n", c.strategy, fmt_float(t)));
                println!("{:<5} tau_c = {t:.4}", c.strategy);
            }
            Err(_) => {
                times.push_str(&format!("{},\n", c.strategy));
                println!("{:<5} tau_c beyond the grid", c.strategy);
            }
        }
    }
    let combined_path = args.out.join("curves.csv");
    let times_path = args.out.join("coherence_times.csv");
    write_file(&combined_path, &combined)?;
    write_file(&times_path, &times)?;
    manifest.output(combined_path).output(times_path).save(&args.out.join("manifest.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("1:3:3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_grid("1:3").is_err());
        assert!(parse_grid("0:3:4").is_err());
        assert!(parse_grid("3:1:4").is_err());
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!(parse_strategies("cpmg, udd").unwrap(), vec![Strategy::Cpmg, Strategy::Udd]);
        assert!(parse_strategies("").is_err());
        assert!(parse_strategies(" , ").is_err());
        assert!(parse_strategies("cpmg,cpmg").is_err());
        assert!(parse_strategies("xy4").is_err());
    }
}
