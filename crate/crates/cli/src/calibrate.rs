use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Result;
use clap::Args;
use ddfilt::calibration::{
    calibrate, format_response, parse_request, ErrorProbe, ExternalProbe, GoldenOptions, Measurement, RecordingProbe,
    SimulatedProbe,
};
use ddfilt::coherence::Strategy;
use ddfilt::sequence::{fmt_float, PulseSequence, SequenceSet};
use serde::{Deserialize, Serialize};

use crate::manifest::{write_file, RunManifest};
use crate::usage;

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ProbeSimArgs {
    /// Spectrum of the simulated probe: ohmic, one-over-f or ambient.
    #[arg(long, default_value = "ohmic")]
    pub probe_spectrum: String,
    #[arg(long, default_value_t = 1.0)]
    pub probe_alpha: f64,
    /// Hidden cutoff ω_D of the simulated probe in rad/s.
    #[arg(long)]
    pub probe_omega_d: Option<f64>,
    /// Averages per measurement; omit for a noiseless probe.
    #[arg(long)]
    pub shots: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ProbeSimArgs {
    fn build(&self, tau_pi: f64) -> Result<SimulatedProbe> {
        let omega_d = self.probe_omega_d.ok_or_else(|| usage("the simulated probe needs --probe-omega-d"))?;
        let mut spec = crate::spectrum_args::SpectrumArgs {
            spectrum: self.probe_spectrum.clone(),
            alpha: self.probe_alpha,
            gamma: None,
            cutoff: None,
            omega_low: None,
        };
        spec.resolve()?;
        let spectrum = spec.build()?.with_omega_d(omega_d)?;
        Ok(SimulatedProbe::new(spectrum, tau_pi, self.shots, self.seed)?)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CalibrateArgs {
    /// `sim` or `exec:<command line>`.
    #[arg(long, default_value = "sim")]
    pub probe: String,
    #[command(flatten)]
    pub sim: ProbeSimArgs,
    /// π-pulse duration applied by the probe, in seconds.
    #[arg(long, default_value_t = 0.0)]
    pub tau_pi: f64,
    #[arg(long)]
    pub set: PathBuf,
    /// Expected pulse count; checked against the set.
    #[arg(long)]
    pub n: Option<usize>,
    /// Sequence used to measure the coherence time (cpmg or udd).
    #[arg(long, default_value = "cpmg")]
    pub strategy: String,
    /// Shortest and longest durations (s) to try when measuring τ_c.
    #[arg(long)]
    pub min_duration: Option<f64>,
    #[arg(long)]
    pub max_duration: Option<f64>,
    /// Per-call timeout for exec probes, in seconds.
    #[arg(long, default_value_t = 60.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = GoldenOptions::default().bracket_spacings)]
    pub bracket_spacings: f64,
    #[arg(long, default_value_t = GoldenOptions::default().noise_factor)]
    pub noise_factor: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Report {
    tau_c: f64,
    tau_c_standard_error: f64,
    coherence_measurements: usize,
    tau_prime_opt: f64,
    entry_index: usize,
    omega_d_estimate: f64,
    omega_d_tau_pi: f64,
    iterations: usize,
    error: f64,
    standard_error: f64,
    probe_calls: usize,
}

fn transcript_csv(calls: &[(PulseSequence, Measurement)]) -> String {
    let mut out = String::from("call,tau,tau_pi,n,deltas,error,standard_error\n");
    for (i, (s, m)) in calls.iter().enumerate() {
        let deltas: Vec<String> = s.deltas().iter().map(|d| fmt_float(*d)).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i + 1,
            fmt_float(s.tau()),
            fmt_float(s.tau_pi()),
            s.n(),
            deltas.join(";"),
            fmt_float(m.error),
            fmt_float(m.standard_error)
        ));
    }
    out
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let strategy: Strategy = args.strategy.parse().map_err(|e: ddfilt::Error| usage(e.to_string()))?;
    if !matches!(strategy, Strategy::Cpmg | Strategy::Udd) {
        return Err(usage("--strategy must be cpmg or udd"));
    }
    if args.timeout.is_nan() || args.timeout <= 0.0 || args.timeout.is_infinite() {
        return Err(usage("--timeout must be a positive number of seconds"));
    }
    let set = SequenceSet::load(&args.set)?;
    if let Some(n) = args.n {
        if n != set.n() {
            return Err(usage(format!("set holds n={} sequences but --n is {n}", set.n())));
        }
    }
    let opts = GoldenOptions {
        bracket_spacings: args.bracket_spacings,
        noise_factor: args.noise_factor,
        ..GoldenOptions::default()
    };

    let probe: Box<dyn ErrorProbe> = if args.probe == "sim" {
        let mut p = args.sim.build(args.tau_pi)?;
        if args.min_duration.is_some() || args.max_duration.is_some() {
            let caps = p.capabilities();
            p = p.with_duration_range(
                args.min_duration.unwrap_or(caps.min_duration),
                args.max_duration.unwrap_or(caps.max_duration),
            )?;
        }
        Box::new(p)
    } else if let Some(cmd) = args.probe.strip_prefix("exec:") {
        let p = ExternalProbe::from_command_line(cmd, args.tau_pi, Duration::from_secs_f64(args.timeout))?;
        Box::new(p.with_duration_range(args.min_duration.unwrap_or(1e-6), args.max_duration.unwrap_or(10.0)))
    } else {
        return Err(usage(format!("unknown probe '{}'; expected sim or exec:<command>", args.probe)));
    };

    let mut recorder = RecordingProbe::new(probe);
    let outcome = calibrate(&mut recorder, &set, strategy, &opts);
    let (_, calls) = recorder.into_inner();
    let transcript_path = args.out.join("transcript.csv");
    write_file(&transcript_path, &transcript_csv(&calls))?;
    let (tc, result) = outcome?;

    let report = Report {
        tau_c: tc.tau_c,
        tau_c_standard_error: tc.standard_error,
        coherence_measurements: tc.measurements,
        tau_prime_opt: result.tau_prime_opt,
        entry_index: result.entry_index,
        omega_d_estimate: result.omega_d_estimate,
        omega_d_tau_pi: result.omega_d_estimate * args.tau_pi,
        iterations: result.iterations,
        error: result.error,
        standard_error: result.standard_error,
        probe_calls: calls.len(),
    };
    let report_path = args.out.join("calibration.json");
    write_file(&report_path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    RunManifest::new("calibrate", args, Some(args.sim.seed))?
        .input(&args.set)
        .output(&report_path)
        .output(&transcript_path)
        .save(&args.out.join("manifest.json"))?;

    println!("tau_c          = {:.6e} s", report.tau_c);
    println!("tau'_opt       = {:.4} (entry {})", report.tau_prime_opt, report.entry_index);
    println!("omega_D        = {:.6e} rad/s", report.omega_d_estimate);
    println!("omega_D tau_pi = {:.3}", report.omega_d_tau_pi);
    println!("iterations     = {}", report.iterations);
    println!("error at opt   = {:.4e} +/- {:.1e}", report.error, report.standard_error);
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct ServeProbeArgs {
    #[command(flatten)]
    pub sim: ProbeSimArgs,
}

/// Answers `MEASURE` requests from stdin until it closes.
pub fn serve_probe(args: &ServeProbeArgs) -> Result<()> {
    let mut probe = args.sim.build(0.0)?.with_duration_range(1e-300, f64::MAX)?;
    let stdin = io::stdin();
    let mut stdout = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = parse_request(&line).and_then(|seq| probe.measure(&seq));
        match reply {
            Ok(m) => writeln!(stdout, "{}", format_response(&m))?,
            Err(e) => writeln!(stdout, "ERR {e}")?,
        }
        stdout.flush()?;
    }
    Ok(())
}
