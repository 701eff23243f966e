//! Scaling a dimensionless sequence set to an unknown noise cutoff with
//! measurement feedback.
//!
//! The procedure: measure the coherence time `τ_c` with a standard
//! sequence, fix the physical duration at `τ_c`, and search the set's
//! `τ'` axis for the entry with the lowest measured error. The selected
//! `τ'` over `τ_c` estimates `ω_d`, which then scales every entry.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::coherence::{chi_value, coherence_threshold, ChiOptions, CoherenceResult, Strategy};
use crate::error::{Error, Result};
use crate::filter::{tau_f1, FilterEvalContext};
use crate::sequence::{cpmg_deltas, udd_deltas, PulseSequence, SequenceSet};
use crate::spectrum::NoiseSpectrum;

/// What a probe can run. Durations are in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeCapabilities {
    pub max_pulses: usize,
    pub min_duration: f64,
    pub max_duration: f64,
    pub tau_pi: f64,
    /// Averages per `measure` call; `None` for an exact (noiseless) probe.
    pub shots: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub error: f64,
    pub standard_error: f64,
}

/// Anything that can run a pulse sequence and report its error
/// `(1 - W)/2`.
pub trait ErrorProbe {
    fn capabilities(&self) -> ProbeCapabilities;
    fn measure(&mut self, sequence: &PulseSequence) -> Result<Measurement>;
}

impl<P: ErrorProbe + ?Sized> ErrorProbe for &mut P {
    fn capabilities(&self) -> ProbeCapabilities {
        (**self).capabilities()
    }

    fn measure(&mut self, sequence: &PulseSequence) -> Result<Measurement> {
        (**self).measure(sequence)
    }
}

impl<P: ErrorProbe + ?Sized> ErrorProbe for Box<P> {
    fn capabilities(&self) -> ProbeCapabilities {
        (**self).capabilities()
    }

    fn measure(&mut self, sequence: &PulseSequence) -> Result<Measurement> {
        (**self).measure(sequence)
    }
}

/// A probe backed by the analytic coherence integral, with optional
/// binomial shot noise.
///
/// The spectrum's `ω_d` is the hidden ground truth; calibration code only
/// sees it through `measure`.
#[derive(Debug, Clone)]
pub struct SimulatedProbe {
    spectrum: NoiseSpectrum,
    caps: ProbeCapabilities,
    rng: ChaCha8Rng,
    chi: ChiOptions,
}

impl SimulatedProbe {
    /// `spectrum.omega_d()` must carry the physical cutoff in rad/s.
    pub fn new(spectrum: NoiseSpectrum, tau_pi: f64, shots: Option<u64>, seed: u64) -> Result<Self> {
        if !(tau_pi >= 0.0) || !tau_pi.is_finite() {
            return Err(Error::InvalidConfig(format!("pulse duration must be non-negative, got {tau_pi}")));
        }
        if shots == Some(0) {
            return Err(Error::InvalidConfig("shots must be positive".into()));
        }
        let caps = ProbeCapabilities {
            max_pulses: crate::optimize::MAX_PULSES,
            min_duration: 1e-3 / spectrum.omega_d(),
            max_duration: 1e4 / spectrum.omega_d(),
            tau_pi,
            shots,
        };
        Ok(Self { spectrum, caps, rng: ChaCha8Rng::seed_from_u64(seed), chi: ChiOptions::default() })
    }

    pub fn with_duration_range(mut self, min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max > min && max.is_finite()) {
            return Err(Error::InvalidConfig(format!("invalid duration range [{min}, {max}]")));
        }
        self.caps.min_duration = min;
        self.caps.max_duration = max;
        Ok(self)
    }

    /// Independent copy for parallel offline studies.
    pub fn fork(&self, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), ..self.clone() }
    }

    /// Error without shot noise.
    pub fn expected_error(&self, sequence: &PulseSequence) -> Result<f64> {
        let w = self.spectrum.omega_d();
        let ctx = FilterEvalContext::new(sequence.deltas().to_vec(), w * sequence.tau(), w * sequence.tau_pi())?;
        Ok(CoherenceResult::from_chi(chi_value(&self.spectrum, &ctx, &self.chi)?).error)
    }
}

impl ErrorProbe for SimulatedProbe {
    fn capabilities(&self) -> ProbeCapabilities {
        self.caps
    }

    fn measure(&mut self, sequence: &PulseSequence) -> Result<Measurement> {
        check_request(&self.caps, sequence)?;
        let p = self.expected_error(sequence)?;
        let Some(shots) = self.caps.shots else {
            return Ok(Measurement { error: p, standard_error: 0.0 });
        };
        let k = Binomial::new(shots, p.clamp(0.0, 1.0))
            .map_err(|e| Error::Probe(format!("binomial sampling failed: {e}")))?
            .sample(&mut self.rng);
        let est = k as f64 / shots as f64;
        // floor keeps zero-count estimates from claiming zero uncertainty
        let var = (est * (1.0 - est)).max(0.25 / shots as f64) / shots as f64;
        Ok(Measurement { error: est, standard_error: var.sqrt() })
    }
}

fn check_request(caps: &ProbeCapabilities, sequence: &PulseSequence) -> Result<()> {
    if sequence.n() > caps.max_pulses {
        return Err(Error::Probe(format!(
            "probe supports at most {} pulses, asked for {}",
            caps.max_pulses,
            sequence.n()
        )));
    }
    let t = sequence.tau();
    if t < caps.min_duration * (1.0 - 1e-12) || t > caps.max_duration * (1.0 + 1e-12) {
        return Err(Error::Probe(format!(
            "duration {t:e} s outside probe range [{:e}, {:e}]",
            caps.min_duration, caps.max_duration
        )));
    }
    Ok(())
}

/// Formats a request line of the external probe protocol (without the
/// trailing newline).
pub fn format_request(sequence: &PulseSequence) -> String {
    let mut line = format!("MEASURE {:.16e} {:.16e} {}", sequence.tau(), sequence.tau_pi(), sequence.n());
    for d in sequence.deltas() {
        line.push_str(&format!(" {d:.16e}"));
    }
    line
}

/// Parses a request line; the inverse of [`format_request`].
pub fn parse_request(line: &str) -> Result<PulseSequence> {
    let bad = |reason: String| Error::Protocol(format!("{reason} in request '{line}'"));
    let mut it = line.split_ascii_whitespace();
    if it.next() != Some("MEASURE") {
        return Err(bad("missing MEASURE keyword".into()));
    }
    let mut num = |what: &str| -> Result<f64> {
        it.next()
            .ok_or_else(|| bad(format!("missing {what}")))?
            .parse::<f64>()
            .map_err(|e| bad(format!("bad {what}: {e}")))
    };
    let tau = num("duration")?;
    let tau_pi = num("pulse duration")?;
    let n = num("pulse count")?;
    if n.fract() != 0.0 || n < 0.0 {
        return Err(bad(format!("bad pulse count {n}")));
    }
    let deltas = (0..n as usize).map(|j| num(&format!("delta {}", j + 1))).collect::<Result<Vec<_>>>()?;
    if it.next().is_some() {
        return Err(bad("trailing fields".into()));
    }
    PulseSequence::new(deltas, tau, tau_pi)
}

/// Parses a response line: `<error> <stderr>` or `ERR <message>`.
pub fn parse_response(line: &str) -> Result<Measurement> {
    let line = line.trim_end_matches(['\r', '\n']);
    if let Some(msg) = line.strip_prefix("ERR ") {
        return Err(Error::Probe(msg.to_string()));
    }
    let fields: Vec<&str> = line.split_ascii_whitespace().collect();
    let [e, s] = fields.as_slice() else {
        return Err(Error::Protocol(format!("expected '<error> <stderr>', got '{line}'")));
    };
    let parse = |v: &str| v.parse::<f64>().map_err(|err| Error::Protocol(format!("bad number '{v}': {err}")));
    let (error, standard_error) = (parse(e)?, parse(s)?);
    for v in [error, standard_error] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Protocol(format!("value {v} outside [0, 1] in response '{line}'")));
        }
    }
    Ok(Measurement { error, standard_error })
}

/// Formats a response line for a measurement.
pub fn format_response(m: &Measurement) -> String {
    format!("{:.16e} {:.16e}", m.error, m.standard_error)
}

/// A probe implemented by a child process speaking the line protocol on
/// its standard streams.
pub struct ExternalProbe {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
    caps: ProbeCapabilities,
    timeout: Duration,
}

pub const DEFAULT_PROBE_TIMEOUT: Duration = Duration::from_secs(60);

impl ExternalProbe {
    /// Spawns `program` with `args`. The probe is assumed to accept any
    /// duration; `tau_pi` is the pulse duration the hardware applies.
    pub fn spawn(program: &str, args: &[String], tau_pi: f64, timeout: Duration) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Probe(format!("failed to start '{program}': {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        let caps = ProbeCapabilities {
            max_pulses: crate::optimize::MAX_PULSES,
            min_duration: 0.0,
            max_duration: f64::INFINITY,
            tau_pi,
            shots: None,
        };
        Ok(Self { child, stdin, lines: rx, caps, timeout })
    }

    /// Splits a shell-like command string on whitespace and spawns it.
    pub fn from_command_line(command: &str, tau_pi: f64, timeout: Duration) -> Result<Self> {
        let mut parts = command.split_ascii_whitespace().map(str::to_string);
        let program = parts.next().ok_or_else(|| Error::Probe("empty probe command".into()))?;
        let args: Vec<String> = parts.collect();
        Self::spawn(&program, &args, tau_pi, timeout)
    }

    pub fn with_duration_range(mut self, min: f64, max: f64) -> Self {
        self.caps.min_duration = min;
        self.caps.max_duration = max;
        self
    }
}

impl ErrorProbe for ExternalProbe {
    fn capabilities(&self) -> ProbeCapabilities {
        self.caps
    }

    fn measure(&mut self, sequence: &PulseSequence) -> Result<Measurement> {
        check_request(&self.caps, sequence)?;
        writeln!(self.stdin, "{}", format_request(sequence))
            .and_then(|_| self.stdin.flush())
            .map_err(|e| Error::Probe(format!("failed to write request: {e}")))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => parse_response(&line),
            Ok(Err(e)) => Err(Error::Probe(format!("failed to read response: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(Error::Probe(format!("no response within {:?}", self.timeout))),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Probe("probe process closed its output".into())),
        }
    }
}

impl Drop for ExternalProbe {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Records every probe call, for transcripts.
pub struct RecordingProbe<P> {
    inner: P,
    pub transcript: Vec<(PulseSequence, Measurement)>,
}

impl<P: ErrorProbe> RecordingProbe<P> {
    pub fn new(inner: P) -> Self {
        Self { inner, transcript: Vec::new() }
    }

    pub fn into_inner(self) -> (P, Vec<(PulseSequence, Measurement)>) {
        (self.inner, self.transcript)
    }
}

impl<P: ErrorProbe> ErrorProbe for RecordingProbe<P> {
    fn capabilities(&self) -> ProbeCapabilities {
        self.inner.capabilities()
    }

    fn measure(&mut self, sequence: &PulseSequence) -> Result<Measurement> {
        let m = self.inner.measure(sequence)?;
        self.transcript.push((sequence.clone(), m));
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredCoherenceTime {
    /// Seconds.
    pub tau_c: f64,
    pub standard_error: f64,
    pub measurements: usize,
}

/// Refinement steps of the log-bisection after the crossing is bracketed.
pub const COHERENCE_BISECTIONS: usize = 24;

/// Measures `τ_c` with CPMG or UDD: doubles the duration from the probe's
/// minimum until the error reaches `1/e` of its asymptotic value, then
/// bisects the bracket geometrically and interpolates linearly.
pub fn measure_coherence_time<P: ErrorProbe + ?Sized>(
    probe: &mut P,
    n: usize,
    strategy: Strategy,
) -> Result<MeasuredCoherenceTime> {
    let deltas = match strategy {
        Strategy::Cpmg => cpmg_deltas(n),
        Strategy::Udd => udd_deltas(n),
        other => return Err(Error::InvalidConfig(format!("coherence time is measured with cpmg or udd, not {other}"))),
    };
    let caps = probe.capabilities();
    if n > caps.max_pulses {
        return Err(Error::Probe(format!("probe supports at most {} pulses, asked for {n}", caps.max_pulses)));
    }
    let threshold = coherence_threshold();
    let mut count = 0usize;
    let mut run = |tau: f64| -> Result<Measurement> {
        count += 1;
        probe.measure(&PulseSequence::new(deltas.clone(), tau, caps.tau_pi)?)
    };
    let shortest = caps.min_duration.max(n as f64 * caps.tau_pi * (1.0 + 1e-9)).max(f64::MIN_POSITIVE);
    let mut lo = (shortest, run(shortest)?);
    if lo.1.error >= threshold {
        return Err(Error::NoCrossing(format!(
            "error already {:.4} at the shortest duration {shortest:e} s",
            lo.1.error
        )));
    }
    let mut hi;
    loop {
        let next = lo.0 * 2.0;
        if next > caps.max_duration {
            return Err(Error::NoCrossing(format!(
                "error stays below {threshold:.5} up to the probe's longest duration {:e} s",
                caps.max_duration
            )));
        }
        let m = run(next)?;
        if m.error >= threshold {
            hi = (next, m);
            break;
        }
        lo = (next, m);
    }
    for _ in 0..COHERENCE_BISECTIONS {
        let mid = (lo.0 * hi.0).sqrt();
        if !(mid > lo.0 && mid < hi.0) {
            break;
        }
        let m = run(mid)?;
        if m.error >= threshold {
            hi = (mid, m);
        } else {
            lo = (mid, m);
        }
    }
    let (t0, m0) = lo;
    let (t1, m1) = hi;
    let slope = (m1.error - m0.error) / (t1 - t0);
    let tau_c = if slope > 0.0 { t0 + (threshold - m0.error) / slope } else { 0.5 * (t0 + t1) };
    let noise = 0.5 * (m0.standard_error.hypot(m1.standard_error));
    let standard_error = if slope > 0.0 { (noise / slope).hypot(t1 - t0) } else { t1 - t0 };
    debug!("tau_c = {tau_c:e} s after {count} measurements");
    Ok(MeasuredCoherenceTime { tau_c, standard_error, measurements: count })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenOptions {
    /// Stop once the bracket spans fewer than this many grid spacings.
    pub bracket_spacings: f64,
    /// Stop once the four bracket errors agree within this many combined
    /// standard errors.
    pub noise_factor: f64,
    pub max_iterations: usize,
    /// Half-width of the initial bracket relative to `τ'_{F=1}`.
    pub bracket_half_width: f64,
}

impl Default for GoldenOptions {
    fn default() -> Self {
        Self { bracket_spacings: 3.0, noise_factor: 2.0, max_iterations: 60, bracket_half_width: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    /// The fixed physical duration the search ran at (seconds).
    pub tau_c: f64,
    pub tau_prime_opt: f64,
    pub entry_index: usize,
    /// rad/s.
    pub omega_d_estimate: f64,
    pub iterations: usize,
    pub error: f64,
    pub standard_error: f64,
    /// Every sampled `(τ', error, standard error)`, sorted by `τ'`.
    pub profile: Vec<(f64, f64, f64)>,
}

/// Golden-section search over the set's `τ'` index at fixed physical
/// duration `tau_fixed`. The initial bracket is centered on the entry
/// where the filter function at the cutoff reaches one.
pub fn golden_section_select<P: ErrorProbe + ?Sized>(
    probe: &mut P,
    set: &SequenceSet,
    tau_fixed: f64,
    opts: &GoldenOptions,
) -> Result<CalibrationResult> {
    if !(tau_fixed > 0.0) || !tau_fixed.is_finite() {
        return Err(Error::InvalidConfig(format!("duration must be positive, got {tau_fixed}")));
    }
    if opts.bracket_spacings < 1.0 || opts.noise_factor < 0.0 || !(opts.bracket_half_width > 0.0) {
        return Err(Error::InvalidConfig("invalid golden-section options".into()));
    }
    let entries = set.entries();
    let tau_pi = probe.capabilities().tau_pi;
    let mut cache: BTreeMap<usize, Measurement> = BTreeMap::new();
    let mut eval = |i: usize, probe: &mut P| -> Result<Measurement> {
        if let Some(m) = cache.get(&i) {
            return Ok(*m);
        }
        let seq = PulseSequence::new(entries[i].deltas.clone(), tau_fixed, tau_pi)?;
        let m = probe.measure(&seq)?;
        cache.insert(i, m);
        Ok(m)
    };

    let (mut a, mut b) = if entries.len() == 1 {
        (0, 0)
    } else {
        let centre = tau_f1(set)?;
        let lo = centre * (1.0 - opts.bracket_half_width);
        let hi = centre * (1.0 + opts.bracket_half_width);
        let (mut a, mut b) = (set.nearest_index(lo), set.nearest_index(hi));
        // Entries built for shorter pulses may overlap at this duration;
        // keep the contiguous runnable stretch around the centre.
        let runnable = |i: usize| crate::sequence::check_deltas(&entries[i].deltas, tau_pi / tau_fixed).is_ok();
        let mid = set.nearest_index(centre);
        if !runnable(mid) {
            return Err(Error::InvalidConfig(format!(
                "set entry at tau'={:.4} cannot run with {tau_pi:e} s pulses in {tau_fixed:e} s",
                entries[mid].tau_prime
            )));
        }
        let mut i = mid;
        while i > a && runnable(i - 1) {
            i -= 1;
        }
        a = i;
        i = mid;
        while i < b && runnable(i + 1) {
            i += 1;
        }
        b = i;
        (a, b)
    };
    let mut iterations = 0usize;
    if b > a {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let interior = |a: usize, b: usize| {
            let step = ((b - a) as f64 * inv_phi).round() as usize;
            let c = (b - step).max(a + 1).min(b - 1);
            let d = (a + step).min(b - 1).max(c);
            (c, d)
        };
        let min_width = opts.bracket_spacings.ceil() as usize;
        loop {
            if b - a < min_width.max(2) {
                break;
            }
            let (c, d) = interior(a, b);
            let ma = eval(a, probe)?;
            let mb = eval(b, probe)?;
            let mc = eval(c, probe)?;
            let md = eval(d, probe)?;
            let pts = [ma, mc, md, mb];
            let (lo_m, hi_m) = pts.iter().fold((pts[0], pts[0]), |(l, h), m| {
                (if m.error < l.error { *m } else { l }, if m.error > h.error { *m } else { h })
            });
            let combined = lo_m.standard_error.hypot(hi_m.standard_error);
            if combined > 0.0 && hi_m.error - lo_m.error < opts.noise_factor * combined {
                debug!("bracket [{a}, {b}] indistinguishable within noise");
                break;
            }
            let best_inner = mc.error.min(md.error);
            for (end, m) in [(a, ma), (b, mb)] {
                let tol = opts.noise_factor
                    * m.standard_error.hypot(if mc.error < md.error { mc } else { md }.standard_error);
                if m.error + tol < best_inner {
                    return Err(not_unimodal(
                        format!("bracket end at index {end} is lower than both interior points"),
                        &cache,
                        entries,
                    ));
                }
            }
            if iterations >= opts.max_iterations {
                return Err(Error::NotUnimodal {
                    reason: format!("no convergence within {} iterations", opts.max_iterations),
                    profile: profile_pairs(&cache, entries),
                });
            }
            if c == d {
                // three-point bracket: keep the better side
                if ma.error < mb.error {
                    b = d;
                } else {
                    a = c;
                }
            } else if mc.error < md.error {
                b = d;
            } else {
                a = c;
            }
            iterations += 1;
        }
    }
    let centre = (a + b) / 2;
    let m = eval(centre, probe)?;
    let tau_prime_opt = entries[centre].tau_prime;
    let profile = cache.iter().map(|(i, m)| (entries[*i].tau_prime, m.error, m.standard_error)).collect();
    let omega_d_estimate = tau_prime_opt / tau_fixed;
    info!("selected tau'={tau_prime_opt:.4} after {iterations} iterations; omega_d ~ {omega_d_estimate:.6e} rad/s");
    Ok(CalibrationResult {
        tau_c: tau_fixed,
        tau_prime_opt,
        entry_index: centre,
        omega_d_estimate,
        iterations,
        error: m.error,
        standard_error: m.standard_error,
        profile,
    })
}

fn profile_pairs(cache: &BTreeMap<usize, Measurement>, entries: &[crate::sequence::SetEntry]) -> Vec<(f64, f64)> {
    cache.iter().map(|(i, m)| (entries[*i].tau_prime, m.error)).collect()
}

fn not_unimodal(reason: String, cache: &BTreeMap<usize, Measurement>, entries: &[crate::sequence::SetEntry]) -> Error {
    Error::NotUnimodal { reason, profile: profile_pairs(cache, entries) }
}

/// The set entry for physical duration `tau` under the estimated cutoff,
/// as a physical sequence.
pub fn scaled_schedule(set: &SequenceSet, omega_d_estimate: f64, tau: f64, tau_pi: f64) -> Result<PulseSequence> {
    if !(omega_d_estimate > 0.0) || !omega_d_estimate.is_finite() {
        return Err(Error::InvalidConfig(format!("cutoff estimate must be positive, got {omega_d_estimate}")));
    }
    let deltas = set.deltas_at(omega_d_estimate * tau)?;
    PulseSequence::new(deltas, tau, tau_pi)
}

/// Full procedure: measure `τ_c` with `strategy`, then select the entry.
pub fn calibrate<P: ErrorProbe + ?Sized>(
    probe: &mut P,
    set: &SequenceSet,
    strategy: Strategy,
    opts: &GoldenOptions,
) -> Result<(MeasuredCoherenceTime, CalibrationResult)> {
    let tc = measure_coherence_time(probe, set.n(), strategy)?;
    let result = golden_section_select(probe, set, tc.tau_c, opts)?;
    Ok((tc, result))
}
