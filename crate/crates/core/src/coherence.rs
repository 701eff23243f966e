//! Coherence integral, decoherence curves, coherence times, and a
//! time-domain Monte Carlo oracle.
//!
//! In dimensionless units the coherence integral is
//!
//! ```text
//! χ(τ') = (2/π) ∫ S'(ω') F(ω'τ') / ω'² dω'
//! ```
//!
//! and the measured error is `(1 - W)/2` with `W = e^(-χ)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::filter::FilterEvalContext;
use crate::optimize::{lodd_optimize, OptimizerConfig};
use crate::par;
use crate::quadrature::{self, QuadOptions};
use crate::sequence::{cpmg_deltas, fmt_float, udd_deltas, Generator, SequenceSet};
use crate::spectrum::NoiseSpectrum;

/// Error level reached when a sequence has fully dephased.
pub const ASYMPTOTIC_ERROR: f64 = 0.5;

/// `1/e` of the asymptotic error; defines the coherence time.
pub fn coherence_threshold() -> f64 {
    ASYMPTOTIC_ERROR * (-1.0f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiOptions {
    pub rel_tol: f64,
    /// Absolute tolerance on `χ`; errors below this are unresolvable in
    /// any measurement.
    pub abs_tol: f64,
    pub max_panels: usize,
}

impl Default for ChiOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-16, max_panels: 200_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceResult {
    pub chi: f64,
    pub w: f64,
    pub error: f64,
}

impl CoherenceResult {
    pub fn from_chi(chi: f64) -> Self {
        let chi = chi.max(0.0);
        let w = (-chi).exp();
        // (1 - e^-χ)/2 without cancellation for small χ
        let error = -0.5 * (-chi).exp_m1();
        Self { chi, w, error }
    }
}

/// `χ` for a dimensionless sequence under `spectrum`.
pub fn chi_value(spectrum: &NoiseSpectrum, ctx: &FilterEvalContext, opts: &ChiOptions) -> Result<f64> {
    let (lo, hi) = spectrum.support();
    if !(hi > lo) {
        return Ok(0.0);
    }
    let integrand = |w: f64| {
        let s = spectrum.evaluate(w);
        if s == 0.0 {
            return 0.0;
        }
        let w = w.max(f64::MIN_POSITIVE);
        s * ctx.filter_value(w) / (w * w)
    };
    let mut cuts = spectrum.kinks();
    if lo > 0.0 && hi / lo > 10.0 {
        // decade cuts for spectra spanning several orders of magnitude
        let mut w = lo * 10.0;
        while w < hi.min(1.0) {
            cuts.push(w);
            w *= 10.0;
        }
    }
    let seed = quadrature::panels_for_frequency(ctx.tau_prime + ctx.tau_pi_prime, hi - lo);
    let q = QuadOptions { rel_tol: opts.rel_tol, abs_tol: opts.abs_tol * PI / 2.0, max_panels: opts.max_panels };
    let est = quadrature::integrate(integrand, lo, hi, &cuts, seed, &q)?;
    Ok((2.0 / PI * est.value).max(0.0))
}

pub fn chi(spectrum: &NoiseSpectrum, ctx: &FilterEvalContext) -> Result<CoherenceResult> {
    Ok(CoherenceResult::from_chi(chi_value(spectrum, ctx, &ChiOptions::default())?))
}

/// The pulse placement strategy a decoherence curve describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Free,
    Cpmg,
    Udd,
    Ofdd,
    Lodd,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Free => "free",
            Strategy::Cpmg => "cpmg",
            Strategy::Udd => "udd",
            Strategy::Ofdd => "ofdd",
            Strategy::Lodd => "lodd",
        }
    }

    pub fn needs_set(self) -> bool {
        matches!(self, Strategy::Ofdd | Strategy::Lodd)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "free" => Ok(Strategy::Free),
            "cpmg" => Ok(Strategy::Cpmg),
            "udd" => Ok(Strategy::Udd),
            "ofdd" => Ok(Strategy::Ofdd),
            "lodd" => Ok(Strategy::Lodd),
            other => Err(Error::InvalidConfig(format!("unknown strategy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoherenceCurve {
    pub strategy: Strategy,
    pub n: usize,
    /// `(τ', (1 - W)/2)` pairs in increasing `τ'`.
    pub points: Vec<(f64, f64)>,
    pub spectrum_id: String,
}

impl DecoherenceCurve {
    pub fn durations(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            format!("# strategy={}\n# n={}\n# spectrum={}\ntau_prime,error\n", self.strategy, self.n, self.spectrum_id);
        for (t, e) in &self.points {
            out.push_str(&format!("{},{}\n", fmt_float(*t), fmt_float(*e)));
        }
        out
    }
}

/// Options for [`decoherence_curve`].
#[derive(Debug, Clone)]
pub struct CurveOptions {
    pub tau_pi_prime: f64,
    pub chi: ChiOptions,
    /// Used when LODD sequences are optimized on the fly.
    pub optimizer: OptimizerConfig,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { tau_pi_prime: 0.0, chi: ChiOptions::default(), optimizer: OptimizerConfig::default() }
    }
}

/// Pulse centers a strategy uses at `τ'`. LODD sequences are optimized
/// from the set's entry unless the set already holds LODD sequences.
fn deltas_for(
    spectrum: &NoiseSpectrum,
    strategy: Strategy,
    n: usize,
    tau_prime: f64,
    set: Option<&SequenceSet>,
    opts: &CurveOptions,
) -> Result<Vec<f64>> {
    match strategy {
        Strategy::Free => Ok(Vec::new()),
        Strategy::Cpmg => Ok(cpmg_deltas(n)),
        Strategy::Udd => Ok(udd_deltas(n)),
        Strategy::Ofdd | Strategy::Lodd => {
            let set = set.ok_or_else(|| Error::InvalidConfig(format!("strategy {strategy} needs a sequence set")))?;
            let seed = set.deltas_at(tau_prime)?;
            if strategy == Strategy::Ofdd || set.generator() == Generator::Lodd {
                return Ok(seed);
            }
            Ok(lodd_optimize(spectrum, n, tau_prime, opts.tau_pi_prime, &seed, &opts.optimizer)?.deltas)
        }
    }
}

/// Error `(1 - W)/2` of one strategy at each grid duration. Grid points are
/// evaluated independently (in parallel when enabled).
pub fn decoherence_curve(
    spectrum: &NoiseSpectrum,
    strategy: Strategy,
    n: usize,
    tau_grid: &[f64],
    set: Option<&SequenceSet>,
    opts: &CurveOptions,
) -> Result<DecoherenceCurve> {
    if tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("duration grid must be strictly increasing".into()));
    }
    let n = if strategy == Strategy::Free { 0 } else { n };
    if let Some(set) = set {
        if strategy.needs_set() && set.n() != n {
            return Err(Error::InvalidConfig(format!("set holds {}-pulse sequences, curve asks for {n}", set.n())));
        }
    }
    let results = par::map(tau_grid, |&tau_prime| -> Result<(f64, f64)> {
        let deltas = deltas_for(spectrum, strategy, n, tau_prime, set, opts)?;
        let ctx = FilterEvalContext::new(deltas, tau_prime, opts.tau_pi_prime)?;
        let chi = chi_value(spectrum, &ctx, &opts.chi)?;
        Ok((tau_prime, CoherenceResult::from_chi(chi).error))
    });
    let points = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(DecoherenceCurve { strategy, n, points, spectrum_id: spectrum.id() })
}

/// Builds a LODD set over `tau_grid`, optimizing `χ` at every point from
/// the corresponding entry of `seed_set`.
pub fn build_lodd_set(
    spectrum: &NoiseSpectrum,
    seed_set: &SequenceSet,
    tau_grid: &[f64],
    config: &OptimizerConfig,
) -> Result<SequenceSet> {
    let n = seed_set.n();
    let tpp = seed_set.tau_pi_prime();
    let results = par::map(tau_grid, |&tau_prime| -> Result<crate::sequence::SetEntry> {
        let seed = seed_set.deltas_at(tau_prime)?;
        let opt = lodd_optimize(spectrum, n, tau_prime, tpp, &seed, config)?;
        Ok(crate::sequence::SetEntry { tau_prime, deltas: opt.deltas })
    });
    let entries = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SequenceSet::new(n, tpp, Generator::Lodd, entries)?.with_meta("spectrum", spectrum.id()))
}

/// Duration at which the error first reaches `1/e` of its asymptotic value,
/// by linear interpolation between the bracketing grid points.
pub fn coherence_time(curve: &DecoherenceCurve) -> Result<f64> {
    crossing_time(&curve.points, coherence_threshold())
}

/// First duration at which `points` reach `threshold`.
pub fn crossing_time(points: &[(f64, f64)], threshold: f64) -> Result<f64> {
    let first = points
        .iter()
        .position(|p| p.1 >= threshold)
        .ok_or_else(|| Error::NoCrossing(format!("error never reaches {threshold:.5} on the sampled durations")))?;
    if first == 0 {
        return Ok(points[0].0);
    }
    let (t0, e0) = points[first - 1];
    let (t1, e1) = points[first];
    Ok(t0 + (threshold - e0) / (e1 - e0) * (t1 - t0))
}

/// Monte Carlo estimate of the error with its bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub error: f64,
    pub standard_error: f64,
    pub realizations: usize,
}

/// Realization count below which Monte Carlo estimates are flagged as
/// statistically insufficient.
pub const MIN_REALIZATIONS: usize = 100;

const MC_BINS: usize = 2048;
const BOOTSTRAP_RESAMPLES: usize = 200;

/// Frequency bins `(center, width)` covering the spectrum's support.
fn noise_bins(spectrum: &NoiseSpectrum) -> Vec<(f64, f64)> {
    let (lo, hi) = spectrum.support();
    if spectrum.prefers_log_grid() {
        let ratio = (hi / lo).powf(1.0 / MC_BINS as f64);
        (0..MC_BINS)
            .map(|k| {
                let a = lo * ratio.powi(k as i32);
                let b = a * ratio;
                ((a * b).sqrt(), b - a)
            })
            .collect()
    } else {
        let h = (hi - lo) / MC_BINS as f64;
        (0..MC_BINS).map(|k| (lo + (k as f64 + 0.5) * h, h)).collect()
    }
}

/// `∫₀^τ' y(t) e^(iωt) dt` for the toggling function `y = ±1` that flips
/// sign at every pulse center, integrated segment by segment.
fn toggled_transform(switch_times: &[f64], tau_prime: f64, omega: f64) -> (f64, f64) {
    let mut re = 0.0;
    let mut im = 0.0;
    let mut sign = 1.0;
    let (mut s0, mut c0) = (0.0, 1.0);
    for end in switch_times.iter().copied().chain(std::iter::once(tau_prime)) {
        let (s1, c1) = (omega * end).sin_cos();
        // ∫ cos = (sin b - sin a)/ω, ∫ sin = (cos a - cos b)/ω
        re += sign * (s1 - s0) / omega;
        im += sign * (c0 - c1) / omega;
        sign = -sign;
        s0 = s1;
        c0 = c1;
    }
    (re, im)
}

/// Simulates Gaussian classical noise `β(t) = Σ_k a_k cos(ω_k t + φ_k)`
/// whose ensemble spectrum matches `spectrum`, accumulates the toggled
/// phase `φ = ∫ y(t) β(t) dt` for every realization, and returns
/// `(1 - |⟨cos φ⟩|)/2` with a bootstrap standard error.
///
/// Each realization draws from its own stream keyed by `(seed, index)`, so
/// results do not depend on evaluation order. Only instantaneous pulses
/// are supported.
pub fn monte_carlo_error(
    spectrum: &NoiseSpectrum,
    ctx: &FilterEvalContext,
    realizations: usize,
    seed: u64,
) -> Result<McEstimate> {
    if ctx.tau_pi_prime != 0.0 {
        return Err(Error::InvalidConfig("the Monte Carlo oracle models instantaneous pulses only".into()));
    }
    if realizations < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 realizations, got {realizations}")));
    }
    let switches: Vec<f64> = ctx.deltas.iter().map(|d| d * ctx.tau_prime).collect();
    // Per-bin quadrature variance σ² = (4/π) S Δω makes ⟨φ²⟩/2 equal χ.
    let bins: Vec<(f64, f64, f64)> = noise_bins(spectrum)
        .into_iter()
        .filter_map(|(w, dw)| {
            let s = spectrum.evaluate(w);
            if s <= 0.0 {
                return None;
            }
            let (re, im) = toggled_transform(&switches, ctx.tau_prime, w);
            let sigma = (4.0 / PI * s * dw).sqrt();
            Some((sigma * re, sigma * im, w))
        })
        .collect();

    let cosines: Vec<f64> = par::map_range(realizations, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut phase = 0.0;
        for (cre, cim, _) in &bins {
            // a cos(ωt + φ) with Rayleigh a and uniform φ is A cos ωt + B sin ωt with Gaussian A, B
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            phase += a * cre + b * cim;
        }
        phase.cos()
    });

    let estimate = |values: &mut dyn Iterator<Item = f64>| {
        let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        0.5 * (1.0 - (sum / count as f64).abs())
    };
    let error = estimate(&mut cosines.iter().copied());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut it = (0..realizations).map(|_| cosines[rng.random_range(0..realizations)]);
        boot.push(estimate(&mut it));
    }
    let mean = boot.iter().sum::<f64>() / boot.len() as f64;
    let var = boot.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (boot.len() - 1) as f64;
    Ok(McEstimate { error, standard_error: var.sqrt(), realizations })
}
