//! Pulse sequences, the CPMG and UDD baselines, and sequence sets.
//!
//! A sequence is described by the relative centers `δ_j = t_j / τ` of its
//! π-pulses, the total duration `τ` (free precession plus all pulse time)
//! and the duration `τ_π` of a single pulse. Everything is validated at
//! construction so downstream code can assume the ordering and
//! non-overlap invariants.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Absolute slack on the minimum-gap comparison, so exactly touching
/// finite pulses are not rejected by rounding.
pub const GAP_SLACK: f64 = 1e-12;

/// Tolerance used when checking the mirror symmetry of generated sets.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Checks ordering and non-overlap of relative pulse centers.
///
/// `min_gap` is the pulse width relative to the sequence duration, `τ_π/τ`.
pub fn check_deltas(deltas: &[f64], min_gap: f64) -> Result<()> {
    if !(min_gap >= 0.0) || !min_gap.is_finite() {
        return Err(Error::InvalidSequence(format!(
            "relative pulse width {min_gap} is not a finite non-negative number"
        )));
    }
    let n = deltas.len();
    if n == 0 {
        return Ok(());
    }
    if let Some(bad) = deltas.iter().find(|d| !d.is_finite()) {
        return Err(Error::InvalidSequence(format!("non-finite pulse position {bad}")));
    }
    let (first, last) = (deltas[0], deltas[n - 1]);
    if first <= 0.0 || last >= 1.0 {
        return Err(Error::InvalidSequence(format!(
            "pulse centers must lie in (0, 1), got first={first}, last={last}"
        )));
    }
    if first < 0.5 * min_gap - GAP_SLACK || 1.0 - last < 0.5 * min_gap - GAP_SLACK {
        return Err(Error::InvalidSequence(format!(
            "edge pulses overrun the sequence window (first={first}, last={last}, width={min_gap})"
        )));
    }
    for (j, w) in deltas.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if gap <= 0.0 {
            return Err(Error::InvalidSequence(format!(
                "pulse {} at {} is not after pulse {} at {}",
                j + 2,
                w[1],
                j + 1,
                w[0]
            )));
        }
        if gap < min_gap - GAP_SLACK {
            return Err(Error::InvalidSequence(format!(
                "pulses {} and {} overlap (gap {gap} < width {min_gap})",
                j + 1,
                j + 2
            )));
        }
    }
    Ok(())
}

/// Largest deviation from `δ_j + δ_{n+1-j} = 1`.
pub fn symmetry_defect(deltas: &[f64]) -> f64 {
    let n = deltas.len();
    (0..n).map(|j| (deltas[j] + deltas[n - 1 - j] - 1.0).abs()).fold(0.0, f64::max)
}

/// CPMG pulse centers `(2j - 1) / 2n`.
pub fn cpmg_deltas(n: usize) -> Vec<f64> {
    (1..=n).map(|j| (2 * j - 1) as f64 / (2 * n) as f64).collect()
}

/// UDD pulse centers `sin²(jπ / (2n + 2))`.
pub fn udd_deltas(n: usize) -> Vec<f64> {
    let denom = (2 * n + 2) as f64;
    let mut deltas: Vec<f64> = (1..=n).map(|j| (j as f64 * PI / denom).sin().powi(2)).collect();
    // sin² only mirrors to within rounding; enforce the exact mirror image.
    for j in 0..n / 2 {
        deltas[n - 1 - j] = 1.0 - deltas[j];
    }
    if n % 2 == 1 {
        deltas[n / 2] = 0.5;
    }
    deltas
}

/// Number of half-parameters describing a symmetric `n`-pulse sequence.
pub fn half_len(n: usize) -> usize {
    n.div_ceil(2)
}

/// Expands the first `⌈n/2⌉` pulse centers of a symmetric sequence into
/// the full list by mirroring about 0.5. For odd `n` the last half value
/// is the central pulse and must be exactly 0.5.
pub fn from_half_parameters(n: usize, half: &[f64]) -> Result<Vec<f64>> {
    if half.len() != half_len(n) {
        return Err(Error::InvalidSequence(format!(
            "{n} pulses need {} half-parameters, got {}",
            half_len(n),
            half.len()
        )));
    }
    if let Some(bad) = half.iter().find(|h| !(**h > 0.0 && **h <= 0.5)) {
        return Err(Error::InvalidSequence(format!("half-parameter {bad} outside (0, 0.5]")));
    }
    if half.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSequence("half-parameters are not strictly increasing".into()));
    }
    if n % 2 == 1 && half[half.len() - 1] != 0.5 {
        return Err(Error::InvalidSequence(format!("odd pulse count {n} requires a central pulse at 0.5")));
    }
    if n.is_multiple_of(2) && half.last().is_some_and(|&h| h >= 0.5) {
        return Err(Error::InvalidSequence("even pulse count cannot place a pulse at the center".into()));
    }
    Ok(mirror_half(n, half))
}

/// Mirror without validation; used by the optimizer's inner loop.
pub(crate) fn mirror_half(n: usize, half: &[f64]) -> Vec<f64> {
    let mut deltas = Vec::with_capacity(n);
    deltas.extend_from_slice(&half[..n / 2]);
    if n % 2 == 1 {
        deltas.push(0.5);
    }
    deltas.extend(half[..n / 2].iter().rev().map(|h| 1.0 - h));
    deltas
}

/// A validated pulse sequence in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    deltas: Vec<f64>,
    tau: f64,
    tau_pi: f64,
}

impl PulseSequence {
    pub fn new(deltas: Vec<f64>, tau: f64, tau_pi: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidSequence(format!("duration must be positive, got {tau}")));
        }
        if !(tau_pi >= 0.0) || !tau_pi.is_finite() {
            return Err(Error::InvalidSequence(format!("pulse duration must be non-negative, got {tau_pi}")));
        }
        if deltas.len() as f64 * tau_pi > tau * (1.0 + GAP_SLACK) {
            return Err(Error::InvalidSequence(format!("{} pulses of {tau_pi} s do not fit in {tau} s", deltas.len())));
        }
        check_deltas(&deltas, tau_pi / tau)?;
        Ok(Self { deltas, tau, tau_pi })
    }

    /// Free evolution, no pulses.
    pub fn free(tau: f64) -> Result<Self> {
        Self::new(Vec::new(), tau, 0.0)
    }

    pub fn cpmg(n: usize, tau: f64, tau_pi: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSequence("CPMG needs at least one pulse".into()));
        }
        Self::new(cpmg_deltas(n), tau, tau_pi)
    }

    pub fn udd(n: usize, tau: f64, tau_pi: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSequence("UDD needs at least one pulse".into()));
        }
        Self::new(udd_deltas(n), tau, tau_pi)
    }

    pub fn n(&self) -> usize {
        self.deltas.len()
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn tau_pi(&self) -> f64 {
        self.tau_pi
    }

    /// `(start, end)` of every pulse in seconds, centered on `δ_j τ`.
    pub fn absolute_pulse_times(&self) -> Vec<(f64, f64)> {
        let half = 0.5 * self.tau_pi;
        self.deltas
            .iter()
            .map(|d| {
                let center = d * self.tau;
                (center - half, center + half)
            })
            .collect()
    }
}

/// How the sequences of a set were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Generator {
    Cpmg,
    Udd,
    Ofdd,
    Lodd,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::Cpmg => "cpmg",
            Generator::Udd => "udd",
            Generator::Ofdd => "ofdd",
            Generator::Lodd => "lodd",
        }
    }

    fn requires_symmetry(self) -> bool {
        !matches!(self, Generator::Lodd)
    }
}

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cpmg" => Ok(Generator::Cpmg),
            "udd" => Ok(Generator::Udd),
            "ofdd" => Ok(Generator::Ofdd),
            "lodd" => Ok(Generator::Lodd),
            other => Err(Error::InvalidSet(format!("unknown generator tag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetEntry {
    pub tau_prime: f64,
    pub deltas: Vec<f64>,
}

/// A family of sequences indexed by dimensionless duration `τ' = ω_D τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSet {
    n: usize,
    tau_pi_prime: f64,
    generator: Generator,
    entries: Vec<SetEntry>,
    meta: Vec<(String, String)>,
}

impl SequenceSet {
    pub fn new(n: usize, tau_pi_prime: f64, generator: Generator, entries: Vec<SetEntry>) -> Result<Self> {
        if !(tau_pi_prime >= 0.0) || !tau_pi_prime.is_finite() {
            return Err(Error::InvalidSet(format!("tau_pi_prime must be non-negative, got {tau_pi_prime}")));
        }
        if entries.is_empty() {
            return Err(Error::InvalidSet("a set needs at least one entry".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if !(e.tau_prime > 0.0) || !e.tau_prime.is_finite() {
                return Err(Error::InvalidSet(format!("entry {i}: tau' must be positive, got {}", e.tau_prime)));
            }
            if e.deltas.len() != n {
                return Err(Error::InvalidSet(format!("entry {i}: expected {n} pulses, found {}", e.deltas.len())));
            }
            check_deltas(&e.deltas, tau_pi_prime / e.tau_prime)
                .map_err(|err| Error::InvalidSet(format!("entry {i} (tau'={}): {err}", e.tau_prime)))?;
            if generator.requires_symmetry() && symmetry_defect(&e.deltas) > SYMMETRY_TOL {
                return Err(Error::InvalidSet(format!("entry {i} (tau'={}) is not mirror-symmetric", e.tau_prime)));
            }
        }
        if entries.windows(2).any(|w| w[1].tau_prime <= w[0].tau_prime) {
            return Err(Error::InvalidSet("entries are not strictly increasing in tau'".into()));
        }
        Ok(Self { n, tau_pi_prime, generator, entries, meta: Vec::new() })
    }

    /// A set holding the same fixed-ratio sequence (CPMG or UDD) at every grid point.
    pub fn fixed(generator: Generator, n: usize, tau_pi_prime: f64, grid: &[f64]) -> Result<Self> {
        let deltas = match generator {
            Generator::Cpmg => cpmg_deltas(n),
            Generator::Udd => udd_deltas(n),
            other => return Err(Error::InvalidSet(format!("{other} sets must be optimized, not generated"))),
        };
        let entries = grid.iter().map(|&tau_prime| SetEntry { tau_prime, deltas: deltas.clone() }).collect();
        Self::new(n, tau_pi_prime, generator, entries)
    }

    /// Attaches a free-form metadata record, written as a `# key=value` line.
    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.push((key.into(), value.to_string()));
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau_pi_prime(&self) -> f64 {
        self.tau_pi_prime
    }

    pub fn generator(&self) -> Generator {
        self.generator
    }

    pub fn entries(&self) -> &[SetEntry] {
        &self.entries
    }

    pub fn meta(&self) -> &[(String, String)] {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tau_range(&self) -> (f64, f64) {
        (self.entries[0].tau_prime, self.entries[self.entries.len() - 1].tau_prime)
    }

    /// Index of the entry whose `τ'` is closest to the request (ties go low).
    pub fn nearest_index(&self, tau_prime: f64) -> usize {
        let idx = self.entries.partition_point(|e| e.tau_prime < tau_prime);
        if idx == 0 {
            return 0;
        }
        if idx == self.entries.len() {
            return idx - 1;
        }
        let below = tau_prime - self.entries[idx - 1].tau_prime;
        let above = self.entries[idx].tau_prime - tau_prime;
        if above < below {
            idx
        } else {
            idx - 1
        }
    }

    /// Pulse centers at `τ'`, linearly interpolated per coordinate between
    /// the neighbouring entries.
    pub fn deltas_at(&self, tau_prime: f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.tau_range();
        if !(tau_prime >= lo && tau_prime <= hi) {
            return Err(Error::OutOfCoverage { tau_prime, lo, hi });
        }
        let idx = self.entries.partition_point(|e| e.tau_prime < tau_prime);
        let upper = &self.entries[idx.min(self.entries.len() - 1)];
        if upper.tau_prime == tau_prime || idx == 0 {
            return Ok(upper.deltas.clone());
        }
        let lower = &self.entries[idx - 1];
        let w = (tau_prime - lower.tau_prime) / (upper.tau_prime - lower.tau_prime);
        Ok(lower.deltas.iter().zip(&upper.deltas).map(|(a, b)| a + w * (b - a)).collect())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# n={}", self.n);
        let _ = writeln!(out, "# tau_pi_prime={}", fmt_float(self.tau_pi_prime));
        let _ = writeln!(out, "# generator={}", self.generator);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}={v}");
        }
        for e in &self.entries {
            out.push_str(&fmt_float(e.tau_prime));
            for d in &e.deltas {
                out.push(',');
                out.push_str(&fmt_float(*d));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut n = None;
        let mut tau_pi_prime = None;
        let mut generator = None;
        let mut meta = Vec::new();
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let Some((k, v)) = comment.trim().split_once('=') else {
                    continue;
                };
                let (k, v) = (k.trim(), v.trim());
                let bad = |reason: String| Error::Parse { line: lineno, reason };
                match k {
                    "n" => n = Some(v.parse::<usize>().map_err(|e| bad(format!("n: {e}")))?),
                    "tau_pi_prime" => {
                        tau_pi_prime = Some(v.parse::<f64>().map_err(|e| bad(format!("tau_pi_prime: {e}")))?)
                    }
                    "generator" => generator = Some(v.parse::<Generator>().map_err(|e| bad(e.to_string()))?),
                    _ => meta.push((k.to_string(), v.to_string())),
                }
                continue;
            }
            let values = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse { line: lineno, reason: e.to_string() })?;
            let (tau_prime, deltas) =
                values.split_first().ok_or(Error::Parse { line: lineno, reason: "empty record".into() })?;
            entries.push(SetEntry { tau_prime: *tau_prime, deltas: deltas.to_vec() });
        }
        let missing = |what: &str| Error::InvalidSet(format!("header is missing '{what}'"));
        let mut set = Self::new(
            n.ok_or_else(|| missing("n"))?,
            tau_pi_prime.ok_or_else(|| missing("tau_pi_prime"))?,
            generator.ok_or_else(|| missing("generator"))?,
            entries,
        )?;
        set.meta = meta;
        Ok(set)
    }
}

/// Round-trip exact decimal rendering (17 significant digits).
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}
