//! Classical dephasing noise spectra in dimensionless form `S(ω')/ω_D`.

use std::fmt;
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadOptions};

/// Default upper integration limit for spectra with a soft tail. An `ω'⁻²`
/// tail beyond this carries under 1% of the tail power.
pub const DEFAULT_CEILING: f64 = 100.0;

/// Low cutoff used for 1/f noise unless configured otherwise.
pub const ONE_OVER_F_LOW_CUTOFF: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    /// Zero power above `ω' = 1`.
    Sharp,
    /// `α ω'⁻²` above `ω' = 1`, continuous with the body at the cutoff.
    SoftInverseSquare,
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cutoff::Sharp => "sharp",
            Cutoff::SoftInverseSquare => "soft",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `α ω'^γ` on `[ω'_low, 1]`, then the configured cutoff.
    PowerLaw { gamma: f64 },
    /// `α ω'⁻⁴` above `ω'_low`, with no cutoff below the ceiling.
    AmbientInverseQuartic,
    /// Piecewise-linear samples `(ω', S')`, zero outside the table.
    Tabulated(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    shape: Shape,
    alpha: f64,
    omega_low: f64,
    cutoff: Cutoff,
    omega_d: f64,
    ceiling: f64,
}

/// Output of [`NoiseSpectrum::sharpness_metric`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sharpness {
    /// Power above the cutoff over total power.
    pub tail_fraction: f64,
    /// Width above the cutoff holding 90% of the tail power, in units of `ω_D`.
    pub tail_width_fraction: f64,
    pub is_sharp: bool,
}

impl NoiseSpectrum {
    pub fn power_law(alpha: f64, gamma: f64, cutoff: Cutoff, omega_low: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::InvalidSpectrum(format!("gamma must be finite, got {gamma}")));
        }
        if gamma <= 0.0 && !(omega_low > 0.0) {
            return Err(Error::InvalidSpectrum(format!(
                "gamma={gamma} needs a positive low-frequency cutoff to stay integrable"
            )));
        }
        Self::build(Shape::PowerLaw { gamma }, alpha, omega_low, cutoff)
    }

    /// `S' = α ω'` with a sharp cutoff at `ω_D`.
    pub fn ohmic(alpha: f64) -> Self {
        Self::power_law(alpha, 1.0, Cutoff::Sharp, 0.0).expect("ohmic parameters are valid")
    }

    /// `S' = α / ω'` above `ω'_low = 0.001` with a soft `ω'⁻²` tail.
    pub fn one_over_f(alpha: f64) -> Self {
        Self::power_law(alpha, -1.0, Cutoff::SoftInverseSquare, ONE_OVER_F_LOW_CUTOFF)
            .expect("1/f parameters are valid")
    }

    pub fn ambient(alpha: f64, omega_low: f64) -> Result<Self> {
        if !(omega_low > 0.0) {
            return Err(Error::InvalidSpectrum("ambient 1/ω⁴ noise needs a positive low-frequency cutoff".into()));
        }
        Self::build(Shape::AmbientInverseQuartic, alpha, omega_low, Cutoff::Sharp)
    }

    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidSpectrum("a tabulated spectrum needs at least two samples".into()));
        }
        for (i, (w, s)) in points.iter().enumerate() {
            if !(w.is_finite() && s.is_finite()) || *w < 0.0 || *s < 0.0 {
                return Err(Error::InvalidSpectrum(format!("sample {i} ({w}, {s}) must be finite and non-negative")));
            }
        }
        if points.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(Error::InvalidSpectrum("tabulated frequencies must be strictly increasing".into()));
        }
        let lo = points[0].0;
        Self::build(Shape::Tabulated(points), 1.0, lo, Cutoff::Sharp)
    }

    /// Flat `S' = level` on `[0, omega_max]`.
    pub fn white(level: f64, omega_max: f64) -> Result<Self> {
        Self::tabulated(vec![(0.0, level), (omega_max, level)])
    }

    /// Noise-free environment.
    pub fn silent() -> Self {
        Self::tabulated(vec![(0.0, 0.0), (1.0, 0.0)]).expect("static table is valid")
    }

    fn build(shape: Shape, alpha: f64, omega_low: f64, cutoff: Cutoff) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidSpectrum(format!("alpha must be positive, got {alpha}")));
        }
        if !(omega_low >= 0.0) || !omega_low.is_finite() {
            return Err(Error::InvalidSpectrum(format!("low cutoff must be non-negative, got {omega_low}")));
        }
        if matches!(shape, Shape::PowerLaw { .. }) && omega_low >= 1.0 {
            return Err(Error::InvalidSpectrum(format!("low cutoff {omega_low} must lie below omega_D")));
        }
        Ok(Self { shape, alpha, omega_low, cutoff, omega_d: 1.0, ceiling: DEFAULT_CEILING })
    }

    /// Sets the physical cutoff `ω_D` in rad/s.
    pub fn with_omega_d(mut self, omega_d: f64) -> Result<Self> {
        if !(omega_d > 0.0) || !omega_d.is_finite() {
            return Err(Error::InvalidSpectrum(format!("omega_d must be positive, got {omega_d}")));
        }
        self.omega_d = omega_d;
        Ok(self)
    }

    /// Sets the upper integration limit used for soft-tailed spectra.
    pub fn with_ceiling(mut self, ceiling: f64) -> Result<Self> {
        if !(ceiling > 1.0) || !ceiling.is_finite() {
            return Err(Error::InvalidSpectrum(format!("integration ceiling must exceed 1, got {ceiling}")));
        }
        self.ceiling = ceiling;
        Ok(self)
    }

    pub fn load_table(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_table(std::io::BufReader::new(file))
    }

    /// Reads a two-column `omega_prime,s_prime` CSV; `#` lines are comments.
    pub fn read_table(r: impl BufRead) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.eq_ignore_ascii_case("omega_prime,s_prime") {
                continue;
            }
            let bad = |reason: String| Error::Parse { line: i + 1, reason };
            let (w, s) = line.split_once(',').ok_or_else(|| bad("expected two comma-separated columns".into()))?;
            let w = w.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
            let s = s.trim().parse::<f64>().map_err(|e| bad(e.to_string()))?;
            points.push((w, s));
        }
        Self::tabulated(points)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn omega_low(&self) -> f64 {
        self.omega_low
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn omega_d(&self) -> f64 {
        self.omega_d
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    /// Power-law exponent of the body, when the spectrum has one.
    pub fn gamma(&self) -> Option<f64> {
        match self.shape {
            Shape::PowerLaw { gamma } => Some(gamma),
            Shape::AmbientInverseQuartic => Some(-4.0),
            Shape::Tabulated(_) => None,
        }
    }

    /// `S(ω')/ω_D` at dimensionless frequency `ω'`.
    pub fn evaluate(&self, omega_prime: f64) -> f64 {
        let w = omega_prime;
        match &self.shape {
            Shape::PowerLaw { gamma } => {
                if w < self.omega_low || w <= 0.0 {
                    0.0
                } else if w <= 1.0 {
                    self.alpha * w.powf(*gamma)
                } else {
                    match self.cutoff {
                        Cutoff::Sharp => 0.0,
                        Cutoff::SoftInverseSquare => self.alpha / (w * w),
                    }
                }
            }
            Shape::AmbientInverseQuartic => {
                if w < self.omega_low {
                    0.0
                } else {
                    self.alpha / (w * w * w * w)
                }
            }
            Shape::Tabulated(points) => {
                let (first, last) = (points[0], points[points.len() - 1]);
                if w < first.0 || w > last.0 {
                    return 0.0;
                }
                let idx = points.partition_point(|p| p.0 <= w).clamp(1, points.len() - 1);
                let (a, b) = (points[idx - 1], points[idx]);
                let t = (w - a.0) / (b.0 - a.0);
                self.alpha * (a.1 + t * (b.1 - a.1))
            }
        }
    }

    /// Frequency interval outside which the spectrum vanishes (or is
    /// truncated for integration).
    pub fn support(&self) -> (f64, f64) {
        match &self.shape {
            Shape::PowerLaw { .. } => {
                let hi = match self.cutoff {
                    Cutoff::Sharp => 1.0,
                    Cutoff::SoftInverseSquare => self.ceiling,
                };
                (self.omega_low, hi)
            }
            Shape::AmbientInverseQuartic => (self.omega_low, self.ceiling),
            Shape::Tabulated(points) => (points[0].0, points[points.len() - 1].0),
        }
    }

    /// Interior points where the spectrum is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        let (lo, hi) = self.support();
        let mut k = match &self.shape {
            Shape::PowerLaw { .. } => vec![self.omega_low, 1.0],
            Shape::AmbientInverseQuartic => vec![self.omega_low],
            Shape::Tabulated(points) => points.iter().map(|p| p.0).collect(),
        };
        k.retain(|w| *w > lo && *w < hi);
        k
    }

    /// Whether the spectrum spans several decades and is better sampled on
    /// a logarithmic frequency grid.
    pub fn prefers_log_grid(&self) -> bool {
        let (lo, hi) = self.support();
        lo > 0.0 && hi / lo > 100.0 && self.gamma().is_some_and(|g| g < 0.0)
    }

    /// Short text identifying the spectrum, used in output headers.
    pub fn id(&self) -> String {
        let body = match &self.shape {
            Shape::PowerLaw { gamma } => format!("power_law(gamma={gamma})"),
            Shape::AmbientInverseQuartic => "ambient_inverse_quartic".to_string(),
            Shape::Tabulated(points) => format!("tabulated({} samples)", points.len()),
        };
        format!(
            "{body};alpha={};omega_low={};cutoff={};ceiling={};omega_d={}",
            self.alpha, self.omega_low, self.cutoff, self.ceiling, self.omega_d
        )
    }

    fn integrate(&self, a: f64, b: f64) -> Result<f64> {
        let mut cuts = self.kinks();
        // logarithmic cuts keep steep power laws well conditioned
        if a > 0.0 && b / a > 10.0 {
            let mut w = a * 10.0;
            while w < b {
                cuts.push(w);
                w *= 10.0;
            }
        }
        let opts = QuadOptions { rel_tol: 1e-12, abs_tol: 1e-300, ..QuadOptions::default() };
        Ok(quadrature::integrate(|w| self.evaluate(w), a, b, &cuts, 1, &opts)?.value)
    }

    /// Fraction and spread of the noise power above the cutoff `ω' = 1`.
    /// A spectrum counts as sharp when at most 10% of its power lies above
    /// the cutoff and that power sits within `0.1 ω_D` of it.
    pub fn sharpness_metric(&self) -> Result<Sharpness> {
        let (lo, hi) = self.support();
        let total = self.integrate(lo, hi)?;
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidSpectrum(format!("total noise power {total} is not positive and finite")));
        }
        let tail_start = lo.max(1.0);
        let tail = if hi > tail_start { self.integrate(tail_start, hi)? } else { 0.0 };
        if tail <= 0.0 {
            return Ok(Sharpness { tail_fraction: 0.0, tail_width_fraction: 0.0, is_sharp: true });
        }
        let target = 0.9 * tail;
        let (mut a, mut b) = (0.0, hi - tail_start);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if self.integrate(tail_start, tail_start + mid)? >= target {
                b = mid;
            } else {
                a = mid;
            }
        }
        let tail_fraction = tail / total;
        let tail_width_fraction = b;
        Ok(Sharpness {
            tail_fraction,
            tail_width_fraction,
            is_sharp: tail_fraction <= 0.10 && tail_width_fraction <= 0.10,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ohmic_examples() {
        let s = NoiseSpectrum::ohmic(1.0);
        assert_eq!(s.evaluate(0.5), 0.5);
        assert_eq!(s.evaluate(1.5), 0.0);
        let soft = NoiseSpectrum::power_law(1.0, 1.0, Cutoff::SoftInverseSquare, 0.0).unwrap();
        assert_eq!(soft.evaluate(2.0), 0.25);
    }

    #[test]
    fn low_cutoff() {
        let s = NoiseSpectrum::one_over_f(1.0);
        assert_eq!(s.evaluate(0.0005), 0.0);
        assert_relative_eq!(s.evaluate(0.01), 100.0, max_relative = 1e-14);
    }

    #[test]
    fn soft_tail_is_continuous() {
        for gamma in [-1.0, 0.0, 1.0, 2.0] {
            let s = NoiseSpectrum::power_law(2.0, gamma, Cutoff::SoftInverseSquare, 0.01).unwrap();
            let below = s.evaluate(1.0);
            let above = s.evaluate(1.0 + 1e-15);
            assert_relative_eq!(below, above, max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_divergent_and_bad_parameters() {
        assert!(NoiseSpectrum::power_law(1.0, -1.0, Cutoff::Sharp, 0.0).is_err());
        assert!(NoiseSpectrum::power_law(1.0, 0.0, Cutoff::Sharp, 0.0).is_err());
        assert!(NoiseSpectrum::power_law(0.0, 1.0, Cutoff::Sharp, 0.0).is_err());
        assert!(NoiseSpectrum::ambient(1.0, 0.0).is_err());
        assert!(NoiseSpectrum::tabulated(vec![(1.0, 1.0), (0.5, 1.0)]).is_err());
        assert!(NoiseSpectrum::tabulated(vec![(0.0, -1.0), (0.5, 1.0)]).is_err());
    }

    #[test]
    fn tabulated_interpolates_linearly() {
        let s = NoiseSpectrum::tabulated(vec![(0.0, 0.0), (1.0, 2.0), (3.0, 0.0)]).unwrap();
        assert_eq!(s.evaluate(0.5), 1.0);
        assert_eq!(s.evaluate(2.0), 1.0);
        assert_eq!(s.evaluate(3.5), 0.0);
        let text = "# comment\nomega_prime,s_prime\n0.0,0.0\n1.0,2.0\n3.0,0.0\n";
        assert_eq!(NoiseSpectrum::read_table(text.as_bytes()).unwrap(), s);
    }

    #[test]
    fn sharp_spectrum_has_no_tail() {
        let m = NoiseSpectrum::ohmic(1.0).sharpness_metric().unwrap();
        assert_eq!(m.tail_fraction, 0.0);
        assert_eq!(m.tail_width_fraction, 0.0);
        assert!(m.is_sharp);
    }

    #[test]
    fn soft_ohmic_tail_fraction() {
        let s = NoiseSpectrum::power_law(1.0, 1.0, Cutoff::SoftInverseSquare, 0.0).unwrap();
        let m = s.sharpness_metric().unwrap();
        // ∫₀¹ω dω = 0.5 and ∫₁^100 ω⁻² dω = 0.99
        assert_relative_eq!(m.tail_fraction, 0.99 / 1.49, max_relative = 1e-9);
        // 1 - 1/(1+w) = 0.9 * 0.99
        assert_relative_eq!(m.tail_width_fraction, 1.0 / (1.0 - 0.891) - 1.0, max_relative = 1e-8);
        assert!(!m.is_sharp);
    }

    #[test]
    fn one_over_f_is_not_sharp() {
        let m = NoiseSpectrum::one_over_f(1.0).sharpness_metric().unwrap();
        // body ∫ 1/ω = ln(1000), tail 0.99
        assert_relative_eq!(m.tail_fraction, 0.99 / (1000f64.ln() + 0.99), max_relative = 1e-8);
        assert!(!m.is_sharp);
    }

    #[test]
    fn silent_spectrum_has_no_power() {
        assert!(NoiseSpectrum::silent().sharpness_metric().is_err());
    }
}
