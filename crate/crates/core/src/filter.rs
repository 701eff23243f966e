//! The dephasing filter function of a π-pulse sequence and its area.
//!
//! For relative pulse centers `δ_j`, dimensionless duration `τ' = ω_D τ`
//! and dimensionless pulse width `τ_π' = ω_D τ_π`, the filter function at
//! dimensionless frequency `ω'` is
//!
//! ```text
//! F(ω') = |1 + (-1)^(n+1) e^(iθ) + 2 Σ_j (-1)^j e^(iθ δ_j) cos(ω' τ_π' / 2)|²,   θ = ω' τ'
//! ```
//!
//! The area `A_F(τ') = ∫₀¹ F(ω') dω'` is available in closed form (sum of
//! sinc terms from the expanded bilinear form) and by adaptive quadrature.
//! The constant `ω_D` prefactor is dropped throughout.

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadOptions};
use crate::sequence::{check_deltas, SequenceSet};

/// Dimensionless description of a sequence, sufficient to evaluate `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEvalContext {
    pub deltas: Vec<f64>,
    pub tau_prime: f64,
    pub tau_pi_prime: f64,
}

impl FilterEvalContext {
    pub fn new(deltas: Vec<f64>, tau_prime: f64, tau_pi_prime: f64) -> Result<Self> {
        if !(tau_prime >= 0.0) || !tau_prime.is_finite() {
            return Err(Error::InvalidSequence(format!("tau' must be non-negative, got {tau_prime}")));
        }
        if !(tau_pi_prime >= 0.0) || !tau_pi_prime.is_finite() {
            return Err(Error::InvalidSequence(format!("tau_pi' must be non-negative, got {tau_pi_prime}")));
        }
        let rel_width = if tau_prime > 0.0 { tau_pi_prime / tau_prime } else { 0.0 };
        check_deltas(&deltas, rel_width)?;
        Ok(Self { deltas, tau_prime, tau_pi_prime })
    }

    /// Skips validation; for inner loops whose inputs are already known good.
    pub(crate) fn unchecked(deltas: Vec<f64>, tau_prime: f64, tau_pi_prime: f64) -> Self {
        Self { deltas, tau_prime, tau_pi_prime }
    }

    pub fn n(&self) -> usize {
        self.deltas.len()
    }

    /// `F` at dimensionless frequency `ω'`.
    pub fn filter_value(&self, omega_prime: f64) -> f64 {
        filter_at(&self.deltas, omega_prime * self.tau_prime, pulse_factor(omega_prime, self.tau_pi_prime))
    }

    /// `F` evaluated through the real form available to mirror-symmetric
    /// sequences. Only meaningful when `δ_j + δ_{n+1-j} = 1`.
    pub fn filter_value_symmetric(&self, omega_prime: f64) -> f64 {
        filter_symmetric(&self.deltas, omega_prime * self.tau_prime, pulse_factor(omega_prime, self.tau_pi_prime))
    }

    /// Closed-form `∫₀¹ F(ω') dω'`.
    pub fn area_analytic(&self) -> f64 {
        area_closed_form(&self.deltas, self.tau_prime, self.tau_pi_prime)
    }

    /// `∫₀¹ F(ω') dω'` by adaptive Gauss-Kronrod quadrature, seeded with
    /// at least eight nodes per oscillation period.
    pub fn area_quadrature(&self, opts: &QuadOptions) -> Result<f64> {
        let omega_max = self.tau_prime + self.tau_pi_prime;
        let seed = quadrature::panels_for_frequency(omega_max, 1.0);
        // F is a squared modulus, so rounding in the amplitude leaves a
        // floor of order (ε Σ|w|)² that no refinement can get under.
        let amp_floor = 16.0 * f64::EPSILON * (2.0 + 2.0 * self.n() as f64);
        let opts = QuadOptions { abs_tol: opts.abs_tol.max(amp_floor * amp_floor), ..*opts };
        let est = quadrature::integrate(|w| self.filter_value(w), 0.0, 1.0, &[], seed, &opts)?;
        Ok(est.value)
    }

    /// Magnitude scale of the terms summed by [`area_analytic`]; the closed
    /// form cannot resolve areas much below `f64::EPSILON` times this.
    ///
    /// [`area_analytic`]: FilterEvalContext::area_analytic
    pub fn area_resolution(&self) -> f64 {
        area_resolution(self.n())
    }
}

/// Rounding floor of [`area_closed_form`] for `n` pulses.
pub fn area_resolution(n: usize) -> f64 {
    let weight_sum = 2.0 + 2.0 * n as f64;
    8.0 * f64::EPSILON * weight_sum * weight_sum
}

/// `cos(ω' τ_π' / 2)`, the finite-width factor applied to every pulse term.
#[inline]
pub fn pulse_factor(omega_prime: f64, tau_pi_prime: f64) -> f64 {
    if tau_pi_prime == 0.0 {
        1.0
    } else {
        (0.5 * omega_prime * tau_pi_prime).cos()
    }
}

#[inline]
fn sign(j: usize) -> f64 {
    if j.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Squared modulus of the bracketed sum at phase `θ = ωτ`, with the finite
/// pulse factor `c` multiplying each pulse term.
pub fn filter_at(deltas: &[f64], theta: f64, c: f64) -> f64 {
    let n = deltas.len();
    let end = sign(n + 1);
    let (s_end, c_end) = theta.sin_cos();
    let mut re = 1.0 + end * c_end;
    let mut im = end * s_end;
    let mut pre = 0.0;
    let mut pim = 0.0;
    for (j, d) in deltas.iter().enumerate() {
        let (s, co) = (theta * d).sin_cos();
        let sg = sign(j + 1);
        pre += sg * co;
        pim += sg * s;
    }
    re += 2.0 * c * pre;
    im += 2.0 * c * pim;
    re * re + im * im
}

/// Real form for mirror-symmetric sequences: pulling out `e^(iθ/2)` leaves
/// a purely imaginary sum (even `n`) or a purely real one (odd `n`).
pub fn filter_symmetric(deltas: &[f64], theta: f64, c: f64) -> f64 {
    let n = deltas.len();
    let half = 0.5 * theta;
    let mut acc = if n.is_multiple_of(2) { -half.sin() } else { half.cos() };
    for (j, d) in deltas[..n / 2].iter().enumerate() {
        let u = theta * (d - 0.5);
        let sg = sign(j + 1);
        if n.is_multiple_of(2) {
            // pair (j, n+1-j) carries opposite signs: 2i sin(θu)
            acc += 2.0 * c * sg * u.sin();
        } else {
            acc += 2.0 * c * sg * u.cos();
        }
    }
    if n % 2 == 1 {
        acc += c * sign(n / 2 + 1);
    }
    4.0 * acc * acc
}

#[inline]
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `∫₀¹ cos(b ω) cos(a ω)^p dω` for `p ∈ {0, 1, 2}`.
#[inline]
fn cos_moment(b: f64, a: f64, p: u8) -> f64 {
    match p {
        0 => sinc(b),
        1 => 0.5 * (sinc(b + a) + sinc(b - a)),
        _ => 0.5 * sinc(b) + 0.25 * (sinc(b + 2.0 * a) + sinc(b - 2.0 * a)),
    }
}

/// Expands `F = Σ_kl w_k w_l c^(m_k+m_l) cos(θ(t_k - t_l))` and integrates
/// each term over `ω' ∈ [0, 1]`.
pub fn area_closed_form(deltas: &[f64], tau_prime: f64, tau_pi_prime: f64) -> f64 {
    let n = deltas.len();
    // Points: t=0 (weight 1), pulses (weight 2(-1)^j, carry the factor), t=1.
    let mut times = Vec::with_capacity(n + 2);
    let mut weights = Vec::with_capacity(n + 2);
    let mut carries = Vec::with_capacity(n + 2);
    times.push(0.0);
    weights.push(1.0);
    carries.push(0u8);
    for (j, d) in deltas.iter().enumerate() {
        times.push(*d);
        weights.push(2.0 * sign(j + 1));
        carries.push(1u8);
    }
    times.push(1.0);
    weights.push(sign(n + 1));
    carries.push(0u8);

    let a = 0.5 * tau_pi_prime;
    let mut diag = 0.0;
    let mut off = 0.0;
    for k in 0..times.len() {
        diag += weights[k] * weights[k] * cos_moment(0.0, a, 2 * carries[k]);
        for l in (k + 1)..times.len() {
            let b = tau_prime * (times[l] - times[k]);
            off += weights[k] * weights[l] * cos_moment(b, a, carries[k] + carries[l]);
        }
    }
    diag + 2.0 * off
}

/// Smallest `τ'` in the set's range at which `F(ω' = 1) = 1`, i.e. the
/// filter evaluated at the cutoff frequency reaches unity.
///
/// Brackets the first sign change on the set grid, then bisects using
/// deltas interpolated between the neighbouring entries.
pub fn tau_f1(set: &SequenceSet) -> Result<f64> {
    let tpp = set.tau_pi_prime();
    let c = pulse_factor(1.0, tpp);
    let g = |tau_prime: f64, deltas: &[f64]| filter_at(deltas, tau_prime, c) - 1.0;
    let entries = set.entries();
    let mut prev = g(entries[0].tau_prime, &entries[0].deltas);
    if prev >= 0.0 {
        return Ok(entries[0].tau_prime);
    }
    for k in 1..entries.len() {
        let cur = g(entries[k].tau_prime, &entries[k].deltas);
        if cur >= 0.0 {
            let (mut lo, mut hi) = (entries[k - 1].tau_prime, entries[k].tau_prime);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if !(mid > lo && mid < hi) {
                    break;
                }
                let d = set.deltas_at(mid)?;
                if g(mid, &d) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(0.5 * (lo + hi));
        }
        prev = cur;
    }
    let (lo, hi) = set.tau_range();
    Err(Error::NoCrossing(format!("F(omega'=1) stays below 1 on tau' in [{lo}, {hi}] (last value {})", prev + 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{cpmg_deltas, udd_deltas, Generator};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn ctx(deltas: Vec<f64>, tau_prime: f64, tau_pi_prime: f64) -> FilterEvalContext {
        FilterEvalContext::new(deltas, tau_prime, tau_pi_prime).unwrap()
    }

    #[test]
    fn zero_at_origin() {
        for n in 0..=20 {
            let c = ctx(cpmg_deltas(n), 3.0, 0.0);
            assert_eq!(c.filter_value(0.0), 0.0);
        }
    }

    #[test]
    fn single_echo_closed_form() {
        // F_1 = 16 sin⁴(ωτ/4); at ωτ = 2π this is 16.
        let c = ctx(vec![0.5], 2.0 * PI, 0.0);
        assert_relative_eq!(c.filter_value(1.0), 16.0, max_relative = 1e-14);
        for k in 1..50 {
            let theta = k as f64 * 0.37;
            let want = 16.0 * (theta / 4.0).sin().powi(4);
            assert_relative_eq!(filter_at(&[0.5], theta, 1.0), want, max_relative = 1e-10, epsilon = 1e-14);
        }
    }

    #[test]
    fn free_evolution() {
        let c = ctx(vec![], PI, 0.0);
        assert_relative_eq!(c.filter_value(1.0), 4.0, max_relative = 1e-15);
    }

    #[test]
    fn area_free_evolution() {
        // ∫₀¹ 4 sin²(ω'τ'/2) dω' = 2 - 2 sin(τ')/τ'
        let c = ctx(vec![], PI, 0.0);
        assert_relative_eq!(c.area_analytic(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(c.area_quadrature(&QuadOptions::default()).unwrap(), 2.0, max_relative = 1e-10);
    }

    #[test]
    fn area_single_echo() {
        let c = ctx(vec![0.5], 4.0 * PI, 0.0);
        assert_relative_eq!(c.area_analytic(), 6.0, max_relative = 1e-13);
        assert_relative_eq!(c.area_quadrature(&QuadOptions::default()).unwrap(), 6.0, max_relative = 1e-10);
    }

    #[test]
    fn area_vanishes_for_short_sequences() {
        let c = ctx(udd_deltas(6), 1e-6, 0.0);
        assert!(c.area_quadrature(&QuadOptions::default()).unwrap() <= 1e-10);
        assert!(c.area_analytic().abs() <= 1e-10);
    }

    #[test]
    fn finite_pulse_area_matches_quadrature() {
        let c = ctx(cpmg_deltas(4), 20.0, 0.7);
        let q = c.area_quadrature(&QuadOptions::default()).unwrap();
        assert_relative_eq!(c.area_analytic(), q, max_relative = 1e-9);
    }

    #[test]
    fn symmetric_form_matches() {
        for n in 0..=9 {
            let c = ctx(udd_deltas(n), 11.3, 0.4);
            for k in 0..40 {
                let w = k as f64 * 0.1;
                assert_relative_eq!(
                    c.filter_value(w),
                    c.filter_value_symmetric(w),
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn tau_f1_of_udd_is_bracketed_by_grid() {
        let grid: Vec<f64> = (1..=400).map(|i| i as f64 * 0.1).collect();
        let set = SequenceSet::fixed(Generator::Udd, 6, 0.0, &grid).unwrap();
        let t = tau_f1(&set).unwrap();
        assert_relative_eq!(filter_at(&udd_deltas(6), t, 1.0), 1.0, max_relative = 1e-9);
        assert!(grid.iter().all(|&g| g >= t || filter_at(&udd_deltas(6), g, 1.0) < 1.0));
    }

    #[test]
    fn tau_f1_reports_no_crossing() {
        let grid: Vec<f64> = (1..=10).map(|i| i as f64 * 0.1).collect();
        let set = SequenceSet::fixed(Generator::Udd, 6, 0.0, &grid).unwrap();
        assert!(matches!(tau_f1(&set), Err(Error::NoCrossing(_))));
    }
}
