//! Globally adaptive Gauss-Kronrod (7/15) quadrature for oscillatory integrands.
//!
//! The interval is first cut at caller-supplied breakpoints and seeded with
//! enough panels to resolve the integrand's oscillation; the panel with the
//! largest error estimate is then bisected until the total estimate meets
//! the tolerance or the panel ceiling is hit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd-indexed Kronrod nodes (and the center).
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Ceiling on the number of panels before giving up.
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-300, max_panels: 200_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadEstimate {
    pub value: f64,
    pub error: f64,
    pub panels: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Single 15-point Kronrod rule with embedded 7-point Gauss error estimate.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    (value, error)
}

/// Number of seed panels needed for at least eight nodes per period of an
/// oscillation with angular frequency `omega` on an interval of `length`.
pub fn panels_for_frequency(omega: f64, length: f64) -> usize {
    let periods = omega.abs() * length / (2.0 * std::f64::consts::PI);
    ((8.0 * periods) / 15.0).ceil().max(1.0) as usize
}

/// Integrates `f` over `[a, b]`.
///
/// `cuts` are interior points where the integrand is known to be
/// non-smooth; `seed_panels` is the minimum number of equal panels the
/// whole interval is divided into before refinement starts.
pub fn integrate<F>(f: F, a: f64, b: f64, cuts: &[f64], seed_panels: usize, opts: &QuadOptions) -> Result<QuadEstimate>
where
    F: Fn(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidConfig(format!("non-finite integration limits [{a}, {b}]")));
    }
    if b <= a {
        return Ok(QuadEstimate { value: 0.0, error: 0.0, panels: 0, evaluations: 0 });
    }
    let mut edges: Vec<f64> = Vec::with_capacity(cuts.len() + 2);
    edges.push(a);
    edges.extend(cuts.iter().copied().filter(|c| *c > a && *c < b));
    edges.push(b);
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let seed_panels = seed_panels.max(1);
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evaluations = 0usize;
    for w in edges.windows(2) {
        let len = w[1] - w[0];
        let k = ((seed_panels as f64) * len / (b - a)).ceil().max(1.0) as usize;
        let h = len / k as f64;
        for i in 0..k {
            let pa = w[0] + h * i as f64;
            let pb = if i + 1 == k { w[1] } else { w[0] + h * (i + 1) as f64 };
            let (value, error) = gk15(&f, pa, pb);
            evaluations += 15;
            total += value;
            total_err += error;
            heap.push(Panel { a: pa, b: pb, value, error });
        }
    }
    if heap.len() > opts.max_panels {
        return Err(Error::QuadratureDiverged { a, b, panels: heap.len(), error: total_err });
    }

    // Re-summing from the heap every so often keeps rounding drift in the
    // running totals from stalling convergence.
    let mut since_resum = 0;
    loop {
        let target = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= target {
            break;
        }
        if heap.len() >= opts.max_panels {
            let worst = heap.peek().copied().expect("non-empty heap");
            return Err(Error::QuadratureDiverged { a: worst.a, b: worst.b, panels: heap.len(), error: total_err });
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) {
            // Panel can no longer be split in floating point.
            return Err(Error::QuadratureDiverged { a: worst.a, b: worst.b, panels: heap.len() + 1, error: total_err });
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Panel { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Panel { a: mid, b: worst.b, value: v2, error: e2 });
        since_resum += 1;
        if since_resum >= 64 {
            since_resum = 0;
            total = heap.iter().map(|p| p.value).sum();
            total_err = heap.iter().map(|p| p.error).sum();
        }
    }
    // Final sum in interval order so the result does not depend on heap layout.
    let mut panels = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let value = panels.iter().map(|p| p.value).sum();
    let error = panels.iter().map(|p| p.error).sum();
    Ok(QuadEstimate { value, error, panels: panels.len(), evaluations })
}
