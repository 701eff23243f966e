//! Derivative-free minimization of the filter-function area with
//! continuation in `τ'`, and direct minimization of the coherence integral.
//!
//! Sequences are parametrized by their first `⌊n/2⌋` pulse centers; the
//! rest follow by mirroring about 0.5 (odd `n` keeps a fixed central
//! pulse). Ordering and non-overlap are handled by a penalty that always
//! ranks infeasible points behind every feasible one, so the best simplex
//! vertex is feasible whenever the seed is.

use log::{debug, warn};

use crate::coherence;
use crate::error::{Error, Result};
use crate::filter::{area_closed_form, area_resolution, FilterEvalContext};
use crate::sequence::{cpmg_deltas, mirror_half, udd_deltas, Generator, SequenceSet, SetEntry};
use crate::spectrum::NoiseSpectrum;

/// Largest pulse count the builders accept.
pub const MAX_PULSES: usize = 20;

/// Objective assigned to infeasible points before the penalty term.
const INFEASIBLE: f64 = 1e100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauGrid {
    pub tau_min: f64,
    pub tau_max: f64,
    pub points: usize,
}

impl TauGrid {
    pub fn new(tau_min: f64, tau_max: f64, points: usize) -> Self {
        Self { tau_min, tau_max, points }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0) || !(self.tau_max > self.tau_min) || !self.tau_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "grid needs 0 < tau_min < tau_max, got ({}, {})",
                self.tau_min, self.tau_max
            )));
        }
        if self.points < 2 {
            return Err(Error::InvalidConfig(format!("grid needs at least 2 points, got {}", self.points)));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        let step = (self.tau_max - self.tau_min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| if i + 1 == self.points { self.tau_max } else { self.tau_min + step * i as f64 })
            .collect()
    }

    pub fn spacing(&self) -> f64 {
        (self.tau_max - self.tau_min) / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Nelder-Mead iteration ceiling for one local solve.
    pub max_iterations: usize,
    /// Relative spread of simplex values at which a solve stops.
    pub rel_tol: f64,
    /// Simplex diameter (in pulse-center units) at which a solve stops.
    pub x_tol: f64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Weight of the constraint-violation term for infeasible points.
    pub penalty_weight: f64,
    /// Additional solves restarted from the best point with a fresh simplex.
    pub restarts: usize,
    /// Smallest allowed separation between neighbouring pulse centers (and
    /// between the first center and 0) when pulses are instantaneous.
    pub min_gap: f64,
    pub grid: TauGrid,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20_000,
            rel_tol: 1e-12,
            x_tol: 1e-10,
            initial_step: 0.02,
            penalty_weight: 1e6,
            restarts: 2,
            min_gap: 1e-6,
            grid: TauGrid::new(0.01, 30.0, 3000),
        }
    }
}

impl OptimizerConfig {
    /// Default grid for `n` pulses: 3000 points on `(0.01, 2nπ)`.
    pub fn for_pulses(n: usize) -> Self {
        let tau_max = (2.0 * n as f64 * std::f64::consts::PI).max(1.0);
        Self { grid: TauGrid::new(0.01, tau_max, 3000), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let positive = [
            ("rel_tol", self.rel_tol),
            ("x_tol", self.x_tol),
            ("initial_step", self.initial_step),
            ("penalty_weight", self.penalty_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.min_gap > 0.0 && self.min_gap < 0.1) {
            return Err(Error::InvalidConfig(format!("min_gap must be in (0, 0.1), got {}", self.min_gap)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Simplex diameter when the last solve stopped.
    pub final_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub deltas: Vec<f64>,
    pub value: f64,
    pub report: ConvergenceReport,
}

/// One row of the continuation log.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub tau_prime: f64,
    pub area: f64,
    pub udd_area: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn convergence_log_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("tau_prime,area,iterations,converged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            crate::sequence::fmt_float(r.tau_prime),
            crate::sequence::fmt_float(r.area),
            r.iterations,
            r.converged
        ));
    }
    out
}

/// Feasible region for the free half-parameters of an `n`-pulse sequence.
#[derive(Debug, Clone, Copy)]
struct Feasibility {
    n: usize,
    /// minimum distance between neighbouring centers
    gap: f64,
    /// minimum distance from the first center to 0
    edge: f64,
}

impl Feasibility {
    fn new(n: usize, tau_prime: f64, tau_pi_prime: f64, min_gap: f64) -> Self {
        let width = tau_pi_prime / tau_prime;
        Self { n, gap: width.max(min_gap), edge: (0.5 * width).max(min_gap) }
    }

    /// Total constraint violation; zero means feasible.
    fn violation(&self, x: &[f64]) -> f64 {
        if x.is_empty() {
            return 0.0;
        }
        let mut v = (self.edge - x[0]).max(0.0);
        for w in x.windows(2) {
            v += (self.gap - (w[1] - w[0])).max(0.0);
        }
        let last = x[x.len() - 1];
        let to_mirror = if self.n.is_multiple_of(2) { 1.0 - 2.0 * last } else { 0.5 - last };
        v += (self.gap - to_mirror).max(0.0);
        if x.iter().any(|c| !c.is_finite()) {
            v = f64::INFINITY;
        }
        v
    }

    fn deltas(&self, x: &[f64]) -> Vec<f64> {
        let mut half = x.to_vec();
        if self.n % 2 == 1 {
            half.push(0.5);
        }
        mirror_half(self.n, &half)
    }
}

fn free_params(deltas: &[f64]) -> Vec<f64> {
    deltas[..deltas.len() / 2].to_vec()
}

#[derive(Debug, Clone)]
struct NmOutcome {
    x: Vec<f64>,
    f: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
    diameter: f64,
}

/// Nelder-Mead with dimension-adaptive coefficients. The simplex vertex
/// ordering uses a stable sort so results are deterministic.
/// `abs_tol` is the objective's resolution: value spreads below it count
/// as converged.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    f0: f64,
    step: f64,
    abs_tol: f64,
    cfg: &OptimizerConfig,
) -> NmOutcome {
    let dim = x0.len();
    let d = dim as f64;
    let (alpha, gamma, rho, sigma) =
        if dim >= 2 { (1.0, 1.0 + 2.0 / d, 0.75 - 0.5 / d, 1.0 - 1.0 / d) } else { (1.0, 2.0, 0.5, 0.5) };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push((x0.to_vec(), f0));
    let mut evaluations = 0;
    for i in 0..dim {
        let mut x = x0.to_vec();
        // step toward the interior of (0, 0.5) so edge seeds stay useful
        x[i] += if x0[i] + step < 0.5 { step } else { -step };
        let fx = f(&x);
        evaluations += 1;
        simplex.push((x, fx));
    }
    let mut iterations = 0;
    let mut converged = false;
    let diameter = |s: &[(Vec<f64>, f64)]| {
        s[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&s[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    };
    while iterations < cfg.max_iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        let flat = (worst - best).abs() <= cfg.rel_tol * best.abs() + abs_tol;
        if flat && diameter(&simplex) <= cfg.x_tol {
            converged = true;
            break;
        }
        // Simplex can collapse onto a flat (or penalty) ridge before x_tol.
        if diameter(&simplex) <= 1e-3 * cfg.x_tol {
            converged = flat;
            break;
        }
        iterations += 1;
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / d;
            }
        }
        let along =
            |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[dim].0).map(|(c, w)| c + t * (c - w)).collect() };
        let xr = along(alpha);
        let fr = f(&xr);
        evaluations += 1;
        if fr < simplex[0].1 {
            let xe = along(alpha * gamma);
            let fe = f(&xe);
            evaluations += 1;
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < simplex[dim].1 {
            let xc = along(alpha * rho);
            let fc = f(&xc);
            (xc, fc)
        } else {
            let xc = along(-rho);
            let fc = f(&xc);
            (xc, fc)
        };
        evaluations += 1;
        if fc < simplex[dim].1.min(fr) {
            simplex[dim] = (xc, fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            for (xi, bi) in v.0.iter_mut().zip(&x_best) {
                *xi = bi + sigma * (*xi - bi);
            }
            v.1 = f(&v.0);
            evaluations += 1;
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let diam = diameter(&simplex);
    let (x, fx) = simplex.swap_remove(0);
    NmOutcome { x, f: fx, iterations, evaluations, converged, diameter: diam }
}

/// Runs the configured number of local solves from `seed` and applies the
/// seed-dominance and tie-breaking rules.
fn local_search<F: Fn(&[f64]) -> f64>(
    objective: &F,
    feas: &Feasibility,
    seed: &[f64],
    resolution: f64,
    cfg: &OptimizerConfig,
) -> (Vec<f64>, f64, ConvergenceReport) {
    let penalized = |x: &[f64]| {
        let v = feas.violation(x);
        if v > 0.0 {
            INFEASIBLE + cfg.penalty_weight * v
        } else {
            objective(x)
        }
    };
    let f_seed = penalized(seed);
    let mut report = ConvergenceReport { iterations: 0, evaluations: 1, converged: true, final_step: 0.0 };
    if seed.is_empty() {
        return (seed.to_vec(), f_seed, report);
    }
    let mut candidates: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut x = seed.to_vec();
    let mut fx = f_seed;
    for attempt in 0..=cfg.restarts {
        let out = nelder_mead(&penalized, &x, fx, cfg.initial_step, resolution, cfg);
        report.iterations += out.iterations;
        report.evaluations += out.evaluations;
        report.converged = out.converged;
        report.final_step = out.diameter;
        let improved = out.f < fx;
        if improved {
            x = out.x.clone();
            fx = out.f;
        }
        candidates.push((out.x, out.f));
        if attempt > 0 && !improved {
            break;
        }
    }
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tie = cfg.rel_tol * best.abs() + resolution;
    let dist = |x: &[f64]| x.iter().zip(seed).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let (mut x_best, mut f_best) = candidates
        .iter()
        .filter(|c| c.1 <= best + tie)
        .min_by(|a, b| dist(&a.0).total_cmp(&dist(&b.0)))
        .map(|c| (c.0.clone(), c.1))
        .expect("at least one candidate");
    // Gains below what the objective can resolve are rounding noise; keep
    // the seed so traces do not wander where the landscape is flat.
    if !(f_best < f_seed - resolution) {
        x_best = seed.to_vec();
        f_best = f_seed;
    }
    (x_best, f_best, report)
}

fn check_pulse_count(n: usize) -> Result<()> {
    if n > MAX_PULSES {
        return Err(Error::TooManyPulses(n));
    }
    Ok(())
}

/// Moves `seed` into the feasible region by blending toward CPMG, which is
/// the most evenly spread configuration. Returns `None` when even CPMG
/// cannot host the pulses.
fn feasible_seed(feas: &Feasibility, seed: &[f64]) -> Option<Vec<f64>> {
    if feas.violation(seed) == 0.0 {
        return Some(seed.to_vec());
    }
    let even = free_params(&cpmg_deltas(feas.n));
    if feas.violation(&even) > 0.0 {
        return None;
    }
    let blend = |t: f64| -> Vec<f64> { seed.iter().zip(&even).map(|(s, e)| s + t * (e - s)).collect() };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feas.violation(&blend(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(blend(hi))
}

fn validate_initial(n: usize, initial: &[f64]) -> Result<()> {
    if initial.len() != n {
        return Err(Error::InvalidSequence(format!("expected {n} initial pulse centers, got {}", initial.len())));
    }
    if crate::sequence::symmetry_defect(initial) > crate::sequence::SYMMETRY_TOL {
        return Err(Error::InvalidSequence("initial sequence must be mirror-symmetric about 0.5".into()));
    }
    Ok(())
}

/// Minimizes the closed-form filter-function area at fixed `τ'` starting
/// from `initial_deltas`.
pub fn minimize_area(
    n: usize,
    tau_prime: f64,
    tau_pi_prime: f64,
    initial_deltas: &[f64],
    config: &OptimizerConfig,
) -> Result<Optimized> {
    check_pulse_count(n)?;
    config.validate()?;
    validate_initial(n, initial_deltas)?;
    let feas = Feasibility::new(n, tau_prime, tau_pi_prime, config.min_gap);
    let seed = free_params(initial_deltas);
    if feas.violation(&seed) > 0.0 {
        return Err(Error::Optimizer {
            tau_prime,
            reason: "initial sequence violates the ordering or gap constraints".into(),
        });
    }
    let objective = |x: &[f64]| area_closed_form(&feas.deltas(x), tau_prime, tau_pi_prime);
    let resolution = area_resolution(n);
    let (x, value, report) = local_search(&objective, &feas, &seed, resolution, config);
    Ok(Optimized { deltas: feas.deltas(&x), value, report })
}

/// Result of a continuation sweep.
#[derive(Debug, Clone)]
pub struct OfddBuild {
    pub set: SequenceSet,
    pub log: Vec<ConvergenceRow>,
    /// Grid steps where some pulse center jumped by more than five grid
    /// spacings, a sign the sweep left its local branch.
    pub branch_jumps: Vec<f64>,
}

/// Builds an OFDD set by sweeping `τ'` upward over the configured grid,
/// seeding each point with the previous optimum (the first with UDD).
///
/// With finite pulses the set starts at the first grid point able to
/// host `n` non-overlapping pulses.
pub fn build_ofdd_set(n: usize, tau_pi_prime: f64, config: &OptimizerConfig) -> Result<OfddBuild> {
    build_ofdd_set_observed(n, tau_pi_prime, config, &mut |_, _| {})
}

/// [`build_ofdd_set`] that reports each accepted entry as it is produced,
/// so callers can keep partial results when a later point fails.
pub fn build_ofdd_set_observed(
    n: usize,
    tau_pi_prime: f64,
    config: &OptimizerConfig,
    observe: &mut dyn FnMut(&SetEntry, &ConvergenceRow),
) -> Result<OfddBuild> {
    check_pulse_count(n)?;
    config.validate()?;
    if n == 0 {
        return Err(Error::InvalidConfig("an OFDD set needs at least one pulse".into()));
    }
    if !(tau_pi_prime >= 0.0) || !tau_pi_prime.is_finite() {
        return Err(Error::InvalidConfig(format!("tau_pi' must be non-negative, got {tau_pi_prime}")));
    }
    let grid = config.grid.values();
    let spacing = config.grid.spacing();
    let udd = udd_deltas(n);
    let mut entries: Vec<SetEntry> = Vec::with_capacity(grid.len());
    let mut log = Vec::with_capacity(grid.len());
    let mut branch_jumps = Vec::new();
    let mut seed = free_params(&udd);
    for &tau_prime in &grid {
        let feas = Feasibility::new(n, tau_prime, tau_pi_prime, config.min_gap);
        let Some(start) = feasible_seed(&feas, &seed) else {
            debug!("tau'={tau_prime}: {n} pulses of width {tau_pi_prime} do not fit, skipping");
            continue;
        };
        let start_deltas = feas.deltas(&start);
        let opt = minimize_area(n, tau_prime, tau_pi_prime, &start_deltas, config)
            .map_err(|e| Error::Optimizer { tau_prime, reason: e.to_string() })?;
        let udd_area = if feas.violation(&free_params(&udd)) == 0.0 {
            area_closed_form(&udd, tau_prime, tau_pi_prime)
        } else {
            f64::NAN
        };
        if let Some(prev) = entries.last() {
            let jump = prev.deltas.iter().zip(&opt.deltas).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if jump > 5.0 * spacing {
                warn!("n={n}: pulse centers jumped by {jump:.4} at tau'={tau_prime:.4}; continuation may have changed branch");
                branch_jumps.push(tau_prime);
            }
        }
        seed = free_params(&opt.deltas);
        let row = ConvergenceRow {
            tau_prime,
            area: opt.value,
            udd_area,
            iterations: opt.report.iterations,
            converged: opt.report.converged,
        };
        let entry = SetEntry { tau_prime, deltas: opt.deltas };
        observe(&entry, &row);
        log.push(row);
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Optimizer {
            tau_prime: config.grid.tau_max,
            reason: format!("no grid point can host {n} pulses of width {tau_pi_prime}"),
        });
    }
    let non_converged = log.iter().filter(|r| !r.converged).count();
    let set = SequenceSet::new(n, tau_pi_prime, Generator::Ofdd, entries)?
        .with_meta("grid", format!("{},{},{}", config.grid.tau_min, config.grid.tau_max, config.grid.points))
        .with_meta("rel_tol", config.rel_tol)
        .with_meta("x_tol", config.x_tol)
        .with_meta("initial_step", config.initial_step)
        .with_meta("restarts", config.restarts)
        .with_meta("min_gap", config.min_gap)
        .with_meta("non_converged", non_converged)
        .with_meta("branch_jumps", branch_jumps.len());
    Ok(OfddBuild { set, log, branch_jumps })
}

/// Minimizes the coherence integral `χ` for a known spectrum at fixed `τ'`.
pub fn lodd_optimize(
    spectrum: &NoiseSpectrum,
    n: usize,
    tau_prime: f64,
    tau_pi_prime: f64,
    initial_deltas: &[f64],
    config: &OptimizerConfig,
) -> Result<Optimized> {
    check_pulse_count(n)?;
    config.validate()?;
    validate_initial(n, initial_deltas)?;
    let feas = Feasibility::new(n, tau_prime, tau_pi_prime, config.min_gap);
    let seed = free_params(initial_deltas);
    if feas.violation(&seed) > 0.0 {
        return Err(Error::Optimizer {
            tau_prime,
            reason: "initial sequence violates the ordering or gap constraints".into(),
        });
    }
    let chi_opts = coherence::ChiOptions::default();
    let seed_chi = coherence::chi_value(
        spectrum,
        &FilterEvalContext::unchecked(initial_deltas.to_vec(), tau_prime, tau_pi_prime),
        &chi_opts,
    )?;
    let objective = |x: &[f64]| {
        let ctx = FilterEvalContext::unchecked(feas.deltas(x), tau_prime, tau_pi_prime);
        coherence::chi_value(spectrum, &ctx, &chi_opts).unwrap_or(f64::INFINITY)
    };
    let resolution = chi_opts.abs_tol.max(chi_opts.rel_tol * seed_chi);
    let (x, value, report) = local_search(&objective, &feas, &seed, resolution, config);
    Ok(Optimized { deltas: feas.deltas(&x), value, report })
}
