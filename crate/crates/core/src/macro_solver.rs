//! Grid solver for the limit reaction-diffusion system
//!
//! ```text
//! dV/dt = sigma [(rho0 + delta) Lap V + 2 grad rho0 . grad V] + N(V) - W
//! dW/dt = tau (V - gamma W)
//! ```
//!
//! with `V = W = 0` wherever `rho0 = 0`. Diffusion is implicit, the reaction
//! explicit (Heun), and `W` is advanced by exact exponential integration of
//! `V` interpolated linearly in time.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, GridSpec, ScalarField};
use crate::linalg::{bicgstab, det_sum, SolverOptions};
use crate::model::FhnParams;

/// Grid state of the limit system.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub grid: GridSpec,
    pub rho0: ScalarField,
    pub v: ScalarField,
    pub w: ScalarField,
    pub delta: f64,
    pub sigma: f64,
    pub params: FhnParams,
    pub t: f64,
}

/// Tolerance on `sum rho0 h^d = 1`.
pub const RHO_MASS_TOLERANCE: f64 = 1e-8;

impl MacroState {
    pub fn new(
        rho0: ScalarField,
        v: ScalarField,
        w: ScalarField,
        delta: f64,
        sigma: f64,
        params: FhnParams,
    ) -> Result<Self> {
        rho0.grid.check_same(&v.grid)?;
        rho0.grid.check_same(&w.grid)?;
        params.validate()?;
        if rho0.values.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidInput("rho0 must be nonnegative".into()));
        }
        let mass = rho0.integral();
        if (mass - 1.0).abs() > RHO_MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!("rho0 has mass {mass}, expected 1")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be >= 0, got {delta}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
        }
        let mut s = Self { grid: rho0.grid, rho0, v, w, delta, sigma, params, t: 0.0 };
        s.enforce_zero_convention();
        Ok(s)
    }

    /// Sets `V = W = 0` on cells where `rho0 = 0`.
    pub fn enforce_zero_convention(&mut self) {
        for ((r, v), w) in self.rho0.values.iter().zip(self.v.values.iter_mut()).zip(self.w.values.iter_mut()) {
            if *r == 0.0 {
                *v = 0.0;
                *w = 0.0;
            }
        }
    }

    /// True when the zero convention holds exactly.
    pub fn zero_convention_holds(&self) -> bool {
        self.rho0
            .values
            .iter()
            .zip(&self.v.values)
            .zip(&self.w.values)
            .all(|((r, v), w)| *r != 0.0 || (*v == 0.0 && *w == 0.0))
    }
}

/// Precomputed stencil of `L V = sigma [(rho0 + delta) Lap V + 2 grad rho0 . grad V]`.
#[derive(Debug, Clone)]
pub struct DiffusionOperator {
    grid: GridSpec,
    /// Per cell: `(neighbor, coefficient)` for the `2d` axis neighbors.
    off: Vec<[(usize, f64); 6]>,
    center: Vec<f64>,
}

impl DiffusionOperator {
    pub fn new(rho0: &ScalarField, delta: f64, sigma: f64) -> Self {
        let g = rho0.grid;
        let grads: Vec<ScalarField> = (0..g.dim).map(|a| rho0.gradient(a)).collect();
        let inv_h2 = 1.0 / (g.h * g.h);
        let inv_h = 1.0 / g.h;
        let (off, center): (Vec<_>, Vec<_>) = (0..g.len())
            .map(|c| {
                let diff = rho0.values[c] + delta;
                let mut row = [(c, 0.0); 6];
                for a in 0..g.dim {
                    let mut o = [0isize; 3];
                    o[a] = 1;
                    let p = g.shift(c, &o);
                    o[a] = -1;
                    let m = g.shift(c, &o);
                    let adv = grads[a].values[c] * inv_h;
                    row[2 * a] = (p, sigma * (diff * inv_h2 + adv));
                    row[2 * a + 1] = (m, sigma * (diff * inv_h2 - adv));
                }
                (row, -2.0 * g.dim as f64 * sigma * diff * inv_h2)
            })
            .unzip();
        Self { grid: g, off, center }
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        let d2 = 2 * self.grid.dim;
        out.par_iter_mut().enumerate().for_each(|(c, o)| {
            let mut acc = self.center[c] * x[c];
            for &(j, k) in &self.off[c][..d2] {
                acc += k * x[j];
            }
            *o = acc;
        });
    }

    /// Solves `(I - dt L) x = b`, using `x` as the initial guess.
    pub fn solve_implicit(&self, dt: f64, b: &[f64], x: &mut [f64], opts: SolverOptions) -> Result<usize> {
        let inv_diag: Vec<f64> = self.center.iter().map(|c| 1.0 / (1.0 - dt * c)).collect();
        let apply = |y: &[f64], out: &mut [f64]| {
            self.apply(y, out);
            out.par_iter_mut().zip(y.par_iter()).for_each(|(o, yi)| *o = yi - dt * *o);
        };
        bicgstab(apply, &inv_diag, b, x, opts)
    }
}

/// `sigma [(rho0 + delta) Lap V + 2 grad rho0 . grad V] + N(V) - W`.
pub fn apply_generator(state: &MacroState) -> Result<ScalarField> {
    state.rho0.grid.check_same(&state.v.grid)?;
    state.rho0.grid.check_same(&state.w.grid)?;
    let op = DiffusionOperator::new(&state.rho0, state.delta, state.sigma);
    let mut out = vec![0.0; state.grid.len()];
    op.apply(&state.v.values, &mut out);
    let p = state.params;
    for ((o, v), w) in out.iter_mut().zip(&state.v.values).zip(&state.w.values) {
        *o += p.nonlinearity(*v) - w;
    }
    ScalarField::new(state.grid, out)
}

/// Weights `(alpha, beta)` with
/// `int_0^dt exp(-a (dt - s)) V(s) ds = alpha V(0) + beta V(dt)` for `V` linear on `[0, dt]`.
pub fn exponential_weights(a: f64, dt: f64) -> (f64, f64) {
    let z = a * dt;
    if z.abs() < 1e-2 {
        // (1 - e^{-z}(1 + z)) / z^2 and (1 - e^{-z}) / z as series
        let mut alpha = 0.0;
        let mut phi = 0.0;
        let mut zk = 1.0;
        let mut fact = 1.0; // k!
        for k in 0..10 {
            fact *= (k + 1) as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            // phi1 = sum (-z)^k / (k+1)!
            phi += sign * zk / fact;
            // alpha = sum (-1)^k (k+1) z^k / (k+2)!
            alpha += sign * (k + 1) as f64 * zk / (fact * (k + 2) as f64);
            zk *= z;
        }
        (dt * alpha, dt * (phi - alpha))
    } else {
        let e = (-z).exp();
        let alpha = (1.0 - e * (1.0 + z)) / (z * z);
        let phi = (1.0 - e) / z;
        (dt * alpha, dt * (phi - alpha))
    }
}

/// Options for the macroscopic time loop.
#[derive(Debug, Clone, Copy)]
pub struct MacroOptions {
    /// Include the cubic `N(V)`.
    pub nonlinearity: bool,
    pub guard: f64,
    pub solver: SolverOptions,
    /// Keep a snapshot every `stride` steps (the first and last are always kept).
    pub stride: usize,
    /// Relative slack allowed in the energy monitor before a step is flagged.
    pub monitor_tolerance: f64,
}

impl Default for MacroOptions {
    fn default() -> Self {
        Self { nonlinearity: true, guard: 1e6, solver: SolverOptions::default(), stride: 1, monitor_tolerance: 1e-2 }
    }
}

/// Per-step energy bookkeeping for the `L^2` estimate
/// `d/dt |V|^2 + 2 sigma int (rho0 + delta) |grad V|^2 <= C |V|^2 + 2 int S V`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub t: f64,
    pub l2: f64,
    /// `|V|_2 + |Lap_h V|_2`.
    pub h2: f64,
    pub energy_lhs: f64,
    pub energy_rhs: f64,
    pub flagged: bool,
    pub solver_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MacroTrajectory {
    pub grid: GridSpec,
    pub snapshots: Vec<Snapshot>,
    pub monitors: Vec<MonitorRecord>,
    pub final_state: MacroState,
}

impl MacroTrajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// Number of flagged energy-monitor steps.
    pub fn flagged_steps(&self) -> usize {
        self.monitors.iter().filter(|m| m.flagged).count()
    }

    pub fn sup_h2(&self) -> f64 {
        self.monitors.iter().map(|m| m.h2).fold(0.0, f64::max)
    }

    /// The V snapshots as a quadrature history.
    pub fn v_history(&self) -> VHistory {
        VHistory {
            times: self.times(),
            values: self.snapshots.iter().map(|s| ScalarField { grid: self.grid, values: s.v.clone() }).collect(),
        }
    }

    /// `V` at time `t` and point `x`, linear in time between snapshots and multilinear in space.
    pub fn v_at(&self, t: f64, x: &[f64]) -> Result<f64> {
        let snaps = &self.snapshots;
        let first = snaps.first().map(|s| s.t).unwrap_or(f64::NAN);
        let last = snaps.last().map(|s| s.t).unwrap_or(f64::NAN);
        let slack = 1e-9 * (1.0 + last.abs());
        if !(t >= first - slack && t <= last + slack) {
            return Err(Error::HistoryGap(format!("time {t} outside the trajectory [{first}, {last}]")));
        }
        let k = snaps.partition_point(|s| s.t <= t).clamp(1, snaps.len().max(2) - 1);
        if snaps.len() == 1 {
            return Ok(interpolate(&self.grid, &snaps[0].v, x));
        }
        let (a, b) = (&snaps[k - 1], &snaps[k]);
        let th = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        Ok((1.0 - th) * interpolate(&self.grid, &a.v, x) + th * interpolate(&self.grid, &b.v, x))
    }
}

/// Multilinear interpolation of cell-centre values at `x`.
pub fn interpolate(grid: &GridSpec, values: &[f64], x: &[f64]) -> f64 {
    let mut base = [0isize; 3];
    let mut frac = [0.0; 3];
    for a in 0..grid.dim {
        let s = x[a] / grid.h - 0.5;
        let f = s.floor();
        base[a] = f as isize;
        frac[a] = s - f;
        if grid.boundary == Boundary::ZeroFlux {
            // constant extension beyond the outer centres
            if s < 0.0 {
                base[a] = 0;
                frac[a] = 0.0;
            } else if s > (grid.cells - 1) as f64 {
                base[a] = grid.cells as isize - 1;
                frac[a] = 0.0;
            }
        }
    }
    let origin = grid.linear_index(&[0, 0, 0]);
    let mut acc = 0.0;
    for corner in 0..(1usize << grid.dim) {
        let mut weight = 1.0;
        let mut off = [0isize; 3];
        for a in 0..grid.dim {
            let bit = (corner >> a) & 1;
            off[a] = base[a] + bit as isize;
            weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if weight != 0.0 {
            acc += weight * values[grid.shift(origin, &off)];
        }
    }
    acc
}

/// One IMEX step of `V`: Heun on `N(V) - W` (with `W` advanced by the exponential
/// formula inside the stage), then `(I - dt L) V^{n+1} = V^*`. Returns the new `V`,
/// the explicit source `(V^* - V^n) / dt` and the iteration count.
fn step_v_inner(
    state: &MacroState,
    op: &DiffusionOperator,
    dt: f64,
    opts: &MacroOptions,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let p = state.params;
    let a = p.adaptation_decay();
    let decay = (-a * dt).exp();
    let (wa, wb) = exponential_weights(a, dt);
    let react = |v: f64, w: f64| if opts.nonlinearity { p.nonlinearity(v) - w } else { -w };
    let v_star: Vec<f64> = state
        .v
        .values
        .par_iter()
        .zip(state.w.values.par_iter())
        .map(|(&v, &w)| {
            let k1 = react(v, w);
            let v1 = v + dt * k1;
            let w1 = decay * w + p.tau * (wa * v + wb * v1);
            let k2 = react(v1, w1);
            v + 0.5 * dt * (k1 + k2)
        })
        .collect();
    let source: Vec<f64> = v_star.iter().zip(&state.v.values).map(|(s, v)| (s - v) / dt).collect();
    let mut v_new = v_star.clone();
    let iters = op.solve_implicit(dt, &v_star, &mut v_new, opts.solver)?;
    Ok((v_new, source, iters))
}

/// Advances `V` by one step and re-imposes the zero convention; `W` is untouched.
pub fn step_v(state: &MacroState, dt: f64) -> Result<ScalarField> {
    let op = DiffusionOperator::new(&state.rho0, state.delta, state.sigma);
    let (mut v, _, _) = step_v_inner(state, &op, dt, &MacroOptions::default())?;
    for (x, r) in v.iter_mut().zip(&state.rho0.values) {
        if *r == 0.0 {
            *x = 0.0;
        }
    }
    ScalarField::new(state.grid, v)
}

/// One-step exponential update of `W` given `V` at both ends of the step.
pub fn advance_w(params: &FhnParams, w: &[f64], v_old: &[f64], v_new: &[f64], dt: f64) -> Vec<f64> {
    let a = params.adaptation_decay();
    let decay = (-a * dt).exp();
    let (wa, wb) = exponential_weights(a, dt);
    w.iter()
        .zip(v_old.iter().zip(v_new))
        .map(|(w, (vo, vn))| decay * w + params.tau * (wa * vo + wb * vn))
        .collect()
}

/// Stored `V` at increasing times starting from 0.
#[derive(Debug, Clone)]
pub struct VHistory {
    pub times: Vec<f64>,
    pub values: Vec<ScalarField>,
}

/// `W(t) = exp(-tau gamma t) W0 + tau int_0^t exp(-tau gamma (t - s)) V(s) ds`,
/// with `V` linear between history nodes and the integral evaluated exactly.
pub fn update_w_exact(w0: &ScalarField, params: &FhnParams, history: &VHistory, t: f64) -> Result<ScalarField> {
    let times = &history.times;
    if times.is_empty() || times.len() != history.values.len() {
        return Err(Error::HistoryGap("empty or inconsistent history".into()));
    }
    if times[0].abs() > 1e-12 {
        return Err(Error::HistoryGap(format!("history starts at {} instead of 0", times[0])));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::HistoryGap("history times must increase".into()));
    }
    let last = *times.last().unwrap();
    if t > last + 1e-9 * (1.0 + last) || t < 0.0 {
        return Err(Error::HistoryGap(format!("t = {t} outside the history [0, {last}]")));
    }
    for f in &history.values {
        w0.grid.check_same(&f.grid)?;
    }
    let a = params.adaptation_decay();
    let n = w0.len();
    let mut acc = vec![0.0; n];
    for k in 0..times.len() - 1 {
        let (t0, t1) = (times[k], times[k + 1].min(t));
        if t1 <= t0 {
            break;
        }
        let v0 = &history.values[k].values;
        let full = times[k + 1] - times[k];
        let th = (t1 - t0) / full;
        let (wa, wb) = exponential_weights(a, t1 - t0);
        let tail = (-a * (t - t1)).exp();
        for i in 0..n {
            let v1 = (1.0 - th) * v0[i] + th * history.values[k + 1].values[i];
            acc[i] += tail * (wa * v0[i] + wb * v1);
        }
    }
    let decay = (-a * t).exp();
    let values = w0.values.iter().zip(&acc).map(|(w, s)| decay * w + params.tau * s).collect();
    ScalarField::new(w0.grid, values)
}

/// Energy monitor terms for the step `V^n -> V^{n+1}` with explicit source `s`.
fn energy_monitor(state: &MacroState, v_old: &[f64], v_new: &[f64], source: &[f64], dt: f64, c: f64) -> (f64, f64) {
    let g = state.grid;
    let vol = g.cell_volume();
    let norm2 = |x: &[f64]| crate::linalg::dot(x, x) * vol;
    let (n_old, n_new) = (norm2(v_old), norm2(v_new));
    // face-centred differences with face-averaged coefficients
    let mut grad_terms = vec![0.0; g.len()];
    for a in 0..g.dim {
        let mut o = [0isize; 3];
        o[a] = 1;
        for (i, gt) in grad_terms.iter_mut().enumerate() {
            let j = g.shift(i, &o);
            if g.boundary == Boundary::ZeroFlux && g.multi_index(i)[a] == g.cells - 1 {
                continue;
            }
            let d = (v_new[j] - v_new[i]) / g.h;
            let coef = 0.5 * (state.rho0.values[i] + state.rho0.values[j]) + state.delta;
            *gt += coef * d * d;
        }
    }
    let dissipation = 2.0 * state.sigma * det_sum(&grad_terms) * vol;
    let lhs = (n_new - n_old) / dt + dissipation;
    let rhs = c * n_new + 2.0 * crate::linalg::dot(source, v_new) * vol;
    (lhs, rhs)
}

/// Integrates to `t_end`, keeping snapshots and per-step monitors.
pub fn solve(initial: &MacroState, t_end: f64, dt: f64, opts: &MacroOptions) -> Result<MacroTrajectory> {
    if !(t_end >= 0.0 && t_end.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("need T >= 0 and dt > 0, got T = {t_end}, dt = {dt}")));
    }
    let n_steps = crate::particle::step_count(t_end, dt);
    let dt = if n_steps > 0 { t_end / n_steps as f64 } else { dt };
    let mut state = initial.clone();
    state.enforce_zero_convention();
    let op = DiffusionOperator::new(&state.rho0, state.delta, state.sigma);
    let c = state.sigma * state.rho0.laplacian().max_abs();
    let stride = opts.stride.max(1);
    let t0 = state.t;
    let mut snapshots = vec![Snapshot { t: state.t, v: state.v.values.clone(), w: state.w.values.clone() }];
    let mut monitors = Vec::with_capacity(n_steps);
    for k in 1..=n_steps {
        let (mut v_new, source, iters) = step_v_inner(&state, &op, dt, opts)?;
        let mut w_new = advance_w(&state.params, &state.w.values, &state.v.values, &v_new, dt);
        for ((v, w), r) in v_new.iter_mut().zip(w_new.iter_mut()).zip(&state.rho0.values) {
            if *r == 0.0 {
                *v = 0.0;
                *w = 0.0;
            }
        }
        let magnitude = v_new.iter().chain(&w_new).fold(0.0_f64, |m, x| if x.is_finite() { m.max(x.abs()) } else { f64::INFINITY });
        if magnitude > opts.guard {
            return Err(Error::BlowUp { step: k, time: t0 + k as f64 * dt, magnitude });
        }
        let (lhs, rhs) = energy_monitor(&state, &state.v.values, &v_new, &source, dt, c);
        state.v.values = v_new;
        state.w.values = w_new;
        state.t = t0 + k as f64 * dt;
        let l2 = state.v.l2_norm();
        let h2 = l2 + state.v.laplacian().l2_norm();
        let scale = lhs.abs().max(rhs.abs()).max(l2 * l2);
        monitors.push(MonitorRecord {
            t: state.t,
            l2,
            h2,
            energy_lhs: lhs,
            energy_rhs: rhs,
            flagged: lhs > rhs + opts.monitor_tolerance * scale,
            solver_iterations: iters,
        });
        if k % stride == 0 || k == n_steps {
            snapshots.push(Snapshot { t: state.t, v: state.v.values.clone(), w: state.w.values.clone() });
        }
    }
    Ok(MacroTrajectory { grid: state.grid, snapshots, monitors, final_state: state })
}

/// Result of solving for a decreasing sequence of regularizations.
#[derive(Debug, Clone)]
pub struct DeltaContinuation {
    pub deltas: Vec<f64>,
    /// `sup_t |V_{delta_k} - V_{delta_{k+1}}|_2` for consecutive entries.
    pub gaps: Vec<f64>,
    /// `sup_t (|V|_2 + |Lap_h V|_2)` per delta.
    pub sup_h2: Vec<f64>,
    pub trajectories: Vec<MacroTrajectory>,
}

/// Solves for each `delta` in a strictly decreasing sequence and reports Cauchy gaps.
pub fn delta_continuation(
    initial: &MacroState,
    t_end: f64,
    dt: f64,
    deltas: &[f64],
    opts: &MacroOptions,
) -> Result<DeltaContinuation> {
    if deltas.is_empty() || deltas.windows(2).any(|w| !(w[1] < w[0])) || deltas.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidParameter("delta sequence must be nonnegative and strictly decreasing".into()));
    }
    let opts = MacroOptions { stride: 1, ..*opts };
    let trajectories: Vec<MacroTrajectory> = deltas
        .iter()
        .map(|&d| solve(&MacroState { delta: d, ..initial.clone() }, t_end, dt, &opts))
        .collect::<Result<_>>()?;
    let vol = initial.grid.cell_volume();
    let gaps = trajectories
        .windows(2)
        .map(|pair| {
            pair[0]
                .snapshots
                .iter()
                .zip(&pair[1].snapshots)
                .map(|(a, b)| {
                    let d: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
                    (crate::linalg::dot(&d, &d) * vol).sqrt()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let sup_h2 = trajectories.iter().map(|t| t.sup_h2()).collect();
    Ok(DeltaContinuation { deltas: deltas.to_vec(), gaps, sup_h2, trajectories })
}

/// Weighted samples `(x_j, w_j, m_j)` of the adaptation measure `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationMeasure {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub w: Vec<f64>,
    pub masses: Vec<f64>,
}

impl AdaptationMeasure {
    pub fn new(dim: usize, positions: Vec<f64>, w: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let n = masses.len();
        if positions.len() != n * dim || w.len() != n {
            return Err(Error::InvalidInput("inconsistent adaptation sample lengths".into()));
        }
        if masses.iter().any(|&m| !(m > 0.0)) || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("adaptation samples need positive masses and finite w".into()));
        }
        Ok(Self { dim, positions, w, masses })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        det_sum(&self.masses)
    }

    pub fn position(&self, j: usize) -> &[f64] {
        &self.positions[j * self.dim..(j + 1) * self.dim]
    }

    /// `int |w|^2 dF`.
    pub fn second_moment(&self) -> f64 {
        let t: Vec<f64> = self.w.iter().zip(&self.masses).map(|(w, m)| m * w * w).collect();
        det_sum(&t)
    }
}

/// Incremental transport of an [`AdaptationMeasure`] along a sequence of `V` fields.
#[derive(Debug, Clone)]
pub struct FTransport {
    grid: GridSpec,
    params: FhnParams,
    measure: AdaptationMeasure,
    /// `V(t, x_j)` at the current time.
    v_at: Vec<f64>,
    t: f64,
}

impl FTransport {
    pub fn new(f0: AdaptationMeasure, grid: GridSpec, params: FhnParams, v0: &[f64], t0: f64) -> Result<Self> {
        if f0.dim != grid.dim {
            return Err(Error::GridMismatch("sample dimension differs from the grid".into()));
        }
        let v_at = (0..f0.len()).into_par_iter().map(|j| interpolate(&grid, v0, f0.position(j))).collect();
        Ok(Self { grid, params, measure: f0, v_at, t: t0 })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn measure(&self) -> &AdaptationMeasure {
        &self.measure
    }

    /// One Heun step of `dw/ds = tau (V(s, x_j) - gamma w)` to `t_next`, with `V` linear in time
    /// between the current field and `v_next`.
    pub fn advance(&mut self, v_next: &[f64], t_next: f64) -> Result<()> {
        let h = t_next - self.t;
        if !(h > 0.0) {
            return Err(Error::HistoryGap(format!("cannot advance from t = {} to t = {t_next}", self.t)));
        }
        let (g, p) = (self.grid, self.params);
        let m = &mut self.measure;
        let pos = &m.positions;
        let dim = m.dim;
        m.w.par_iter_mut().zip(self.v_at.par_iter_mut()).enumerate().for_each(|(j, (w, va))| {
            let vb = interpolate(&g, v_next, &pos[j * dim..(j + 1) * dim]);
            let k1 = p.adaptation(*va, *w);
            let k2 = p.adaptation(vb, *w + h * k1);
            *w += 0.5 * h * (k1 + k2);
            *va = vb;
        });
        self.t = t_next;
        Ok(())
    }
}

/// Moves each `w_j` along `dw/ds = tau (V(s, x_j) - gamma w)` from the first
/// snapshot time to `t_end` with Heun steps between snapshots.
pub fn transport_f(f0: &AdaptationMeasure, trajectory: &MacroTrajectory, params: &FhnParams, t_end: f64) -> Result<AdaptationMeasure> {
    let snaps = &trajectory.snapshots;
    let last = snaps.last().map(|s| s.t).unwrap_or(f64::NEG_INFINITY);
    if snaps.is_empty() || t_end > last + 1e-9 * (1.0 + last.abs()) || t_end < snaps[0].t {
        return Err(Error::HistoryGap(format!("trajectory does not cover t = {t_end}")));
    }
    let mut tr = FTransport::new(f0.clone(), trajectory.grid, *params, &snaps[0].v, snaps[0].t)?;
    for k in 1..snaps.len() {
        let (ta, tb) = (snaps[k - 1].t, snaps[k].t);
        if tb <= t_end {
            tr.advance(&snaps[k].v, tb)?;
        } else {
            if t_end > ta {
                let th = (t_end - ta) / (tb - ta);
                let v: Vec<f64> = snaps[k - 1].v.iter().zip(&snaps[k].v).map(|(a, b)| (1.0 - th) * a + th * b).collect();
                tr.advance(&v, t_end)?;
            }
            break;
        }
    }
    Ok(tr.measure)
}
