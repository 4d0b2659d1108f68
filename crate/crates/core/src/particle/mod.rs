//! Weighted-particle discretization of the mesoscopic equation: positions
//! and masses are frozen, `(v, w)` evolve under the FitzHugh-Nagumo reaction
//! and the stiff `1/eps^2` kernel coupling.

pub mod fgt;
pub mod interaction;
pub mod neighbors;
pub mod sampling;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Domain;
use crate::linalg::{conjugate_gradient, det_sum, SolverOptions};
use crate::model::{FhnParams, KernelSpec};
pub use interaction::{BackendChoice, Interaction, DEFAULT_CUTOFF_MULTIPLIER};
pub use neighbors::NeighborList;
pub use sampling::{sample_initial, MesoInitConfig};

/// Everything an ensemble needs besides its particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSetup {
    pub domain: Domain,
    pub eps: f64,
    pub kernel: KernelSpec,
    pub params: FhnParams,
    #[serde(default)]
    pub backend: BackendChoice,
}

/// `N` weighted neurons with fixed positions and evolving `(v, w)`.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    interaction: Arc<Interaction>,
    params: FhnParams,
    v: Vec<f64>,
    w: Vec<f64>,
    time: f64,
    steps: usize,
}

/// Switches and limits for [`ParticleEnsemble::step`].
#[derive(Debug, Clone, Copy)]
pub struct StepOptions {
    pub reaction: bool,
    pub interaction: bool,
    /// Largest admissible `|v|` or `|w|`.
    pub guard: f64,
    pub solver: SolverOptions,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { reaction: true, interaction: true, guard: 1e6, solver: SolverOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub time: f64,
    pub max_abs_state: f64,
    pub solver_iterations: usize,
}

/// Masses must sum to one within this tolerance at creation.
pub const MASS_TOLERANCE: f64 = 1e-12;

impl ParticleEnsemble {
    pub fn new(setup: &EnsembleSetup, positions: Vec<f64>, v: Vec<f64>, w: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        setup.params.validate()?;
        if !(setup.eps > 0.0 && setup.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be > 0, got {}", setup.eps)));
        }
        if setup.kernel.dim != setup.domain.dim {
            return Err(Error::InvalidParameter("kernel and domain dimensions differ".into()));
        }
        let n = masses.len();
        let dim = setup.domain.dim;
        if n == 0 || v.len() != n || w.len() != n || positions.len() != n * dim {
            return Err(Error::InvalidInput("inconsistent particle array lengths".into()));
        }
        if masses.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidInput("masses must be positive and finite".into()));
        }
        let total = det_sum(&masses);
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!("masses sum to {total}, not 1")));
        }
        if v.iter().chain(&w).any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite particle state".into()));
        }
        if positions.chunks(dim).any(|p| !setup.domain.contains(p)) {
            return Err(Error::InvalidInput("particle position outside the domain".into()));
        }
        let interaction =
            Interaction::new(setup.domain, positions, masses, setup.eps, setup.kernel, setup.backend)?;
        Ok(Self { interaction: Arc::new(interaction), params: setup.params, v, w, time: 0.0, steps: 0 })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.interaction.domain.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.interaction.domain
    }

    pub fn eps(&self) -> f64 {
        self.interaction.eps
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.interaction.kernel
    }

    pub fn params(&self) -> &FhnParams {
        &self.params
    }

    pub fn interaction(&self) -> &Interaction {
        &self.interaction
    }

    pub fn positions(&self) -> &[f64] {
        self.interaction.positions()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        self.interaction.position(i)
    }

    pub fn masses(&self) -> &[f64] {
        self.interaction.masses()
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Replaces the states, keeping positions and masses.
    pub fn set_states(&mut self, v: Vec<f64>, w: Vec<f64>) -> Result<()> {
        if v.len() != self.len() || w.len() != self.len() {
            return Err(Error::InvalidInput("state length mismatch".into()));
        }
        if v.iter().chain(&w).any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("non-finite particle state".into()));
        }
        self.v = v;
        self.w = w;
        Ok(())
    }

    /// `K_i = (1/eps^{d+2}) sum_j m_j Psi(|x_i - x_j| / eps) (v_i - v_j)`.
    pub fn interaction_drift(&self) -> Vec<f64> {
        self.interaction.drift(&self.v)
    }

    /// Total mass, summed in a fixed order.
    pub fn total_mass(&self) -> f64 {
        det_sum(self.masses())
    }

    /// One Lie-split step: Heun on the reaction, then implicit Euler on the
    /// interaction. On error the ensemble is left unchanged.
    pub fn step(&mut self, dt: f64, opts: &StepOptions) -> Result<StepReport> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
        }
        let p = self.params;
        let (mut v, w) = if opts.reaction {
            let pairs: Vec<(f64, f64)> = self
                .v
                .par_iter()
                .zip(self.w.par_iter())
                .map(|(&v0, &w0)| {
                    let k1v = p.nonlinearity(v0) - w0;
                    let k1w = p.adaptation(v0, w0);
                    let (v1, w1) = (v0 + dt * k1v, w0 + dt * k1w);
                    let k2v = p.nonlinearity(v1) - w1;
                    let k2w = p.adaptation(v1, w1);
                    (v0 + 0.5 * dt * (k1v + k2v), w0 + 0.5 * dt * (k1w + k2w))
                })
                .collect();
            pairs.into_iter().unzip()
        } else {
            (self.v.clone(), self.w.clone())
        };
        let mut iterations = 0;
        if opts.interaction && self.len() > 1 {
            iterations = self.implicit_interaction(&mut v, dt, opts.solver)?;
        }
        let max_abs = v.iter().chain(&w).fold(0.0_f64, |m, s| if s.is_finite() { m.max(s.abs()) } else { f64::INFINITY });
        let step = self.steps + 1;
        let time = self.time + dt;
        if max_abs > opts.guard {
            return Err(Error::BlowUp { step, time, magnitude: max_abs });
        }
        self.v = v;
        self.w = w;
        self.steps = step;
        self.time = time;
        Ok(StepReport { step, time, max_abs_state: max_abs, solver_iterations: iterations })
    }

    /// Solves `(M + (dt/eps^2) M L) v = M v_half`, which is symmetric positive definite.
    fn implicit_interaction(&self, v: &mut [f64], dt: f64, solver: SolverOptions) -> Result<usize> {
        let m = self.masses();
        let c = dt / (self.eps() * self.eps());
        let inter = &self.interaction;
        let b: Vec<f64> = v.iter().zip(m).map(|(x, mi)| x * mi).collect();
        let inv_diag: Vec<f64> = inter.row_sums().iter().zip(m).map(|(r, mi)| 1.0 / (mi * (1.0 + c * r))).collect();
        let apply = |x: &[f64], out: &mut [f64]| {
            inter.apply_graph_laplacian(x, out);
            out.par_iter_mut()
                .zip(x.par_iter().zip(m.par_iter()))
                .for_each(|(o, (xi, mi))| *o = mi * (xi + c * *o));
        };
        conjugate_gradient(apply, &inv_diag, &b, v, solver)
    }

    /// Integrates to `t_end`, calling `observe` at the start, every `stride`
    /// steps and at the end. The step is shortened so that it divides `t_end`.
    pub fn run<R, F>(&mut self, t_end: f64, dt: f64, stride: usize, opts: &StepOptions, mut observe: F) -> Result<Vec<R>>
    where
        F: FnMut(&ParticleEnsemble) -> Result<R>,
    {
        if !(t_end >= 0.0 && t_end.is_finite()) || !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("need T >= 0 and dt > 0, got T = {t_end}, dt = {dt}")));
        }
        let stride = stride.max(1);
        let n_steps = step_count(t_end, dt);
        let dt = if n_steps > 0 { t_end / n_steps as f64 } else { dt };
        let t0 = self.time;
        let mut out = vec![observe(self)?];
        for k in 1..=n_steps {
            self.step(dt, opts)?;
            // avoid drift of the accumulated clock
            self.time = t0 + k as f64 * dt;
            if k % stride == 0 || k == n_steps {
                out.push(observe(self)?);
            }
        }
        Ok(out)
    }
}

/// Number of steps of size about `dt` covering `[0, t_end]`.
pub fn step_count(t_end: f64, dt: f64) -> usize {
    if t_end <= 0.0 {
        0
    } else {
        ((t_end / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize
    }
}

/// Neighbor list of the ensemble with cutoff `cutoff_multiplier * eps * s`.
pub fn build_neighbor_list(ens: &ParticleEnsemble, cutoff_multiplier: f64) -> Result<NeighborList> {
    interaction::build_neighbor_list_raw(ens.domain(), ens.positions(), ens.kernel(), ens.eps(), cutoff_multiplier)
}
