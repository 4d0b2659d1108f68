//! Randomized check of the exact algebraic identities and inequalities.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::{dissipation, moment_inequality_check, symmetrization_terms};
use crate::error::{Error, Result};
use crate::grid::{Boundary, Domain, GridSpec, ScalarField};
use crate::kernel_ops::green_identity;
use crate::model::{derive_constants, FhnParams, KernelFamily, KernelSpec};
use crate::particle::interaction::BackendChoice;
use crate::particle::{EnsembleSetup, ParticleEnsemble};

/// Relative tolerance of the exact identities.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;
pub const MAX_PARTICLES: usize = 200;
pub const MAX_CELLS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub seed: u64,
    pub trials: usize,
    /// Worst `gap / scale` of the symmetrization identity over `p in {1, 2, 3}`.
    pub worst_symmetrization: f64,
    /// Worst `gap / scale` of the discrete Green identity.
    pub worst_green: f64,
    /// Smallest `D_p` seen for `p in {1, 2, 3}`.
    pub min_dissipation: f64,
    pub moment_failures: usize,
    pub symmetrization_ok: bool,
    pub green_ok: bool,
    pub dissipation_ok: bool,
    pub moment_ok: bool,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.symmetrization_ok && self.green_ok && self.dissipation_ok && self.moment_ok
    }
}

fn relative(gap: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        gap / scale
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn random_ensemble(rng: &mut ChaCha8Rng) -> Result<ParticleEnsemble> {
    let dim = rng.random_range(1..=2);
    let boundary = if rng.random_bool(0.5) { Boundary::Periodic } else { Boundary::ZeroFlux };
    let extent = rng.random_range(1.0..4.0);
    let family = if rng.random_bool(0.75) { KernelFamily::Gaussian } else { KernelFamily::CompactBump };
    let setup = EnsembleSetup {
        domain: Domain::new(dim, extent, boundary)?,
        eps: rng.random_range(0.05..0.5),
        kernel: KernelSpec::new(family, rng.random_range(0.5..1.5), dim)?,
        params: FhnParams::new(rng.random_range(0.05..0.95), rng.random_range(0.0..1.0), rng.random_range(0.0..2.0))?,
        backend: BackendChoice::AllPairs,
    };
    let n = rng.random_range(2..=MAX_PARTICLES);
    let positions = (0..n * dim).map(|_| rng.random::<f64>() * extent).collect();
    let v = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut masses: Vec<f64> = raw.iter().map(|r| r / total).collect();
    let drift = 1.0 - crate::linalg::det_sum(&masses);
    masses[0] += drift;
    ParticleEnsemble::new(&setup, positions, v, w, masses)
}

fn random_fields(rng: &mut ChaCha8Rng) -> Result<(ScalarField, ScalarField, KernelSpec, f64)> {
    let dim = rng.random_range(1..=2);
    let cells = if dim == 1 { rng.random_range(8..=MAX_CELLS) } else { rng.random_range(8..=16) };
    let boundary = if rng.random_bool(0.5) { Boundary::Periodic } else { Boundary::ZeroFlux };
    let grid = GridSpec::new(dim, rng.random_range(1.0..4.0), cells, boundary)?;
    let family = if rng.random_bool(0.75) { KernelFamily::Gaussian } else { KernelFamily::CompactBump };
    let kernel = KernelSpec::new(family, 1.0, dim)?;
    let eps = grid.h * rng.random_range(2.0..4.0);
    let rho = ScalarField::new(grid, (0..grid.len()).map(|_| rng.random_range(0.0..2.0)).collect())?;
    let v = ScalarField::new(grid, (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    Ok((rho, v, kernel, eps))
}

/// Runs `trials` seeded trials of every identity check.
pub fn check_identities(seed: u64, trials: usize) -> Result<IdentityReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_sym = 0.0_f64;
    let mut worst_green = 0.0_f64;
    let mut min_d = f64::INFINITY;
    let mut moment_failures = 0;
    for _ in 0..trials {
        let ens = random_ensemble(&mut rng)?;
        let constants = derive_constants(ens.params())?;
        for p in 1..=3 {
            let s = symmetrization_terms(&ens, p)?;
            worst_sym = worst_sym.max(relative(s.gap(), s.scale));
            min_d = min_d.min(dissipation(&ens, p)?);
        }
        for p in 1..=2 {
            if !moment_inequality_check(&ens, p, &constants)?.satisfied {
                moment_failures += 1;
            }
        }
        let (rho, v, kernel, eps) = random_fields(&mut rng)?;
        let g = green_identity(&rho, &v, &kernel, eps)?;
        worst_green = worst_green.max(relative(g.gap(), g.scale));
    }
    Ok(IdentityReport {
        seed,
        trials,
        worst_symmetrization: worst_sym,
        worst_green,
        min_dissipation: min_d,
        moment_failures,
        symmetrization_ok: worst_sym <= IDENTITY_TOLERANCE,
        green_ok: worst_green <= IDENTITY_TOLERANCE,
        dissipation_ok: min_d >= 0.0,
        moment_ok: moment_failures == 0,
    })
}
