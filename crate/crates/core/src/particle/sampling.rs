//! Initial particle sampling from a density profile.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnsembleSetup, ParticleEnsemble};
use crate::error::{Error, Result};
use crate::profiles::{Density, DensityProfile, FieldProfile};
use crate::quadrature::gauss_legendre5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MesoInitConfig {
    #[serde(default)]
    pub rho0: DensityProfile,
    #[serde(default = "default_v0")]
    pub v0: FieldProfile,
    #[serde(default = "FieldProfile::zero")]
    pub w0: FieldProfile,
    /// Half-width of the uniform jitter of `(v, w)` around `(V0(x), W0(x))`.
    #[serde(default = "default_r0")]
    pub r0: f64,
    pub n_particles: usize,
    #[serde(default)]
    pub seed: u64,
    /// Equal-mass strata of the quantile map instead of i.i.d. positions.
    #[serde(default = "yes")]
    pub stratified: bool,
}

fn default_v0() -> FieldProfile {
    FieldProfile::VonMisesBump { amplitude: 0.6, center: std::f64::consts::PI, concentration: 4.0 }
}

fn default_r0() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

impl MesoInitConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            rho0: DensityProfile::default(),
            v0: default_v0(),
            w0: FieldProfile::zero(),
            r0: default_r0(),
            n_particles,
            seed,
            stratified: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidParameter("need at least one particle".into()));
        }
        if !(self.r0 >= 0.0 && self.r0.is_finite()) {
            return Err(Error::InvalidParameter(format!("jitter radius must be finite and >= 0, got {}", self.r0)));
        }
        self.v0.validate()?;
        self.w0.validate()
    }
}

/// Quantile map of a one-dimensional density on `[0, L]`.
#[derive(Debug, Clone)]
pub struct Quantile1d {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
}

const QUANTILE_INTERVALS: usize = 4096;

impl Quantile1d {
    pub fn new<F: Fn(f64) -> f64>(pdf: F, extent: f64) -> Self {
        let n = QUANTILE_INTERVALS;
        let nodes: Vec<f64> = (0..=n).map(|k| extent * k as f64 / n as f64).collect();
        let mut cdf = vec![0.0; n + 1];
        for k in 0..n {
            cdf[k + 1] = cdf[k] + gauss_legendre5(&pdf, nodes[k], nodes[k + 1]);
        }
        let total = cdf[n];
        cdf.iter_mut().for_each(|c| *c /= total);
        Self { nodes, cdf }
    }

    /// `x` with `F(x) = u`, by Newton iteration safeguarded with bisection.
    pub fn invert<F: Fn(f64) -> f64>(&self, pdf: &F, u: f64, norm: f64) -> f64 {
        let k = match self.cdf.binary_search_by(|c| c.total_cmp(&u)) {
            Ok(k) => return self.nodes[k],
            Err(k) => k.saturating_sub(1).min(self.nodes.len() - 2),
        };
        let (mut lo, mut hi) = (self.nodes[k], self.nodes[k + 1]);
        let base = self.cdf[k];
        let target = u - base;
        let mut x = lo + (hi - lo) * (target / (self.cdf[k + 1] - base)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let f = gauss_legendre5(pdf, self.nodes[k], x) / norm - target;
            if f.abs() <= 1e-15 {
                break;
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = pdf(x) / norm;
            let newton = x - f / d;
            x = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 1e-15 * (1.0 + hi.abs()) {
                break;
            }
        }
        x
    }
}

/// Draws positions, states and masses; see [`MesoInitConfig`].
pub fn sample_initial(cfg: &MesoInitConfig, setup: &EnsembleSetup) -> Result<ParticleEnsemble> {
    cfg.validate()?;
    let domain = setup.domain;
    let dim = domain.dim;
    let density = cfg.rho0.resolve(domain)?;
    let n = cfg.n_particles;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let positions = if density.is_separable() {
        sample_separable(&density, n, cfg.stratified, &mut rng)
    } else {
        sample_rejection(&density, n, &mut rng)
    };
    let mut v = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let x = &positions[i * dim..(i + 1) * dim];
        let (xi, zeta) = if cfg.r0 > 0.0 {
            (rng.random_range(-cfg.r0..=cfg.r0), rng.random_range(-cfg.r0..=cfg.r0))
        } else {
            (0.0, 0.0)
        };
        v.push(cfg.v0.eval(x, &domain) + xi);
        w.push(cfg.w0.eval(x, &domain) + zeta);
    }
    let masses = vec![1.0 / n as f64; n];
    ParticleEnsemble::new(setup, positions, v, w, masses)
}

fn sample_separable(density: &Density, n: usize, stratified: bool, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dom = density.domain;
    let dim = dom.dim;
    let pdf = |x: f64| density.axis_density(x);
    let q = Quantile1d::new(pdf, dom.extent);
    let mut per_axis = 1usize;
    while (per_axis + 1).pow(dim as u32) <= n {
        per_axis += 1;
    }
    let strata = per_axis.pow(dim as u32);
    let stratified_count = if stratified { (n / strata) * strata } else { 0 };
    let mut out = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut s = i % strata;
        for _ in 0..dim {
            let u: f64 = rng.random();
            let u = if i < stratified_count {
                let cell = s % per_axis;
                s /= per_axis;
                (cell as f64 + u) / per_axis as f64
            } else {
                u
            };
            out.push(q.invert(&pdf, u, 1.0).clamp(0.0, dom.extent));
        }
    }
    out
}

fn sample_rejection(density: &Density, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dom = density.domain;
    let bound = density.max_value();
    let mut out = Vec::with_capacity(n * dom.dim);
    let mut x = [0.0; 3];
    while out.len() < n * dom.dim {
        for c in x.iter_mut().take(dom.dim) {
            *c = rng.random::<f64>() * dom.extent;
        }
        if rng.random::<f64>() * bound < density.eval(&x) {
            out.extend_from_slice(&x[..dom.dim]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Boundary, Domain};
    use crate::model::{FhnParams, KernelSpec};
    use crate::particle::interaction::BackendChoice;
    use std::f64::consts::PI;

    fn setup(dim: usize) -> EnsembleSetup {
        EnsembleSetup {
            domain: Domain::new(dim, 2.0 * PI, Boundary::Periodic).unwrap(),
            eps: 0.4,
            kernel: KernelSpec::gaussian(1.0, dim).unwrap(),
            params: FhnParams::default(),
            backend: BackendChoice::AllPairs,
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        let dom = Domain::new(1, 2.0 * PI, Boundary::Periodic).unwrap();
        let d = DensityProfile::CosineBump { amplitude: 0.5 }.resolve(dom).unwrap();
        let pdf = |x: f64| d.axis_density(x);
        let q = Quantile1d::new(pdf, dom.extent);
        for u in [0.0, 1e-6, 0.1, 0.5, 0.77, 0.999999] {
            let x = q.invert(&pdf, u, 1.0);
            // F(x) = (x + 0.5 sin x) / (2 pi)
            let f = (x + 0.5 * x.sin()) / (2.0 * PI);
            assert!((f - u).abs() < 1e-13, "u {u}: F(x) = {f}");
        }
    }

    #[test]
    fn single_particle_without_jitter() {
        let cfg = MesoInitConfig {
            v0: FieldProfile::Constant { value: 2.0 },
            w0: FieldProfile::Constant { value: 3.0 },
            r0: 0.0,
            ..MesoInitConfig::new(1, 0)
        };
        let e = sample_initial(&cfg, &setup(1)).unwrap();
        assert_eq!(e.v(), &[2.0]);
        assert_eq!(e.w(), &[3.0]);
        assert_eq!(e.masses(), &[1.0]);
    }

    #[test]
    fn jitter_is_bounded() {
        let cfg = MesoInitConfig { r0: 0.1, ..MesoInitConfig::new(500, 9) };
        let s = setup(1);
        let e = sample_initial(&cfg, &s).unwrap();
        for i in 0..e.len() {
            let x = e.position(i);
            assert!((e.v()[i] - cfg.v0.eval(x, &s.domain)).abs() <= 0.1);
            assert!(e.w()[i].abs() <= 0.1);
        }
    }

    #[test]
    fn stratified_positions_fill_strata() {
        let cfg = MesoInitConfig::new(1000, 1);
        let s = setup(1);
        let e = sample_initial(&cfg, &s).unwrap();
        for i in 0..1000 {
            let x = e.position(i)[0];
            let f = (x + 0.5 * x.sin()) / (2.0 * PI);
            assert!(f >= i as f64 / 1000.0 - 1e-12 && f <= (i + 1) as f64 / 1000.0 + 1e-12);
        }
    }

    #[test]
    fn same_seed_same_ensemble() {
        let cfg = MesoInitConfig::new(300, 5);
        let a = sample_initial(&cfg, &setup(2)).unwrap();
        let b = sample_initial(&cfg, &setup(2)).unwrap();
        assert_eq!(a.positions(), b.positions());
        assert_eq!(a.v(), b.v());
        let c = sample_initial(&MesoInitConfig { seed: 6, ..cfg }, &setup(2)).unwrap();
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn rejection_sampling_respects_support() {
        let mut s = setup(2);
        s.domain = Domain::new(2, 4.0, Boundary::ZeroFlux).unwrap();
        let cfg = MesoInitConfig {
            rho0: DensityProfile::CompactBump { center: 2.0, radius: 1.0 },
            ..MesoInitConfig::new(400, 2)
        };
        let e = sample_initial(&cfg, &s).unwrap();
        for i in 0..e.len() {
            let p = e.position(i);
            assert!(((p[0] - 2.0).powi(2) + (p[1] - 2.0).powi(2)).sqrt() < 1.0);
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(sample_initial(&MesoInitConfig::new(0, 0), &setup(1)).is_err());
        let cfg = MesoInitConfig { rho0: DensityProfile::CosineBump { amplitude: 2.0 }, ..MesoInitConfig::new(10, 0) };
        assert!(sample_initial(&cfg, &setup(1)).is_err());
    }
}
