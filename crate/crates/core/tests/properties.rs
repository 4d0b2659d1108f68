use fhn_core::diagnostics::{dissipation, moment_inequality_check, symmetrization_terms};
use fhn_core::grid::{Boundary, Domain, GridSpec, ScalarField};
use fhn_core::kernel_ops::green_identity;
use fhn_core::macro_solver::exponential_weights;
use fhn_core::model::{derive_constants, FhnParams, KernelFamily, KernelSpec};
use fhn_core::particle::{BackendChoice, EnsembleSetup, NeighborList, ParticleEnsemble, StepOptions};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    dim: usize,
    periodic: bool,
    extent: f64,
    eps: f64,
    bump: bool,
    params: (f64, f64, f64),
    particles: Vec<(Vec<f64>, f64, f64, f64)>,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..=2, any::<bool>(), 1.0f64..4.0, 0.05f64..0.5, any::<bool>(), (0.05f64..0.95, 0.0f64..1.0, 0.0f64..2.0), 2usize..60)
        .prop_flat_map(|(dim, periodic, extent, eps, bump, params, n)| {
            let particle = (prop::collection::vec(0.0..extent, dim), -2.0f64..2.0, -1.0f64..1.0, 0.1f64..1.0);
            prop::collection::vec(particle, n)
                .prop_map(move |particles| Case { dim, periodic, extent, eps, bump, params, particles })
        })
}

fn build(c: &Case) -> ParticleEnsemble {
    let boundary = if c.periodic { Boundary::Periodic } else { Boundary::ZeroFlux };
    let family = if c.bump { KernelFamily::CompactBump } else { KernelFamily::Gaussian };
    let setup = EnsembleSetup {
        domain: Domain::new(c.dim, c.extent, boundary).unwrap(),
        eps: c.eps,
        kernel: KernelSpec::new(family, 1.0, c.dim).unwrap(),
        params: FhnParams::new(c.params.0, c.params.1, c.params.2).unwrap(),
        backend: BackendChoice::AllPairs,
    };
    let positions = c.particles.iter().flat_map(|p| p.0.clone()).collect();
    let v = c.particles.iter().map(|p| p.1).collect();
    let w = c.particles.iter().map(|p| p.2).collect();
    let total: f64 = c.particles.iter().map(|p| p.3).sum();
    let mut masses: Vec<f64> = c.particles.iter().map(|p| p.3 / total).collect();
    masses[0] += 1.0 - fhn_core::linalg::det_sum(&masses);
    ParticleEnsemble::new(&setup, positions, v, w, masses).unwrap()
}

fn weighted(ens: &ParticleEnsemble, f: impl Fn(f64) -> f64) -> f64 {
    ens.masses().iter().zip(ens.v()).map(|(m, v)| m * f(*v)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dissipation_is_nonnegative(c in case(), p in 1u32..=3) {
        let ens = build(&c);
        prop_assert!(dissipation(&ens, p).unwrap() >= 0.0);
    }

    #[test]
    fn symmetrization_holds(c in case(), p in 1u32..=3) {
        let s = symmetrization_terms(&build(&c), p).unwrap();
        prop_assert!(s.gap() <= 1e-12 * s.scale.max(f64::MIN_POSITIVE), "{s:?}");
    }

    #[test]
    fn moment_inequality_holds(c in case(), p in 1u32..=2) {
        let ens = build(&c);
        let k = derive_constants(ens.params()).unwrap();
        let m = moment_inequality_check(&ens, p, &k).unwrap();
        prop_assert!(m.satisfied, "{m:?}");
    }

    #[test]
    fn implicit_interaction_keeps_mean_and_shrinks_spread(c in case(), dt in 1e-3f64..0.2) {
        let mut ens = build(&c);
        let (mean0, sq0) = (weighted(&ens, |v| v), weighted(&ens, |v| v * v));
        let opts = StepOptions { reaction: false, ..StepOptions::default() };
        ens.step(dt, &opts).unwrap();
        let (mean1, sq1) = (weighted(&ens, |v| v), weighted(&ens, |v| v * v));
        prop_assert!((mean1 - mean0).abs() <= 1e-8, "{mean0} -> {mean1}");
        prop_assert!(sq1 <= sq0 + 1e-8, "{sq0} -> {sq1}");
    }

    #[test]
    fn green_identity_holds(
        dim in 1usize..=2,
        cells in 8usize..=32,
        periodic in any::<bool>(),
        extent in 1.0f64..4.0,
        ratio in 2.0f64..4.0,
        bump in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let cells = if dim == 2 { cells.min(16) } else { cells };
        let boundary = if periodic { Boundary::Periodic } else { Boundary::ZeroFlux };
        let grid = GridSpec::new(dim, extent, cells, boundary).unwrap();
        let family = if bump { KernelFamily::CompactBump } else { KernelFamily::Gaussian };
        let kernel = KernelSpec::new(family, 1.0, dim).unwrap();
        // cheap deterministic pseudo-random fields
        let mut s = seed | 1;
        let mut next = move || { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s >> 11) as f64 / (1u64 << 53) as f64 };
        let rho = ScalarField::new(grid, (0..grid.len()).map(|_| 2.0 * next()).collect()).unwrap();
        let v = ScalarField::new(grid, (0..grid.len()).map(|_| 2.0 * next() - 1.0).collect()).unwrap();
        let g = green_identity(&rho, &v, &kernel, grid.h * ratio).unwrap();
        prop_assert!(g.gap() <= 1e-12 * g.scale.max(f64::MIN_POSITIVE), "{g:?}");
    }

    #[test]
    fn neighbor_lists_are_symmetric(
        dim in 1usize..=3,
        periodic in any::<bool>(),
        extent in 1.0f64..5.0,
        cutoff_frac in 0.01f64..0.6,
        pts in prop::collection::vec(0.0f64..1.0, 3..300),
    ) {
        let boundary = if periodic { Boundary::Periodic } else { Boundary::ZeroFlux };
        let domain = Domain::new(dim, extent, boundary).unwrap();
        let n = pts.len() / dim;
        let positions: Vec<f64> = pts[..n * dim].iter().map(|x| x * extent).collect();
        let list = NeighborList::build(&domain, &positions, cutoff_frac * extent);
        prop_assert_eq!(list.len(), n);
        prop_assert!(list.is_symmetric());
    }

    #[test]
    fn exponential_weights_integrate_linear_data(a in -5.0f64..5.0, dt in 1e-4f64..1.0) {
        let (alpha, beta) = exponential_weights(a, dt);
        // constant V: the weights sum to int_0^dt e^{-a s} ds
        let z = a * dt;
        let phi = if z.abs() < 1e-8 { dt } else { (1.0 - (-z).exp()) / a };
        prop_assert!(((alpha + beta) - phi).abs() <= 1e-12 * phi.abs().max(dt));
        if a >= 0.0 {
            prop_assert!(alpha >= 0.0 && beta >= 0.0);
        }
    }
}
