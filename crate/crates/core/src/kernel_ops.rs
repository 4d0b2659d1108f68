//! Grid operators built from the rescaled kernel: convolution, the nonlocal
//! diffusion operator, its local limit and the residuals linking the two.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::linalg::det_sum;
use crate::model::KernelSpec;

/// Offsets and weights of the discrete convolution: `Psi_eps(|o h|) h^d`
/// rescaled to sum to one.
#[derive(Debug, Clone)]
pub struct ConvolutionStencil {
    pub grid: GridSpec,
    pub eps: f64,
    pub entries: Vec<([isize; 3], f64)>,
}

/// True when the kernel scale `eps * s` spans at least two cells.
pub fn is_resolved(grid: &GridSpec, spec: &KernelSpec, eps: f64) -> bool {
    eps * spec.width >= 2.0 * grid.h
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")))
    }
}

fn check_dim(grid: &GridSpec, spec: &KernelSpec) -> Result<()> {
    if grid.dim == spec.dim {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!("kernel dimension {} on a {}-d grid", spec.dim, grid.dim)))
    }
}

impl ConvolutionStencil {
    pub fn new(grid: GridSpec, spec: &KernelSpec, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        check_dim(&grid, spec)?;
        if !is_resolved(&grid, spec, eps) {
            log::warn!(
                "kernel under-resolved: eps*s = {:.3e} < 2h = {:.3e}",
                eps * spec.width,
                2.0 * grid.h
            );
        }
        let rc = eps * spec.cutoff_radius();
        let m = (rc / grid.h).floor() as isize;
        let vol = grid.cell_volume();
        let range = |a: usize| if a < grid.dim { -m..=m } else { 0..=0 };
        let mut entries = Vec::new();
        for k in range(2) {
            for j in range(1) {
                for i in range(0) {
                    let r = grid.h * ((i * i + j * j + k * k) as f64).sqrt();
                    if r <= rc {
                        let w = spec.eval_rescaled(eps, r) * vol;
                        if w > 0.0 {
                            entries.push(([i, j, k], w));
                        }
                    }
                }
            }
        }
        // Discrete unit mass: constants are reproduced to rounding.
        let total: f64 = entries.iter().map(|e| e.1).sum();
        entries.iter_mut().for_each(|e| e.1 /= total);
        Ok(Self { grid, eps, entries })
    }

    /// Sum of the discrete weights.
    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let g = self.grid;
        (0..g.len())
            .into_par_iter()
            .map(|c| {
                self.entries
                    .iter()
                    .map(|(o, w)| w * f[g.shift(c, o)])
                    .sum()
            })
            .collect()
    }
}

/// Discrete `Psi_eps * field` by direct stencil summation.
pub fn convolve_rescaled(field: &ScalarField, spec: &KernelSpec, eps: f64) -> Result<ScalarField> {
    let st = ConvolutionStencil::new(field.grid, spec, eps)?;
    Ok(ScalarField { grid: field.grid, values: st.apply(&field.values) })
}

/// `(1/eps^2) (Psi_eps * [rho V] - (Psi_eps * rho) V)`.
pub fn nonlocal_diffusion(
    rho: &ScalarField,
    v: &ScalarField,
    spec: &KernelSpec,
    eps: f64,
) -> Result<ScalarField> {
    rho.grid.check_same(&v.grid)?;
    let st = ConvolutionStencil::new(rho.grid, spec, eps)?;
    Ok(nonlocal_diffusion_with(&st, &rho.values, &v.values, rho.grid))
}

fn nonlocal_diffusion_with(st: &ConvolutionStencil, rho: &[f64], v: &[f64], grid: GridSpec) -> ScalarField {
    let g = grid;
    let inv = 1.0 / (st.eps * st.eps);
    let values = (0..g.len())
        .into_par_iter()
        .map(|c| {
            // sum_o w_o rho_{c+o} (V_{c+o} - V_c): exact zero for constant V
            let vc = v[c];
            let acc: f64 = st
                .entries
                .iter()
                .map(|(o, w)| {
                    let j = g.shift(c, o);
                    w * rho[j] * (v[j] - vc)
                })
                .sum();
            acc * inv
        })
        .collect();
    ScalarField { grid: g, values }
}

/// `sigma (rho Delta V + 2 grad rho . grad V)` with centred stencils.
pub fn local_diffusion(rho: &ScalarField, v: &ScalarField, sigma: f64) -> Result<ScalarField> {
    rho.grid.check_same(&v.grid)?;
    let lap = v.laplacian();
    let mut out: Vec<f64> = rho.values.iter().zip(&lap.values).map(|(r, l)| r * l).collect();
    for a in 0..rho.grid.dim {
        let gr = rho.gradient(a);
        let gv = v.gradient(a);
        for ((o, p), q) in out.iter_mut().zip(&gr.values).zip(&gv.values) {
            *o += 2.0 * p * q;
        }
    }
    out.iter_mut().for_each(|o| *o *= sigma);
    Ok(ScalarField { grid: rho.grid, values: out })
}

/// `sigma (Delta(rho V) - (Delta rho) V)`, the product-rule form of the same operator.
pub fn local_diffusion_product_form(rho: &ScalarField, v: &ScalarField, sigma: f64) -> Result<ScalarField> {
    let rv = rho.zip_map(v, |r, x| r * x)?;
    let a = rv.laplacian();
    let b = rho.laplacian();
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .zip(&v.values)
        .map(|((l, lr), x)| sigma * (l - lr * x))
        .collect();
    Ok(ScalarField { grid: rho.grid, values })
}

/// Grid L2 norm of `(Psi_eps * g - g) / eps^2 - sigma Delta g`.
pub fn taylor_residual(g: &ScalarField, spec: &KernelSpec, eps: f64, sigma: f64) -> Result<f64> {
    check_eps(eps)?;
    if !is_resolved(&g.grid, spec, eps) {
        return Err(Error::Unresolved { scale: eps * spec.width, two_h: 2.0 * g.grid.h });
    }
    let conv = convolve_rescaled(g, spec, eps)?;
    let lap = g.laplacian();
    let inv = 1.0 / (eps * eps);
    let r: Vec<f64> = conv
        .values
        .iter()
        .zip(&g.values)
        .zip(&lap.values)
        .map(|((c, x), l)| (c - x) * inv - sigma * l)
        .collect();
    Ok(ScalarField { grid: g.grid, values: r }.l2_norm())
}

/// Both sides of the discrete Green identity and a magnitude to compare the gap against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenIdentity {
    /// `sum_c rho_c V_c (nonlocal_diffusion)_c h^d`.
    pub lhs: f64,
    /// `-(1/2 eps^2) sum_c sum_o w_o |V_c - V_{c+o}|^2 rho_c rho_{c+o} h^d`.
    pub rhs: f64,
    /// `(1/eps^2) sum_c sum_o w_o rho_c rho_{c+o} (V_c^2 + V_{c+o}^2) h^d`.
    pub scale: f64,
}

impl GreenIdentity {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

pub fn green_identity(rho: &ScalarField, v: &ScalarField, spec: &KernelSpec, eps: f64) -> Result<GreenIdentity> {
    rho.grid.check_same(&v.grid)?;
    let st = ConvolutionStencil::new(rho.grid, spec, eps)?;
    let g = rho.grid;
    let vol = g.cell_volume();
    let inv = 1.0 / (eps * eps);
    let l = nonlocal_diffusion_with(&st, &rho.values, &v.values, g);
    let lhs_terms: Vec<f64> = (0..g.len()).map(|c| rho.values[c] * v.values[c] * l.values[c]).collect();
    let pair_terms: Vec<(f64, f64)> = (0..g.len())
        .into_par_iter()
        .map(|c| {
            let (rc, vc) = (rho.values[c], v.values[c]);
            st.entries.iter().fold((0.0, 0.0), |(d, s), (o, w)| {
                let j = g.shift(c, o);
                let (rj, vj) = (rho.values[j], v.values[j]);
                let wr = w * rc * rj;
                (d + wr * (vc - vj) * (vc - vj), s + wr * (vc * vc + vj * vj))
            })
        })
        .collect();
    let diss: Vec<f64> = pair_terms.iter().map(|p| p.0).collect();
    let scale: Vec<f64> = pair_terms.iter().map(|p| p.1).collect();
    Ok(GreenIdentity {
        lhs: det_sum(&lhs_terms) * vol,
        rhs: -0.5 * inv * det_sum(&diss) * vol,
        scale: inv * det_sum(&scale) * vol,
    })
}

/// `|LHS - RHS|` of the discrete Green identity.
pub fn green_identity_gap(rho: &ScalarField, v: &ScalarField, spec: &KernelSpec, eps: f64) -> Result<f64> {
    Ok(green_identity(rho, v, spec, eps)?.gap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;
    use crate::model::KernelFamily;
    use std::f64::consts::PI;

    fn circle(n: usize) -> GridSpec {
        GridSpec::periodic(1, 2.0 * PI, n).unwrap()
    }

    fn gauss() -> KernelSpec {
        KernelSpec::gaussian(1.0, 1).unwrap()
    }

    #[test]
    fn constants_are_fixed() {
        let g = circle(128);
        let f = ScalarField::constant(g, 2.5);
        let out = convolve_rescaled(&f, &gauss(), 0.3).unwrap();
        for v in out.values {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_fourier_multiplier() {
        let g = circle(256);
        let f = ScalarField::from_fn(g, |x| x[0].sin());
        let out = convolve_rescaled(&f, &gauss(), 0.5).unwrap();
        let factor = (-0.125f64).exp();
        assert!((factor - 0.8824969).abs() < 1e-7);
        for (o, x) in out.values.iter().zip(&f.values) {
            assert!((o - factor * x).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_convolution_preserves_mass() {
        let g = circle(128);
        let f = ScalarField::from_fn(g, |x| (x[0].cos() + 2.0) * (3.0 * x[0]).sin().exp());
        let out = convolve_rescaled(&f, &gauss(), 0.2).unwrap();
        let (a, b) = (out.integral(), f.integral());
        assert!((a - b).abs() <= 1e-12 * b.abs());
    }

    #[test]
    fn delta_field_reproduces_kernel() {
        let g = circle(512);
        let mut vals = vec![0.0; 512];
        vals[256] = 1.0 / g.h;
        let f = ScalarField::new(g, vals).unwrap();
        let k = gauss();
        let out = convolve_rescaled(&f, &k, 0.2).unwrap();
        let x0 = g.center(256)[0];
        for c in 200..312 {
            let r = (g.center(c)[0] - x0).abs();
            assert!((out.values[c] - k.eval_rescaled(0.2, r)).abs() < 1e-12);
        }
    }

    #[test]
    fn nonlocal_multiplier_on_sine() {
        let g = circle(256);
        let rho = ScalarField::constant(g, 1.0);
        let v = ScalarField::from_fn(g, |x| x[0].sin());
        let out = nonlocal_diffusion(&rho, &v, &gauss(), 0.5).unwrap();
        let factor = ((-0.125f64).exp() - 1.0) / 0.25;
        assert!((factor - (-0.4700124)).abs() < 1e-7);
        for (o, x) in out.values.iter().zip(&v.values) {
            assert!((o - factor * x).abs() < 1e-11);
        }
    }

    #[test]
    fn nonlocal_matches_brute_force_sum_on_toy_grid() {
        let g = GridSpec::new(1, 1.0, 8, Boundary::Periodic).unwrap();
        let k = gauss();
        let eps = 0.1;
        let rho = ScalarField::new(g, vec![0.5, 1.0, 1.5, 0.2, 0.9, 1.1, 0.3, 0.6]).unwrap();
        let v = ScalarField::new(g, vec![1.0, -1.0, 0.5, 2.0, 0.0, 0.3, -0.7, 0.1]).unwrap();
        let out = nonlocal_diffusion(&rho, &v, &k, eps).unwrap();
        // periodic images summed explicitly
        for c in 0..8 {
            let xc = g.center(c)[0];
            let (mut acc, mut mass) = (0.0, 0.0);
            for j in 0..8 {
                let xj = g.center(j)[0];
                for img in -3i32..=3 {
                    let r = (xc - xj - img as f64).abs();
                    if r <= eps * k.cutoff_radius() {
                        let w = k.eval_rescaled(eps, r) * g.h;
                        mass += w;
                        acc += w * rho.values[j] * (v.values[j] - v.values[c]);
                    }
                }
            }
            acc /= mass * eps * eps;
            assert!((out.values[c] - acc).abs() < 1e-12 * (1.0 + acc.abs()), "{c}: {} vs {acc}", out.values[c]);
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let g = circle(64);
        let rho = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0].cos());
        let v = ScalarField::constant(g, 3.7);
        let nl = nonlocal_diffusion(&rho, &v, &gauss(), 0.3).unwrap();
        assert_eq!(nl.max_abs(), 0.0);
        let l = local_diffusion(&rho, &v, 0.5).unwrap();
        assert!(l.max_abs() < 1e-12);
    }

    #[test]
    fn local_diffusion_second_order() {
        let sigma = 0.5;
        let mut errs = Vec::new();
        for n in [32, 64, 128, 256] {
            let g = circle(n);
            let rho = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0].cos());
            let v = ScalarField::from_fn(g, |x| x[0].sin());
            let exact = ScalarField::from_fn(g, |x| {
                let t = x[0];
                sigma * (-(1.0 + 0.5 * t.cos()) * t.sin() - t.sin() * t.cos())
            });
            let l = local_diffusion(&rho, &v, sigma).unwrap();
            errs.push(l.zip_map(&exact, |a, b| a - b).unwrap().l2_norm());
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!((order - 2.0).abs() < 0.2, "order {order}");
        }
    }

    #[test]
    fn quadratic_rho_oracle() {
        // rho = x^2, V = x near x0: sigma * 4 x
        let g = GridSpec::new(1, 4.0, 400, Boundary::ZeroFlux).unwrap();
        let rho = ScalarField::from_fn(g, |x| x[0] * x[0]);
        let v = ScalarField::from_fn(g, |x| x[0]);
        let l = local_diffusion(&rho, &v, 0.5).unwrap();
        for c in 100..300 {
            let x = g.center(c)[0];
            assert!((l.values[c] - 2.0 * x).abs() < 1e-10);
        }
    }

    #[test]
    fn two_forms_agree_to_second_order() {
        let mut gaps = Vec::new();
        for n in [32, 64, 128] {
            let g = circle(n);
            let rho = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0].cos());
            let v = ScalarField::from_fn(g, |x| (2.0 * x[0]).sin() + x[0].cos());
            let a = local_diffusion(&rho, &v, 0.5).unwrap();
            let b = local_diffusion_product_form(&rho, &v, 0.5).unwrap();
            gaps.push(a.zip_map(&b, |p, q| p - q).unwrap().l2_norm());
        }
        for w in gaps.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8);
        }
    }

    #[test]
    fn taylor_residual_of_sine() {
        let g = circle(512);
        let f = ScalarField::from_fn(g, |x| x[0].sin());
        let k = gauss();
        let res = taylor_residual(&f, &k, 0.5, k.sigma).unwrap();
        let mult = (((-0.125f64).exp() - 1.0) / 0.25 + 0.5).abs();
        // the discrete Laplacian symbol adds O(h^2)
        assert!((res / f.l2_norm() - mult).abs() < 1e-4, "{}", res / f.l2_norm());
        assert!((mult - 0.0299877).abs() < 1e-6);
    }

    #[test]
    fn taylor_residual_constant_and_unresolved() {
        let g = circle(64);
        let k = gauss();
        let f = ScalarField::constant(g, 1.0);
        assert!(taylor_residual(&f, &k, 0.5, k.sigma).unwrap() < 1e-12);
        assert!(matches!(taylor_residual(&f, &k, 0.1, k.sigma), Err(Error::Unresolved { .. })));
    }

    #[test]
    fn taylor_residual_order() {
        let g = circle(512);
        let k = gauss();
        let f = ScalarField::from_fn(g, |x| (1.0 + 0.5 * x[0].cos()) / (2.0 * PI));
        let r: Vec<f64> = [0.4, 0.2, 0.1]
            .iter()
            .map(|&e| taylor_residual(&f, &k, e, k.sigma).unwrap())
            .collect();
        for w in r.windows(2) {
            assert!((w[0] / w[1]).log2() >= 1.8, "{r:?}");
        }
    }

    #[test]
    fn green_identity_holds() {
        for boundary in [Boundary::Periodic, Boundary::ZeroFlux] {
            let g = GridSpec::new(1, 1.0, 32, boundary).unwrap();
            let rho = ScalarField::from_fn(g, |x| 1.0 + (7.0 * x[0]).sin().powi(2));
            let v = ScalarField::from_fn(g, |x| (13.0 * x[0]).cos() + x[0]);
            let gi = green_identity(&rho, &v, &gauss(), 0.1).unwrap();
            assert!(gi.rhs <= 0.0);
            assert!(gi.gap() <= 1e-12 * gi.scale, "{boundary:?} {gi:?}");
        }
    }

    #[test]
    fn green_identity_2d_bump_kernel() {
        let g = GridSpec::new(2, 1.0, 16, Boundary::ZeroFlux).unwrap();
        let k = KernelSpec::new(KernelFamily::CompactBump, 1.0, 2).unwrap();
        let rho = ScalarField::from_fn(g, |x| 1.0 + x[0] * x[1]);
        let v = ScalarField::from_fn(g, |x| (5.0 * x[0]).sin() * x[1]);
        let gi = green_identity(&rho, &v, &k, 0.25).unwrap();
        assert!(gi.gap() <= 1e-12 * gi.scale, "{gi:?}");
    }

    #[test]
    fn sign_pattern_dissipates() {
        let g = GridSpec::periodic(1, 1.0, 32).unwrap();
        let rho = ScalarField::constant(g, 1.0);
        let v = ScalarField::new(g, (0..32).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
        let gi = green_identity(&rho, &v, &gauss(), 0.1).unwrap();
        assert!(gi.lhs <= 0.0);
    }

    #[test]
    fn rejects_bad_eps_and_mismatch() {
        let g = circle(64);
        let f = ScalarField::constant(g, 1.0);
        assert!(convolve_rescaled(&f, &gauss(), 0.0).is_err());
        let other = ScalarField::constant(circle(32), 1.0);
        assert!(nonlocal_diffusion(&f, &other, &gauss(), 0.5).is_err());
        let k2 = KernelSpec::gaussian(1.0, 2).unwrap();
        assert!(convolve_rescaled(&f, &k2, 0.5).is_err());
    }
}
