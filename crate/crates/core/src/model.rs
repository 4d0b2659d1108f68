//! FitzHugh-Nagumo model constants, the cubic excitability term and the
//! radial connectivity kernels.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::adaptive_simpson;

/// Parameters of the single-neuron dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FhnParams {
    /// Excitability threshold, strictly inside (0, 1).
    pub a: f64,
    /// Adaptation rate.
    pub tau: f64,
    /// Adaptation decay.
    pub gamma: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        Self { a: 0.25, tau: 0.1, gamma: 0.5 }
    }
}

impl FhnParams {
    pub fn new(a: f64, tau: f64, gamma: f64) -> Result<Self> {
        let p = Self { a, tau, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::InvalidParameter(format!("a must lie in (0,1), got {}", self.a)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }

    /// N(v) = v (1 - v) (v - a).
    #[inline]
    pub fn nonlinearity(&self, v: f64) -> f64 {
        v * (1.0 - v) * (v - self.a)
    }

    /// N'(v) = -3v^2 + 2(1+a)v - a.
    #[inline]
    pub fn nonlinearity_derivative(&self, v: f64) -> f64 {
        -3.0 * v * v + 2.0 * (1.0 + self.a) * v - self.a
    }

    /// A(v, w) = tau (v - gamma w).
    #[inline]
    pub fn adaptation(&self, v: f64, w: f64) -> f64 {
        self.tau * (v - self.gamma * w)
    }

    /// Linear decay rate of the adaptation variable, tau * gamma.
    #[inline]
    pub fn adaptation_decay(&self) -> f64 {
        self.tau * self.gamma
    }
}

/// Checked evaluation of the cubic nonlinearity.
pub fn nonlinearity_eval(v: f64, params: &FhnParams) -> Result<f64> {
    ensure_finite("v", v)?;
    Ok(params.nonlinearity(v))
}

/// Checked evaluation of the adaptation drift.
pub fn adaptation_eval(v: f64, w: f64, params: &FhnParams) -> Result<f64> {
    ensure_finite("v", v)?;
    ensure_finite("w", w)?;
    Ok(params.adaptation(v, w))
}

/// Structural constants of the cubic:
///
/// * `v N(v) <= kappa1 v^2 - kappa1_prime v^4`
/// * `(v - u)(N(v) - N(u)) <= kappa2 (v - u)^2`
/// * `|N(v) - N(u)| <= kappa3 |v - u| (1 + v^2 + u^2)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearityConstants {
    pub kappa1: f64,
    pub kappa1_prime: f64,
    pub kappa2: f64,
    pub kappa3: f64,
}

/// Half-width of the square on which kappa3 is fitted and certified.
pub const KAPPA3_BOX: f64 = 10.0;
/// Safety factor applied to the sampled supremum for kappa3.
pub const KAPPA3_MARGIN: f64 = 1.05;
/// Points per axis of the certification grid.
pub const CERTIFY_POINTS: usize = 401;

/// Derives the constants for the given threshold `a`.
///
/// kappa2 is the sharp bound max N'. kappa1 / kappa1' come from the split
/// `(1+a) v^3 <= v^4/2 + (1+a)^2 v^2 / 2`. kappa3 is the sampled supremum of
/// `|N(v)-N(u)| / (|v-u| (1+v^2+u^2))` times [`KAPPA3_MARGIN`], and the three
/// inequalities are then re-checked on a [`CERTIFY_POINTS`]^2 grid.
pub fn derive_constants(params: &FhnParams) -> Result<NonlinearityConstants> {
    params.validate()?;
    let a = params.a;
    let kappa2 = (a * a - a + 1.0) / 3.0;
    let kappa1 = (1.0 + a) * (1.0 + a) / 2.0 - a;
    let kappa1_prime = 0.5;

    // (N(v) - N(u)) / (v - u) = -(v^2 + v u + u^2) + (1+a)(v+u) - a
    let ratio = |v: f64, u: f64| {
        (-(v * v + v * u + u * u) + (1.0 + a) * (v + u) - a).abs() / (1.0 + v * v + u * u)
    };
    let mut sup = 0.0_f64;
    let fine = 801;
    for i in 0..fine {
        let v = -KAPPA3_BOX + 2.0 * KAPPA3_BOX * i as f64 / (fine - 1) as f64;
        for j in 0..fine {
            let u = -KAPPA3_BOX + 2.0 * KAPPA3_BOX * j as f64 / (fine - 1) as f64;
            sup = sup.max(ratio(v, u));
        }
    }
    // The ratio tends to a direction-dependent limit at infinity.
    for &r in &[20.0, 100.0, 1e3, 1e5] {
        for k in 0..720 {
            let th = 2.0 * PI * k as f64 / 720.0;
            sup = sup.max(ratio(r * th.cos(), r * th.sin()));
        }
    }
    let constants = NonlinearityConstants {
        kappa1,
        kappa1_prime,
        kappa2,
        kappa3: KAPPA3_MARGIN * sup,
    };
    let report = certify_constants(params, &constants, CERTIFY_POINTS);
    if !report.all_hold() {
        return Err(Error::Domain(format!(
            "derived constants failed certification: {report:?}"
        )));
    }
    Ok(constants)
}

/// Worst slack of each inequality over the certification grid (positive
/// means violated beyond rounding).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificationReport {
    pub worst_growth: f64,
    pub worst_monotonicity: f64,
    pub worst_lipschitz: f64,
}

impl CertificationReport {
    pub fn all_hold(&self) -> bool {
        self.worst_growth <= 0.0 && self.worst_monotonicity <= 0.0 && self.worst_lipschitz <= 0.0
    }
}

/// Evaluates the three inequalities on an `n x n` grid of `[-10, 10]^2`.
pub fn certify_constants(
    params: &FhnParams,
    c: &NonlinearityConstants,
    n: usize,
) -> CertificationReport {
    let node = |i: usize| -KAPPA3_BOX + 2.0 * KAPPA3_BOX * i as f64 / (n - 1) as f64;
    let mut growth = f64::NEG_INFINITY;
    let mut mono = f64::NEG_INFINITY;
    let mut lip = f64::NEG_INFINITY;
    for i in 0..n {
        let v = node(i);
        let nv = params.nonlinearity(v);
        let rhs = c.kappa1 * v * v - c.kappa1_prime * v.powi(4);
        let tol = 1e-12 * (1.0 + v.powi(4));
        growth = growth.max(v * nv - rhs - tol);
        for j in 0..n {
            let u = node(j);
            let nu = params.nonlinearity(u);
            let d = v - u;
            let tol = 1e-12 * (1.0 + v.powi(4) + u.powi(4));
            mono = mono.max(d * (nv - nu) - c.kappa2 * d * d - tol);
            lip = lip.max((nv - nu).abs() - c.kappa3 * d.abs() * (1.0 + v * v + u * u) - tol);
        }
    }
    CertificationReport {
        worst_growth: growth,
        worst_monotonicity: mono,
        worst_lipschitz: lip,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Normalized isotropic Gaussian, positive everywhere.
    Gaussian,
    /// Smooth bump `exp(-1 / (1 - (r/s)^2))` supported on `r < s`.
    CompactBump,
}

/// A radial connectivity kernel with unit mass in dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelConfig", into = "KernelConfig")]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub width: f64,
    pub dim: usize,
    /// Second moment `int Psi(|y|) |y|^2 / 2 dy`.
    pub sigma: f64,
    /// Whether the kernel is positive almost everywhere.
    pub conforming: bool,
    norm: f64,
}

/// Serialized form of a kernel: the derived fields are recomputed on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub width: f64,
    pub dim: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { family: KernelFamily::Gaussian, width: 1.0, dim: 1 }
    }
}

impl TryFrom<KernelConfig> for KernelSpec {
    type Error = Error;
    fn try_from(c: KernelConfig) -> Result<Self> {
        KernelSpec::new(c.family, c.width, c.dim)
    }
}

impl From<KernelSpec> for KernelConfig {
    fn from(k: KernelSpec) -> Self {
        Self { family: k.family, width: k.width, dim: k.dim }
    }
}

/// Surface area of the unit sphere in R^d (d = 1 counts the two endpoints).
pub fn unit_sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => panic!("dimension {dim} not supported"),
    }
}

fn bump_profile(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

/// Total mass `int_{R^d} profile(|y|) dy` of a radial profile supported on `[0, support]`.
pub fn radial_mass<F: Fn(f64) -> f64>(profile: F, dim: usize, support: f64) -> f64 {
    let integrand = |r: f64| profile(r) * r.powi(dim as i32 - 1);
    unit_sphere_area(dim) * adaptive_simpson(&integrand, 0.0, support, 1e-15)
}

/// Second moment `int_{R^d} profile(|y|) |y|^2 / 2 dy` of a radial profile.
pub fn radial_second_moment<F: Fn(f64) -> f64>(profile: F, dim: usize, support: f64) -> f64 {
    let integrand = |r: f64| profile(r) * r.powi(dim as i32 + 1);
    0.5 * unit_sphere_area(dim) * adaptive_simpson(&integrand, 0.0, support, 1e-15)
}

/// Ratio `Psi(r_cut) / Psi(0)` below which the kernel is treated as zero.
pub const KERNEL_CUTOFF_RATIO: f64 = 1e-12;

impl KernelSpec {
    pub fn new(family: KernelFamily, width: f64, dim: usize) -> Result<Self> {
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel width must be > 0, got {width}")));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidParameter(format!("dimension must be 1, 2 or 3, got {dim}")));
        }
        let (norm, sigma, conforming) = match family {
            KernelFamily::Gaussian => {
                let norm = (2.0 * PI * width * width).powf(-(dim as f64) / 2.0);
                (norm, dim as f64 * width * width / 2.0, true)
            }
            KernelFamily::CompactBump => {
                let profile = |r: f64| bump_profile(r / width);
                let mass = radial_mass(profile, dim, width);
                let norm = 1.0 / mass;
                let sigma = norm * radial_second_moment(profile, dim, width);
                (norm, sigma, false)
            }
        };
        Ok(Self { family, width, dim, sigma, conforming, norm })
    }

    /// Coefficient of the Laplacian in the local limit of the rescaled convolution,
    /// `(1/2) int Psi(y) y_1^2 dy = sigma / d`.
    pub fn diffusivity(&self) -> f64 {
        self.sigma / self.dim as f64
    }

    pub fn gaussian(width: f64, dim: usize) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, width, dim)
    }

    /// Psi(r) without argument checks.
    #[inline]
    pub fn eval(&self, r: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian => {
                let x = r / self.width;
                self.norm * (-0.5 * x * x).exp()
            }
            KernelFamily::CompactBump => self.norm * bump_profile(r / self.width),
        }
    }

    /// Psi_eps(r) = eps^-d Psi(r / eps) without argument checks.
    #[inline]
    pub fn eval_rescaled(&self, eps: f64, r: f64) -> f64 {
        self.eval(r / eps) / eps.powi(self.dim as i32)
    }

    /// Radius beyond which Psi < 1e-12 Psi(0) (the support for the bump).
    pub fn cutoff_radius(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian => self.width * (2.0 * (1.0 / KERNEL_CUTOFF_RATIO).ln()).sqrt(),
            KernelFamily::CompactBump => self.width,
        }
    }

    /// Second moment recomputed by quadrature (for cross-checking `sigma`).
    pub fn second_moment_by_quadrature(&self) -> f64 {
        let support = match self.family {
            KernelFamily::Gaussian => 40.0 * self.width,
            KernelFamily::CompactBump => self.width,
        };
        radial_second_moment(|r| self.eval(r), self.dim, support)
    }

    /// Mass of Psi_eps by quadrature; 1 up to quadrature error.
    pub fn rescaled_mass(&self, eps: f64) -> f64 {
        let support = match self.family {
            KernelFamily::Gaussian => 40.0 * self.width * eps,
            KernelFamily::CompactBump => self.width * eps,
        };
        radial_mass(|r| self.eval_rescaled(eps, r), self.dim, support)
    }
}

/// Checked Psi(r).
pub fn kernel_eval(spec: &KernelSpec, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("distance must be >= 0, got {r}")));
    }
    Ok(spec.eval(r))
}

pub fn kernel_second_moment(spec: &KernelSpec) -> f64 {
    spec.sigma
}

/// Checked Psi_eps(r).
pub fn rescaled_kernel_eval(spec: &KernelSpec, eps: f64, r: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps must be > 0, got {eps}")));
    }
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("distance must be >= 0, got {r}")));
    }
    Ok(spec.eval_rescaled(eps, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn nonlinearity_values() {
        let p = FhnParams::new(0.25, 0.1, 0.5).unwrap();
        assert_eq!(nonlinearity_eval(0.0, &p).unwrap(), 0.0);
        assert_eq!(nonlinearity_eval(1.0, &p).unwrap(), 0.0);
        assert_relative_eq!(nonlinearity_eval(0.5, &p).unwrap(), 0.0625, epsilon = 1e-15);
        assert!(nonlinearity_eval(f64::NAN, &p).is_err());
        assert!(nonlinearity_eval(f64::INFINITY, &p).is_err());
    }

    #[test]
    fn adaptation_values() {
        let p = FhnParams::new(0.25, 0.1, 0.5).unwrap();
        assert_eq!(adaptation_eval(0.0, 0.0, &p).unwrap(), 0.0);
        assert_relative_eq!(adaptation_eval(1.0, 1.0, &p).unwrap(), 0.05, epsilon = 1e-15);
        let frozen = FhnParams::new(0.25, 0.0, 0.5).unwrap();
        assert_eq!(adaptation_eval(3.0, -7.0, &frozen).unwrap(), 0.0);
        assert!(adaptation_eval(0.0, f64::NAN, &p).is_err());
    }

    #[test]
    fn params_are_validated() {
        assert!(FhnParams::new(0.0, 0.1, 0.5).is_err());
        assert!(FhnParams::new(1.0, 0.1, 0.5).is_err());
        assert!(FhnParams::new(0.5, -0.1, 0.5).is_err());
        assert!(FhnParams::new(0.5, 0.1, -1.0).is_err());
    }

    #[test]
    fn constants_for_quarter_threshold() {
        let c = derive_constants(&FhnParams::default()).unwrap();
        // max of N'(v) = -3v^2 + 2.5 v - 0.25 sits at v = 1.25 / 3
        let v = 1.25 / 3.0;
        let max_slope = -3.0 * v * v + 2.5 * v - 0.25;
        assert_relative_eq!(c.kappa2, max_slope, epsilon = 1e-15);
        assert_relative_eq!(c.kappa2, 0.2708333333333333, epsilon = 1e-12);
        assert_eq!(c.kappa1, 0.53125);
        assert_eq!(c.kappa1_prime, 0.5);
        assert!(c.kappa3 > 0.0);
    }

    #[test]
    fn kappa2_at_half() {
        let c = derive_constants(&FhnParams::new(0.5, 0.1, 0.5).unwrap()).unwrap();
        assert_relative_eq!(c.kappa2, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn derivative_never_exceeds_kappa2() {
        let p = FhnParams::default();
        let c = derive_constants(&p).unwrap();
        for i in 0..=4000 {
            let v = -10.0 + 20.0 * i as f64 / 4000.0;
            assert!(p.nonlinearity_derivative(v) <= c.kappa2 + 1e-14);
        }
    }

    #[test]
    fn certification_detects_bad_constants() {
        let p = FhnParams::default();
        let mut c = derive_constants(&p).unwrap();
        assert!(certify_constants(&p, &c, CERTIFY_POINTS).all_hold());
        c.kappa2 *= 0.9;
        assert!(!certify_constants(&p, &c, CERTIFY_POINTS).all_hold());
    }

    #[test]
    fn gaussian_kernel_values() {
        let k = KernelSpec::gaussian(1.0, 1).unwrap();
        assert_relative_eq!(kernel_eval(&k, 0.0).unwrap(), 0.3989422804014327, epsilon = 1e-15);
        assert!(kernel_eval(&k, 1e3).unwrap() == 0.0);
        assert!(kernel_eval(&k, -1.0).is_err());
        assert!(k.conforming);
    }

    #[test]
    fn bump_kernel_is_compact_and_not_conforming() {
        let k = KernelSpec::new(KernelFamily::CompactBump, 1.0, 1).unwrap();
        assert_eq!(kernel_eval(&k, 2.0).unwrap(), 0.0);
        assert!(kernel_eval(&k, 0.5).unwrap() > 0.0);
        assert!(!k.conforming);
        assert_relative_eq!(k.rescaled_mass(1.0), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn second_moments() {
        let k = KernelSpec::gaussian(1.0, 1).unwrap();
        assert_eq!(kernel_second_moment(&k), 0.5);
        for s in [0.3, 1.0, 2.5] {
            let k = KernelSpec::gaussian(s, 1).unwrap();
            assert_relative_eq!(k.sigma, s * s / 2.0, max_relative = 1e-15);
        }
        // uniform density 1/2 on [-1, 1]
        let uniform = radial_second_moment(|_| 0.5, 1, 1.0);
        assert_relative_eq!(uniform, 1.0 / 6.0, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_matches_analytic_gaussian_moment() {
        for dim in 1..=3 {
            for s in [0.5, 1.0, 2.0] {
                let k = KernelSpec::gaussian(s, dim).unwrap();
                assert_relative_eq!(k.second_moment_by_quadrature(), k.sigma, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn rescaled_kernel() {
        let k = KernelSpec::gaussian(1.0, 1).unwrap();
        for r in [0.0, 0.3, 2.0] {
            assert_eq!(rescaled_kernel_eval(&k, 1.0, r).unwrap(), kernel_eval(&k, r).unwrap());
        }
        assert_relative_eq!(
            rescaled_kernel_eval(&k, 0.5, 0.0).unwrap(),
            0.7978845608028654,
            epsilon = 1e-15
        );
        assert!(rescaled_kernel_eval(&k, 0.0, 1.0).is_err());
        assert!(rescaled_kernel_eval(&k, -1.0, 1.0).is_err());
    }

    #[test]
    fn rescaled_mass_is_one() {
        for family in [KernelFamily::Gaussian, KernelFamily::CompactBump] {
            for dim in 1..=3 {
                let k = KernelSpec::new(family, 0.7, dim).unwrap();
                for eps in [1.0, 0.3, 0.05] {
                    assert!((k.rescaled_mass(eps) - 1.0).abs() < 1e-8, "{family:?} d={dim} eps={eps}");
                }
            }
        }
    }

    #[test]
    fn kernel_config_round_trip() {
        let k = KernelSpec::new(KernelFamily::CompactBump, 0.5, 2).unwrap();
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains("compact_bump"));
        let back: KernelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, k);
    }
}
