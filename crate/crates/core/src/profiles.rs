//! Descriptors for the initial density and the initial macroscopic fields.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Domain, GridSpec, ScalarField};
use crate::model::radial_mass;
use crate::quadrature::adaptive_simpson;

/// Probability density of neuron positions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityProfile {
    /// Uniform on the domain.
    Constant,
    /// `prod_a (1 + A cos(2 pi x_a / L)) / L`.
    CosineBump { amplitude: f64 },
    /// Isotropic Gaussian centred at `(c, .., c)`, wrapped when periodic.
    Gaussian { center: f64, width: f64 },
    /// Smooth bump `exp(-1/(1-(r/R)^2))` centred at `(c, .., c)`.
    CompactBump { center: f64, radius: f64 },
}

impl Default for DensityProfile {
    fn default() -> Self {
        DensityProfile::CosineBump { amplitude: 0.5 }
    }
}

fn bump(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - x * x)).exp()
    }
}

/// A density profile bound to a domain with its normalization resolved.
#[derive(Debug, Clone, Copy)]
pub struct Density {
    pub profile: DensityProfile,
    pub domain: Domain,
    /// Normalizer of one axis factor (separable profiles) or of the radial profile.
    norm: f64,
}

impl DensityProfile {
    pub fn resolve(self, domain: Domain) -> Result<Density> {
        let l = domain.extent;
        let bad = |msg: String| Err(Error::InvalidParameter(format!("unnormalizable density: {msg}")));
        match self {
            DensityProfile::Constant => {}
            DensityProfile::CosineBump { amplitude } => {
                if !(amplitude.abs() <= 1.0) {
                    return bad(format!("cosine amplitude {amplitude} outside [-1, 1]"));
                }
            }
            DensityProfile::Gaussian { center, width } => {
                if !(width > 0.0 && width.is_finite() && center.is_finite()) {
                    return bad(format!("gaussian width {width}, center {center}"));
                }
            }
            DensityProfile::CompactBump { center, radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return bad(format!("bump radius {radius}"));
                }
                let fits = match domain.boundary {
                    Boundary::Periodic => radius <= 0.5 * l,
                    Boundary::ZeroFlux => center - radius >= 0.0 && center + radius <= l,
                };
                if !fits {
                    return bad(format!("bump (center {center}, radius {radius}) does not fit the domain"));
                }
            }
        }
        let mut d = Density { profile: self, domain, norm: 1.0 };
        d.norm = match self {
            DensityProfile::Constant => l,
            DensityProfile::CosineBump { .. } => l,
            DensityProfile::Gaussian { .. } => adaptive_simpson(&|x| d.axis_raw(x), 0.0, l, 1e-15),
            DensityProfile::CompactBump { radius, .. } => {
                if domain.dim == 1 {
                    adaptive_simpson(&|x| d.axis_raw(x), 0.0, l, 1e-15)
                } else {
                    radial_mass(|r| bump(r / radius), domain.dim, radius)
                }
            }
        };
        if !(d.norm > 0.0 && d.norm.is_finite()) {
            return bad(format!("{self:?} has zero mass on the domain"));
        }
        Ok(d)
    }
}

impl Density {
    /// Whether the density factorizes over axes (always true in d = 1).
    pub fn is_separable(&self) -> bool {
        self.domain.dim == 1 || !matches!(self.profile, DensityProfile::CompactBump { .. })
    }

    fn axis_raw(&self, x: f64) -> f64 {
        let l = self.domain.extent;
        match self.profile {
            DensityProfile::Constant => 1.0,
            DensityProfile::CosineBump { amplitude } => 1.0 + amplitude * (2.0 * PI * x / l).cos(),
            DensityProfile::Gaussian { center, width } => match self.domain.boundary {
                Boundary::Periodic => {
                    let images = (10.0 * width / l).ceil() as i32 + 1;
                    (-images..=images)
                        .map(|n| {
                            let d = x - center - n as f64 * l;
                            (-0.5 * d * d / (width * width)).exp()
                        })
                        .sum()
                }
                Boundary::ZeroFlux => {
                    let d = x - center;
                    (-0.5 * d * d / (width * width)).exp()
                }
            },
            DensityProfile::CompactBump { center, radius } => {
                bump(self.domain.displacement(x, center) / radius)
            }
        }
    }

    /// Normalized one-axis factor of a separable density.
    pub fn axis_density(&self, x: f64) -> f64 {
        debug_assert!(self.is_separable());
        self.axis_raw(x) / self.norm
    }

    /// Density at a point of the domain.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.is_separable() {
            (0..self.domain.dim).map(|a| self.axis_density(x[a])).product()
        } else {
            let DensityProfile::CompactBump { center, radius } = self.profile else {
                unreachable!()
            };
            let c = [center; 3];
            bump(self.domain.distance(x, &c) / radius) / self.norm
        }
    }

    /// Upper bound of the density (for rejection sampling).
    pub fn max_value(&self) -> f64 {
        match self.profile {
            DensityProfile::CompactBump { .. } if !self.is_separable() => (-1.0f64).exp() / self.norm,
            _ => {
                // separable: max of the axis factor, sampled finely
                let l = self.domain.extent;
                let m = (0..=4096)
                    .map(|k| self.axis_density(l * k as f64 / 4096.0))
                    .fold(0.0, f64::max);
                (1.05 * m).powi(self.domain.dim as i32)
            }
        }
    }

    /// Cell-centre samples rescaled so that `sum rho h^d = 1` exactly on the grid.
    pub fn on_grid(&self, grid: GridSpec) -> Result<ScalarField> {
        if grid.domain() != self.domain {
            return Err(Error::GridMismatch("density domain differs from the grid".into()));
        }
        let mut f = ScalarField::from_fn(grid, |x| self.eval(x));
        let mass = f.integral();
        f.values.iter_mut().for_each(|v| *v /= mass);
        Ok(f)
    }
}

/// Initial profile for a macroscopic field (V0 or W0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldProfile {
    Constant { value: f64 },
    /// `A prod_a exp(kappa (cos(2 pi (x_a - c) / L) - 1))`.
    VonMisesBump { amplitude: f64, center: f64, concentration: f64 },
    /// `A exp(-|x - c|^2 / (2 w^2))` with minimum-image distance when periodic.
    GaussianBump { amplitude: f64, center: f64, width: f64 },
    /// `A prod_a sin(2 pi k x_a / L)`.
    Sine { amplitude: f64, mode: u32 },
}

impl FieldProfile {
    pub fn zero() -> Self {
        FieldProfile::Constant { value: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FieldProfile::Constant { value } => value.is_finite(),
            FieldProfile::VonMisesBump { amplitude, center, concentration } => {
                amplitude.is_finite() && center.is_finite() && concentration >= 0.0 && concentration.is_finite()
            }
            FieldProfile::GaussianBump { amplitude, center, width } => {
                amplitude.is_finite() && center.is_finite() && width > 0.0 && width.is_finite()
            }
            FieldProfile::Sine { amplitude, .. } => amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid field profile {self:?}")))
        }
    }

    pub fn eval(&self, x: &[f64], domain: &Domain) -> f64 {
        let l = domain.extent;
        let d = domain.dim;
        match *self {
            FieldProfile::Constant { value } => value,
            FieldProfile::VonMisesBump { amplitude, center, concentration } => {
                let s: f64 = (0..d)
                    .map(|a| (2.0 * PI * (x[a] - center) / l).cos() - 1.0)
                    .sum();
                amplitude * (concentration * s).exp()
            }
            FieldProfile::GaussianBump { amplitude, center, width } => {
                let c = [center; 3];
                let r = domain.distance(x, &c);
                amplitude * (-0.5 * r * r / (width * width)).exp()
            }
            FieldProfile::Sine { amplitude, mode } => {
                amplitude
                    * (0..d)
                        .map(|a| (2.0 * PI * mode as f64 * x[a] / l).sin())
                        .product::<f64>()
            }
        }
    }

    /// Supremum of `|profile|`.
    pub fn sup_abs(&self) -> f64 {
        match *self {
            FieldProfile::Constant { value } => value.abs(),
            FieldProfile::VonMisesBump { amplitude, .. }
            | FieldProfile::GaussianBump { amplitude, .. }
            | FieldProfile::Sine { amplitude, .. } => amplitude.abs(),
        }
    }

    pub fn on_grid(&self, grid: GridSpec) -> ScalarField {
        let dom = grid.domain();
        ScalarField::from_fn(grid, |x| self.eval(x, &dom))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> Domain {
        Domain::new(1, 2.0 * PI, Boundary::Periodic).unwrap()
    }

    #[test]
    fn densities_have_unit_mass() {
        let profiles = [
            DensityProfile::Constant,
            DensityProfile::CosineBump { amplitude: 0.5 },
            DensityProfile::Gaussian { center: 1.0, width: 0.7 },
            DensityProfile::CompactBump { center: 3.0, radius: 1.5 },
        ];
        for p in profiles {
            let d = p.resolve(circle()).unwrap();
            let m = adaptive_simpson(&|x| d.eval(&[x]), 0.0, 2.0 * PI, 1e-14);
            assert!((m - 1.0).abs() < 1e-10, "{p:?}: {m}");
        }
    }

    #[test]
    fn two_dimensional_bump_has_unit_mass_on_grid() {
        let dom = Domain::new(2, 4.0, Boundary::ZeroFlux).unwrap();
        let d = DensityProfile::CompactBump { center: 2.0, radius: 1.5 }.resolve(dom).unwrap();
        let g = GridSpec::new(2, 4.0, 256, Boundary::ZeroFlux).unwrap();
        let raw = ScalarField::from_fn(g, |x| d.eval(x)).integral();
        assert!((raw - 1.0).abs() < 1e-6, "{raw}");
        assert!((d.on_grid(g).unwrap().integral() - 1.0).abs() < 1e-13);
        assert!(!d.is_separable());
    }

    #[test]
    fn rejects_unnormalizable_profiles() {
        assert!(DensityProfile::CosineBump { amplitude: 1.5 }.resolve(circle()).is_err());
        assert!(DensityProfile::Gaussian { center: 0.0, width: 0.0 }.resolve(circle()).is_err());
        assert!(DensityProfile::CompactBump { center: 1.0, radius: 4.0 }.resolve(circle()).is_err());
        let box1 = Domain::new(1, 1.0, Boundary::ZeroFlux).unwrap();
        assert!(DensityProfile::CompactBump { center: 0.1, radius: 0.3 }.resolve(box1).is_err());
    }

    #[test]
    fn von_mises_peak() {
        let dom = circle();
        let f = FieldProfile::VonMisesBump { amplitude: 0.6, center: PI, concentration: 4.0 };
        assert!((f.eval(&[PI], &dom) - 0.6).abs() < 1e-15);
        assert!((f.eval(&[0.0], &dom) - 0.6 * (-8.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn periodic_gaussian_wraps() {
        let d = DensityProfile::Gaussian { center: 0.0, width: 0.3 }.resolve(circle()).unwrap();
        assert!((d.eval(&[0.1]) - d.eval(&[2.0 * PI - 0.1])).abs() < 1e-14);
    }

    #[test]
    fn max_bounds_density() {
        for p in [DensityProfile::CosineBump { amplitude: 0.9 }, DensityProfile::Gaussian { center: 2.0, width: 0.4 }] {
            let d = p.resolve(circle()).unwrap();
            let m = d.max_value();
            for k in 0..1000 {
                assert!(d.eval(&[2.0 * PI * k as f64 / 1000.0]) <= m);
            }
        }
    }
}
