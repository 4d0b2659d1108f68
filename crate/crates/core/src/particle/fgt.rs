//! One-dimensional fast Gauss transform.
//!
//! Computes `S_i = sum_j m_j q_j Psi_eps(|x_i - x_j|)` for the Gaussian
//! kernel in `O(N p + B R p^2)` work, where `B` is the number of boxes
//! of width about `sqrt(delta) / 2`, `delta = 2 eps^2 s^2`. Sources are
//! aggregated into Hermite expansions about their box centre, which are
//! translated into Taylor expansions about each target box within reach `R`.

use rayon::prelude::*;

use crate::grid::{Boundary, Domain};

/// Default expansion order; relative error below 1e-13 with boxes of width `sqrt(delta)/2`.
pub const DEFAULT_ORDER: usize = 20;
/// `exp(-T^2)` is below 1e-17 beyond this scaled distance.
const REACH_T: f64 = 6.27;
/// Box width in units of `sqrt(delta)`.
const BOX_RATIO: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct FastGauss1d {
    n: usize,
    order: usize,
    sqrt_delta: f64,
    prefactor: f64,
    periodic: bool,
    n_boxes: usize,
    box_width: f64,
    reach: usize,
    /// Particle indices sorted by position.
    perm: Vec<u32>,
    box_start: Vec<usize>,
    /// `(x - c_box) / sqrt(delta)` in sorted order.
    scaled: Vec<f64>,
    masses: Vec<f64>,
    /// For offsets `-R..=R`: row-major `order x order` matrix mapping Hermite
    /// moments of the source box to Taylor coefficients of the target box.
    translations: Vec<Vec<f64>>,
}

/// Smallest domain, in units of `eps * s`, for which the periodic transform
/// agrees with the minimum-image kernel to rounding.
pub const MIN_PERIODIC_EXTENT: f64 = 13.0;

impl FastGauss1d {
    /// Returns `None` when the periodic domain is too small for the
    /// minimum-image convention to be exact at the box level.
    pub fn new(domain: &Domain, positions: &[f64], masses: &[f64], eps: f64, width: f64, order: usize) -> Option<Self> {
        assert_eq!(domain.dim, 1);
        let n = positions.len();
        let l = domain.extent;
        let periodic = domain.boundary == Boundary::Periodic;
        let scale = eps * width;
        if periodic && l < MIN_PERIODIC_EXTENT * scale {
            return None;
        }
        let sqrt_delta = std::f64::consts::SQRT_2 * scale;
        let mut n_boxes = ((l / (BOX_RATIO * sqrt_delta)).ceil() as usize).max(1);
        if periodic && n_boxes % 2 == 0 {
            n_boxes += 1;
        }
        let box_width = l / n_boxes as f64;
        let mut reach = (REACH_T * sqrt_delta / box_width).ceil() as usize;
        reach = if periodic { reach.min((n_boxes - 1) / 2) } else { reach.min(n_boxes - 1) };

        let box_of = |x: f64| ((x / box_width) as usize).min(n_boxes - 1);
        let mut perm: Vec<u32> = (0..n as u32).collect();
        perm.sort_by(|&a, &b| positions[a as usize].total_cmp(&positions[b as usize]).then(a.cmp(&b)));
        let mut box_start = vec![0usize; n_boxes + 1];
        for &i in &perm {
            box_start[box_of(positions[i as usize]) + 1] += 1;
        }
        for b in 0..n_boxes {
            box_start[b + 1] += box_start[b];
        }
        let scaled = perm
            .iter()
            .map(|&i| {
                let x = positions[i as usize];
                let c = (box_of(x) as f64 + 0.5) * box_width;
                (x - c) / sqrt_delta
            })
            .collect();
        let masses = perm.iter().map(|&i| masses[i as usize]).collect();

        let translations = (-(reach as isize)..=reach as isize)
            .map(|delta| {
                let t0 = delta as f64 * box_width / sqrt_delta;
                let h = hermite_functions(t0, 2 * order);
                let mut m = vec![0.0; order * order];
                let mut fact = 1.0;
                for k in 0..order {
                    if k > 0 {
                        fact *= k as f64;
                    }
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    for nn in 0..order {
                        m[k * order + nn] = sign / fact * h[nn + k];
                    }
                }
                m
            })
            .collect();

        Some(Self {
            n,
            order,
            sqrt_delta,
            prefactor: 1.0 / (2.0 * std::f64::consts::PI * scale * scale).sqrt(),
            periodic,
            n_boxes,
            box_width,
            reach,
            perm,
            box_start,
            scaled,
            masses,
            translations,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_boxes(&self) -> usize {
        self.n_boxes
    }

    pub fn box_width(&self) -> f64 {
        self.box_width
    }

    pub fn reach(&self) -> usize {
        self.reach
    }

    /// `S_i = sum_j m_j q_j Psi_eps(|x_i - x_j|)`, self term included.
    pub fn sum(&self, q: &[f64]) -> Vec<f64> {
        assert_eq!(q.len(), self.n);
        let p = self.order;
        let moments: Vec<Vec<f64>> = (0..self.n_boxes)
            .into_par_iter()
            .map(|b| {
                let mut a = vec![0.0; p];
                for s in self.box_start[b]..self.box_start[b + 1] {
                    let beta = self.scaled[s];
                    let mut term = self.masses[s] * q[self.perm[s] as usize];
                    for (nn, an) in a.iter_mut().enumerate() {
                        *an += term;
                        term *= beta / (nn + 1) as f64;
                    }
                }
                a
            })
            .collect();
        let r = self.reach as isize;
        let nb = self.n_boxes as isize;
        let per_box: Vec<Vec<f64>> = (0..self.n_boxes)
            .into_par_iter()
            .map(|c| {
                let range = self.box_start[c]..self.box_start[c + 1];
                if range.is_empty() {
                    return Vec::new();
                }
                let mut coef = vec![0.0; p];
                for (slot, delta) in (-r..=r).enumerate() {
                    let mut src = c as isize - delta;
                    if src < 0 || src >= nb {
                        if !self.periodic {
                            continue;
                        }
                        src = src.rem_euclid(nb);
                    }
                    let a = &moments[src as usize];
                    if a.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let t = &self.translations[slot];
                    for (k, ck) in coef.iter_mut().enumerate() {
                        let row = &t[k * p..(k + 1) * p];
                        *ck += row.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                range
                    .map(|s| {
                        let alpha = self.scaled[s];
                        let mut acc = 0.0;
                        for ck in coef.iter().rev() {
                            acc = acc * alpha + ck;
                        }
                        acc * self.prefactor
                    })
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; self.n];
        for (c, vals) in per_box.into_iter().enumerate() {
            for (k, v) in vals.into_iter().enumerate() {
                out[self.perm[self.box_start[c] + k] as usize] = v;
            }
        }
        out
    }

    /// Scaled length `sqrt(2) eps s` of the Gaussian.
    pub fn sqrt_delta(&self) -> f64 {
        self.sqrt_delta
    }
}

/// `h_m(t) = H_m(t) exp(-t^2)` for `m < count`.
fn hermite_functions(t: f64, count: usize) -> Vec<f64> {
    let mut h = vec![0.0; count.max(2)];
    h[0] = (-t * t).exp();
    h[1] = 2.0 * t * h[0];
    for m in 1..count.saturating_sub(1) {
        h[m + 1] = 2.0 * t * h[m] - 2.0 * m as f64 * h[m - 1];
    }
    h.truncate(count);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::KernelSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exact(domain: &Domain, x: &[f64], m: &[f64], q: &[f64], k: &KernelSpec, eps: f64) -> (Vec<f64>, f64) {
        let mut scale = 0.0_f64;
        let s = (0..x.len())
            .map(|i| {
                let mut acc = 0.0;
                let mut abs = 0.0;
                for j in 0..x.len() {
                    let w = m[j] * k.eval_rescaled(eps, domain.distance(&[x[i]], &[x[j]]));
                    acc += w * q[j];
                    abs += w * q[j].abs();
                }
                scale = scale.max(abs);
                acc
            })
            .collect();
        (s, scale)
    }

    #[test]
    fn hermite_generating_function() {
        // exp(-(t - s)^2) = sum_m s^m / m! h_m(t)
        let (t, s) = (0.7, 0.3);
        let h = hermite_functions(t, 40);
        let mut acc = 0.0;
        let mut term = 1.0;
        for (m, hm) in h.iter().enumerate() {
            acc += term * hm;
            term *= s / (m + 1) as f64;
        }
        assert!((acc - (-(t - s) * (t - s)).exp()).abs() < 1e-15);
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = KernelSpec::gaussian(1.0, 1).unwrap();
        for boundary in [Boundary::Periodic, Boundary::ZeroFlux] {
            let dom = Domain::new(1, 2.0 * std::f64::consts::PI, boundary).unwrap();
            for eps in [0.4, 0.1, 0.03] {
                let n = 2000;
                let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * dom.extent).collect();
                let m = vec![1.0 / n as f64; n];
                let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let f = FastGauss1d::new(&dom, &x, &m, eps, 1.0, DEFAULT_ORDER).unwrap();
                let got = f.sum(&q);
                let (want, scale) = exact(&dom, &x, &m, &q, &k, eps);
                let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-12 * scale, "{boundary:?} eps {eps}: {err:e} vs {scale:e}");
            }
        }
    }

    #[test]
    fn refuses_small_periodic_domains() {
        let dom = Domain::new(1, 1.0, Boundary::Periodic).unwrap();
        assert!(FastGauss1d::new(&dom, &[0.5], &[1.0], 0.1, 1.0, DEFAULT_ORDER).is_none());
    }
}
