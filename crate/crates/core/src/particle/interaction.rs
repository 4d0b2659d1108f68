//! Pair-interaction backends: exact all-pairs sums, neighbor lists and the
//! one-dimensional fast Gauss transform.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fgt::{FastGauss1d, DEFAULT_ORDER};
use super::neighbors::NeighborList;
use crate::error::{Error, Result};
use crate::grid::Domain;
use crate::linalg::det_sum;
use crate::model::{KernelFamily, KernelSpec};

/// Default neighbor cutoff in units of `eps * s`.
pub const DEFAULT_CUTOFF_MULTIPLIER: f64 = 8.0;
/// Ensembles up to this size use exact all-pairs sums under `Auto`.
const AUTO_ALL_PAIRS_MAX: usize = 1000;
/// One-dimensional Gaussian ensembles above this size use the fast transform under `Auto`.
const AUTO_FGT_MIN: usize = 3000;

/// How pair sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Auto,
    AllPairs,
    NeighborList { cutoff_multiplier: f64 },
    FastGauss { order: usize },
}

#[derive(Debug, Clone)]
enum Backend {
    AllPairs,
    /// Neighbor list with `Psi_eps(r_ij)` cached per stored pair.
    Neighbors { list: NeighborList, psi: Vec<f64> },
    /// Fast transform plus `S[1]`, the kernel-weighted mass including the self term.
    Fgt { plan: Box<FastGauss1d>, s0: Vec<f64> },
}

/// Fixed positions, masses and kernel, with the chosen pair-sum backend.
#[derive(Debug, Clone)]
pub struct Interaction {
    pub domain: Domain,
    pub eps: f64,
    pub kernel: KernelSpec,
    positions: Vec<f64>,
    masses: Vec<f64>,
    backend: Backend,
    /// `sum_{j != i} m_j Psi_eps(|x_i - x_j|)`.
    row_sum: Vec<f64>,
}

impl Interaction {
    pub fn new(
        domain: Domain,
        positions: Vec<f64>,
        masses: Vec<f64>,
        eps: f64,
        kernel: KernelSpec,
        choice: BackendChoice,
    ) -> Result<Self> {
        let n = masses.len();
        let gaussian_1d = domain.dim == 1 && kernel.family == KernelFamily::Gaussian;
        let mut me = Self { domain, eps, kernel, positions, masses, backend: Backend::AllPairs, row_sum: Vec::new() };
        me.backend = match choice {
            BackendChoice::AllPairs => Backend::AllPairs,
            BackendChoice::NeighborList { cutoff_multiplier } => me.neighbor_backend(cutoff_multiplier)?,
            BackendChoice::FastGauss { order } => {
                if !gaussian_1d {
                    return Err(Error::InvalidParameter("fast Gauss transform needs a 1-d Gaussian kernel".into()));
                }
                me.fgt_backend(order).ok_or_else(|| {
                    Error::InvalidParameter("periodic domain too small for the fast Gauss transform".into())
                })?
            }
            BackendChoice::Auto => {
                if gaussian_1d && n >= AUTO_FGT_MIN {
                    match me.fgt_backend(DEFAULT_ORDER) {
                        Some(b) => b,
                        None => me.neighbor_backend(DEFAULT_CUTOFF_MULTIPLIER)?,
                    }
                } else if n <= AUTO_ALL_PAIRS_MAX {
                    Backend::AllPairs
                } else {
                    me.neighbor_backend(DEFAULT_CUTOFF_MULTIPLIER)?
                }
            }
        };
        me.row_sum = me.compute_row_sums();
        Ok(me)
    }

    fn neighbor_backend(&self, multiplier: f64) -> Result<Backend> {
        let list = build_neighbor_list_raw(&self.domain, &self.positions, &self.kernel, self.eps, multiplier)?;
        let psi = (0..list.len())
            .flat_map(|i| list.row(i).map(|(_, r)| self.kernel.eval_rescaled(self.eps, r)).collect::<Vec<_>>())
            .collect();
        Ok(Backend::Neighbors { list, psi })
    }

    fn fgt_backend(&self, order: usize) -> Option<Backend> {
        let plan = FastGauss1d::new(&self.domain, &self.positions, &self.masses, self.eps, self.kernel.width, order)?;
        let s0 = plan.sum(&vec![1.0; self.masses.len()]);
        Some(Backend::Fgt { plan: Box::new(plan), s0 })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn position(&self, i: usize) -> &[f64] {
        let d = self.domain.dim;
        &self.positions[i * d..(i + 1) * d]
    }

    /// Name of the active backend.
    pub fn backend_name(&self) -> &'static str {
        match self.backend {
            Backend::AllPairs => "all_pairs",
            Backend::Neighbors { .. } => "neighbor_list",
            Backend::Fgt { .. } => "fast_gauss",
        }
    }

    /// Whether pair sums are evaluated exactly (no expansion).
    pub fn is_exact(&self) -> bool {
        !matches!(self.backend, Backend::Fgt { .. })
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sum
    }

    #[inline]
    fn psi(&self, i: usize, j: usize) -> f64 {
        self.kernel.eval_rescaled(self.eps, self.domain.distance(self.position(i), self.position(j)))
    }

    /// Calls `f(j, Psi_eps(r_ij))` for every `j != i` in ascending order (exact backends).
    fn for_each_pair<F: FnMut(usize, f64)>(&self, i: usize, mut f: F) {
        match &self.backend {
            Backend::AllPairs => {
                for j in 0..self.len() {
                    if j != i {
                        f(j, self.psi(i, j));
                    }
                }
            }
            Backend::Neighbors { list, psi } => {
                let range = list.row_range(i);
                for (&j, &p) in list.row_indices(i).iter().zip(&psi[range]) {
                    f(j as usize, p);
                }
            }
            Backend::Fgt { .. } => unreachable!("pairwise iteration on an approximate backend"),
        }
    }

    fn compute_row_sums(&self) -> Vec<f64> {
        match &self.backend {
            Backend::Fgt { s0, .. } => {
                let self_weight = self.kernel.eval_rescaled(self.eps, 0.0);
                s0.iter().zip(&self.masses).map(|(s, m)| s - m * self_weight).collect()
            }
            _ => (0..self.len())
                .into_par_iter()
                .map(|i| {
                    let mut acc = 0.0;
                    self.for_each_pair(i, |j, p| acc += self.masses[j] * p);
                    acc
                })
                .collect(),
        }
    }

    /// `S[q]_i = sum_j m_j q_j Psi_eps(r_ij)`, self term included.
    pub fn kernel_sum(&self, q: &[f64]) -> Vec<f64> {
        match &self.backend {
            Backend::Fgt { plan, .. } => plan.sum(q),
            _ => {
                let self_weight = self.kernel.eval_rescaled(self.eps, 0.0);
                (0..self.len())
                    .into_par_iter()
                    .map(|i| {
                        let mut acc = self.masses[i] * q[i] * self_weight;
                        self.for_each_pair(i, |j, p| acc += self.masses[j] * q[j] * p);
                        acc
                    })
                    .collect()
            }
        }
    }

    /// `out_i = sum_j m_j Psi_eps(r_ij) (x_i - x_j)`.
    pub fn apply_graph_laplacian(&self, x: &[f64], out: &mut [f64]) {
        match &self.backend {
            Backend::Fgt { plan, s0 } => {
                let s = plan.sum(x);
                out.par_iter_mut()
                    .enumerate()
                    .for_each(|(i, o)| *o = x[i] * s0[i] - s[i]);
            }
            _ => out.par_iter_mut().enumerate().for_each(|(i, o)| {
                let xi = x[i];
                let mut acc = 0.0;
                self.for_each_pair(i, |j, p| acc += self.masses[j] * p * (xi - x[j]));
                *o = acc;
            }),
        }
    }

    /// `K_i = (1/eps^2) sum_j m_j Psi_eps(r_ij) (v_i - v_j)`.
    pub fn drift(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_graph_laplacian(v, &mut out);
        let inv = 1.0 / (self.eps * self.eps);
        out.iter_mut().for_each(|o| *o *= inv);
        out
    }

    /// `(1/2) sum_{i,j} m_i m_j Psi_eps(r_ij) (a_i - a_j)(v_i - v_j)`.
    pub fn pair_form(&self, a: &[f64], v: &[f64]) -> f64 {
        let terms: Vec<f64> = match &self.backend {
            Backend::Fgt { plan, s0 } => {
                // symmetric expansion of the double sum
                let sv = plan.sum(v);
                let sa = plan.sum(a);
                let av: Vec<f64> = a.iter().zip(v).map(|(x, y)| x * y).collect();
                let sav = plan.sum(&av);
                (0..self.len())
                    .map(|i| self.masses[i] * (av[i] * s0[i] - a[i] * sv[i] - v[i] * sa[i] + sav[i]))
                    .collect()
            }
            _ => (0..self.len())
                .into_par_iter()
                .map(|i| {
                    let (ai, vi) = (a[i], v[i]);
                    let mut acc = 0.0;
                    self.for_each_pair(i, |j, p| acc += self.masses[j] * p * (ai - a[j]) * (vi - v[j]));
                    self.masses[i] * acc
                })
                .collect(),
        };
        0.5 * det_sum(&terms)
    }
}

/// Builds a neighbor list with cutoff `multiplier * eps * s` (the support for the bump kernel).
pub(crate) fn build_neighbor_list_raw(
    domain: &Domain,
    positions: &[f64],
    kernel: &KernelSpec,
    eps: f64,
    multiplier: f64,
) -> Result<NeighborList> {
    let min = match kernel.family {
        KernelFamily::Gaussian => 4.0,
        KernelFamily::CompactBump => 1.0,
    };
    if !(multiplier >= min) {
        return Err(Error::InvalidParameter(format!(
            "cutoff multiplier must be >= {min} for the {:?} kernel, got {multiplier}",
            kernel.family
        )));
    }
    Ok(NeighborList::build(domain, positions, multiplier * eps * kernel.width))
}
