//! Moments, dissipation, macroscopic extraction and modulated energy of a
//! particle ensemble.
//!
//! All reductions go through [`det_sum`], so results do not depend on the
//! thread count.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::linalg::det_sum;
use crate::macro_solver::{interpolate, AdaptationMeasure, MacroState};
use crate::model::NonlinearityConstants;
use crate::particle::ParticleEnsemble;

fn weighted_sum<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> f64 {
    let terms: Vec<f64> = (0..n).into_par_iter().map(f).collect();
    det_sum(&terms)
}

/// `(sum m |v|^k, sum m |w|^k, sum m |x|^k)`.
pub fn moments(ens: &ParticleEnsemble, k: u32) -> Result<(f64, f64, f64)> {
    if k > 8 {
        return Err(Error::InvalidParameter(format!("moment order must be in 0..=8, got {k}")));
    }
    let m = ens.masses();
    let pw = |x: f64| if k == 0 { 1.0 } else { x.abs().powi(k as i32) };
    let mv = weighted_sum(ens.len(), |i| m[i] * pw(ens.v()[i]));
    let mw = weighted_sum(ens.len(), |i| m[i] * pw(ens.w()[i]));
    let mx = weighted_sum(ens.len(), |i| {
        let r = ens.position(i).iter().map(|c| c * c).sum::<f64>().sqrt();
        m[i] * pw(r)
    });
    Ok((mv, mw, mx))
}

fn check_p(p: u32) -> Result<()> {
    if p == 0 {
        return Err(Error::InvalidParameter("p must be >= 1".into()));
    }
    Ok(())
}

fn odd_power(v: &[f64], p: u32) -> Vec<f64> {
    v.iter().map(|x| x.powi(2 * p as i32 - 1)).collect()
}

/// `D_p = (1/2) sum_ij m_i m_j Psi_eps(r_ij) (v_i^{2p-1} - v_j^{2p-1})(v_i - v_j)`.
pub fn dissipation(ens: &ParticleEnsemble, p: u32) -> Result<f64> {
    check_p(p)?;
    let a = odd_power(ens.v(), p);
    let d = ens.interaction().pair_form(&a, ens.v());
    // exact backends sum nonnegative terms; the expanded fast form may round below zero
    Ok(if ens.interaction().is_exact() { d } else { d.max(0.0) })
}

/// Both sides of `sum_i m_i v_i^{2p-1} K_i = D_p / eps^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetrizationGap {
    pub lhs: f64,
    pub rhs: f64,
    /// Size of the largest summed term, for relative comparisons.
    pub scale: f64,
}

impl SymmetrizationGap {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

pub fn symmetrization_terms(ens: &ParticleEnsemble, p: u32) -> Result<SymmetrizationGap> {
    check_p(p)?;
    let a = odd_power(ens.v(), p);
    let k = ens.interaction_drift();
    let m = ens.masses();
    let lhs = weighted_sum(ens.len(), |i| m[i] * a[i] * k[i]);
    let rhs = ens.interaction().pair_form(&a, ens.v()) / (ens.eps() * ens.eps());
    // bound on the magnitude of the summands on either side
    let abs_a: Vec<f64> = a.iter().map(|x| x.abs()).collect();
    let abs_v: Vec<f64> = ens.v().iter().map(|x| x.abs()).collect();
    let s = ens.interaction().kernel_sum(&abs_v);
    let rows = ens.interaction().row_sums();
    let scale = weighted_sum(ens.len(), |i| m[i] * abs_a[i] * (abs_v[i] * rows[i] + s[i])) / (ens.eps() * ens.eps());
    Ok(SymmetrizationGap { lhs, rhs, scale })
}

/// `|sum_i m_i v_i^{2p-1} K_i - D_p / eps^2|`.
pub fn symmetrization_gap(ens: &ParticleEnsemble, p: u32) -> Result<f64> {
    Ok(symmetrization_terms(ens, p)?.gap())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentInequality {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
}

/// Evaluates
/// `(1/2p) d/dt (mu^v_2p + mu^w_2p) + k1' mu^v_{2p+2} + D_p / eps^2
///   <= (2p(1+k1)+tau-1)/(2p) mu^v_2p + (4 tau p - 2 tau + 1)/(2p) mu^w_2p`
/// with the time derivative taken from the exact particle drifts.
pub fn moment_inequality_check(ens: &ParticleEnsemble, p: u32, constants: &NonlinearityConstants) -> Result<MomentInequality> {
    if !(p == 1 || p == 2) {
        return Err(Error::InvalidParameter(format!("p must be 1 or 2, got {p}")));
    }
    let par = *ens.params();
    let (v, w, m) = (ens.v(), ens.w(), ens.masses());
    let k = ens.interaction_drift();
    let e = 2 * p as i32 - 1;
    let ddt = weighted_sum(ens.len(), |i| {
        let dv = par.nonlinearity(v[i]) - w[i] - k[i];
        let dw = par.adaptation(v[i], w[i]);
        m[i] * (v[i].powi(e) * dv + w[i].powi(e) * dw)
    });
    let (mv2p, mw2p, _) = moments(ens, 2 * p)?;
    let (mv_next, _, _) = moments(ens, 2 * p + 2)?;
    let d = dissipation(ens, p)? / (ens.eps() * ens.eps());
    let pf = p as f64;
    let lhs = ddt + constants.kappa1_prime * mv_next + d;
    let rhs = (2.0 * pf * (1.0 + constants.kappa1) + par.tau - 1.0) / (2.0 * pf) * mv2p
        + (4.0 * par.tau * pf - 2.0 * par.tau + 1.0) / (2.0 * pf) * mw2p;
    let slack = 1e-12 * (lhs.abs() + rhs.abs() + d);
    Ok(MomentInequality { lhs, rhs, satisfied: lhs <= rhs + slack })
}

/// Cell-binned density and conditional means of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct MesoMacroFields {
    pub grid: GridSpec,
    pub rho_eps: ScalarField,
    pub v_eps: ScalarField,
    pub w_eps: ScalarField,
    /// Mass-weighted variance of `v` within each cell.
    pub v_var: ScalarField,
}

fn cell_indices(ens: &ParticleEnsemble, grid: &GridSpec) -> Result<Vec<usize>> {
    if grid.dim != ens.dim() {
        return Err(Error::GridMismatch(format!("grid dimension {} vs ensemble dimension {}", grid.dim, ens.dim())));
    }
    (0..ens.len())
        .map(|i| {
            let x = ens.position(i);
            grid.locate(x).ok_or_else(|| Error::Coverage { index: i, position: x.to_vec() })
        })
        .collect()
}

/// Bins the ensemble on `grid`: `rho = sum m / h^d` and mass-weighted means of `v` and `w`.
/// Empty cells get `(0, 0, 0)`.
pub fn extract_macro_fields(ens: &ParticleEnsemble, grid: &GridSpec) -> Result<MesoMacroFields> {
    let cells = cell_indices(ens, grid)?;
    let n = grid.len();
    let (m, v, w) = (ens.masses(), ens.v(), ens.w());
    let mut mass = vec![0.0; n];
    let mut mv = vec![0.0; n];
    let mut mw = vec![0.0; n];
    for (i, &c) in cells.iter().enumerate() {
        mass[c] += m[i];
        mv[c] += m[i] * v[i];
        mw[c] += m[i] * w[i];
    }
    let mean = |s: &[f64]| -> Vec<f64> { s.iter().zip(&mass).map(|(x, m)| if *m > 0.0 { x / m } else { 0.0 }).collect() };
    let (v_mean, w_mean) = (mean(&mv), mean(&mw));
    let mut var = vec![0.0; n];
    for (i, &c) in cells.iter().enumerate() {
        let d = v[i] - v_mean[c];
        var[c] += m[i] * d * d;
    }
    let var = mean(&var);
    let vol = grid.cell_volume();
    let rho = mass.iter().map(|x| x / vol).collect();
    Ok(MesoMacroFields {
        grid: *grid,
        rho_eps: ScalarField { grid: *grid, values: rho },
        v_eps: ScalarField { grid: *grid, values: v_mean },
        w_eps: ScalarField { grid: *grid, values: w_mean },
        v_var: ScalarField { grid: *grid, values: var },
    })
}

/// `sum_c rho_eps (|V - V_eps|^2 + |W - W_eps|^2) / 2 h^d`.
pub fn modulated_energy_fields(meso: &MesoMacroFields, v: &ScalarField, w: &ScalarField) -> Result<f64> {
    meso.grid.check_same(&v.grid)?;
    meso.grid.check_same(&w.grid)?;
    let terms: Vec<f64> = (0..meso.grid.len())
        .map(|c| {
            let dv = v.values[c] - meso.v_eps.values[c];
            let dw = w.values[c] - meso.w_eps.values[c];
            meso.rho_eps.values[c] * 0.5 * (dv * dv + dw * dw)
        })
        .collect();
    Ok(det_sum(&terms) * meso.grid.cell_volume())
}

pub fn modulated_energy(meso: &MesoMacroFields, state: &MacroState) -> Result<f64> {
    modulated_energy_fields(meso, &state.v, &state.w)
}

/// `sum_i m_i |v_i - V_eps(cell(i))|^2`.
pub fn concentration_second_moment(ens: &ParticleEnsemble, grid: &GridSpec) -> Result<f64> {
    let fields = extract_macro_fields(ens, grid)?;
    let cells = cell_indices(ens, grid)?;
    let (m, v) = (ens.masses(), ens.v());
    let v_eps = &fields.v_eps.values;
    Ok(weighted_sum(ens.len(), |i| {
        let d = v[i] - v_eps[cells[i]];
        m[i] * d * d
    }))
}

/// `sum_c (sum_{i in c} m_i v_i^2 - rho_eps h^d V_eps^2)`, the same quantity by the
/// second-moment decomposition.
pub fn concentration_by_decomposition(ens: &ParticleEnsemble, grid: &GridSpec) -> Result<f64> {
    let fields = extract_macro_fields(ens, grid)?;
    let (m, v) = (ens.masses(), ens.v());
    let vol = grid.cell_volume();
    let second = weighted_sum(ens.len(), |i| m[i] * v[i] * v[i]);
    let mean_part: Vec<f64> = fields.rho_eps.values.iter().zip(&fields.v_eps.values).map(|(r, v)| r * vol * v * v).collect();
    Ok(second - det_sum(&mean_part))
}

/// Bounded test functions `phi(x, v, w)` for the monokinetic comparison.
/// `chi(x)` is a Gaussian window at mid-domain with width `L/6` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `phi = 1`
    One,
    /// `phi = v chi(x)`
    VBump,
    /// `phi = v^2 chi(x)`
    V2Bump,
    /// `phi = w`
    W,
    /// `phi = chi(x) exp(-v^2)`
    XvBump,
}

impl Observable {
    pub const ALL: [Observable; 5] = [Observable::One, Observable::VBump, Observable::V2Bump, Observable::W, Observable::XvBump];

    pub fn id(&self) -> &'static str {
        match self {
            Observable::One => "one",
            Observable::VBump => "v_bump",
            Observable::V2Bump => "v2_bump",
            Observable::W => "w",
            Observable::XvBump => "xv_bump",
        }
    }

    pub fn eval(&self, x: &[f64], extent: f64, v: f64, w: f64) -> f64 {
        let chi = || {
            let width = extent / 6.0;
            x.iter().map(|c| (-0.5 * ((c - 0.5 * extent) / width).powi(2)).exp()).product::<f64>()
        };
        match self {
            Observable::One => 1.0,
            Observable::VBump => v * chi(),
            Observable::V2Bump => v * v * chi(),
            Observable::W => w,
            Observable::XvBump => chi() * (-v * v).exp(),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Observable::ALL.into_iter().find(|o| o.id() == s).ok_or_else(|| Error::UnknownObservable(s.to_string()))
    }
}

/// `|sum_i m_i phi(x_i, v_i, w_i) - sum_j F_j phi(x_j, V(x_j), w_j)|`, with `V` interpolated
/// from `v_field`.
pub fn monokinetic_observable_gap(
    ens: &ParticleEnsemble,
    v_field: &ScalarField,
    f: &AdaptationMeasure,
    phi: Observable,
) -> Result<f64> {
    let g = v_field.grid;
    if g.dim != ens.dim() || f.dim != ens.dim() {
        return Err(Error::GridMismatch("observable inputs have different dimensions".into()));
    }
    let ext = ens.domain().extent;
    let m = ens.masses();
    let meso = weighted_sum(ens.len(), |i| m[i] * phi.eval(ens.position(i), ext, ens.v()[i], ens.w()[i]));
    let limit = weighted_sum(f.len(), |j| {
        let x = f.position(j);
        f.masses[j] * phi.eval(x, ext, interpolate(&g, &v_field.values, x), f.w[j])
    });
    Ok((meso - limit).abs())
}

/// Same as [`monokinetic_observable_gap`] against a macroscopic state.
pub fn monokinetic_gap_for_state(ens: &ParticleEnsemble, state: &MacroState, f: &AdaptationMeasure, phi: Observable) -> Result<f64> {
    monokinetic_observable_gap(ens, &state.v, f, phi)
}

/// The samples `(x_i, w_i, m_i)` of an ensemble, used as the initial adaptation measure.
pub fn adaptation_measure_of(ens: &ParticleEnsemble) -> AdaptationMeasure {
    AdaptationMeasure {
        dim: ens.dim(),
        positions: ens.positions().to_vec(),
        w: ens.w().to_vec(),
        masses: ens.masses().to_vec(),
    }
}

/// One row of the diagnostics time series.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mu0: f64,
    pub mu_v: [f64; 4],
    pub mu_w: [f64; 4],
    pub mu_x: [f64; 4],
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub h_eps: Option<f64>,
    pub conc2: Option<f64>,
    pub gap_sym: Option<f64>,
}

pub const CSV_HEADER: &str = "t,mu0,mu2_v,mu2_w,mu4_v,mu4_w,mu2_x,mu4_x,D1,D2,Heps,conc2,gap_sym";

/// Indices into the moment arrays for orders 0, 2, 4, 6.
const MOMENT_ORDERS: [u32; 4] = [0, 2, 4, 6];

impl DiagnosticsRecord {
    /// Moments of orders 0, 2, 4, 6 and both dissipations; the remaining entries stay empty.
    pub fn from_ensemble(ens: &ParticleEnsemble) -> Result<Self> {
        let mut r = DiagnosticsRecord { t: ens.time(), ..Default::default() };
        for (slot, k) in MOMENT_ORDERS.into_iter().enumerate() {
            let (v, w, x) = moments(ens, k)?;
            r.mu_v[slot] = v;
            r.mu_w[slot] = w;
            r.mu_x[slot] = x;
        }
        r.mu0 = r.mu_v[0];
        r.d1 = Some(dissipation(ens, 1)?);
        r.d2 = Some(dissipation(ens, 2)?);
        Ok(r)
    }

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.17e}")).unwrap_or_default();
        let mut s = String::new();
        let _ = write!(
            s,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.t, self.mu0, self.mu_v[1], self.mu_w[1], self.mu_v[2], self.mu_w[2], self.mu_x[1], self.mu_x[2]
        );
        for x in [self.d1, self.d2, self.h_eps, self.conc2, self.gap_sym] {
            s.push(',');
            s.push_str(&opt(x));
        }
        s
    }
}

/// Header plus one line per record.
pub fn records_to_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
