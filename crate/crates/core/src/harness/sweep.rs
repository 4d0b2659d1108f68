//! Single runs and the eps-sweep pairing particle runs with the grid limit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::config::Config;
use super::fit::{fit_rate, RateFit};
use super::output::{loglog_svg, write_json, write_table};
use crate::diagnostics::{
    adaptation_measure_of, concentration_second_moment, extract_macro_fields, modulated_energy_fields,
    monokinetic_observable_gap, records_to_csv, symmetrization_gap, DiagnosticsRecord, Observable,
};
use crate::error::{Error, Result};
use crate::grid::{GridSpec, ScalarField};
use crate::macro_solver::{delta_continuation, solve, DeltaContinuation, FTransport, MacroOptions, MacroState, MacroTrajectory};
use crate::particle::{sample_initial, ParticleEnsemble, StepOptions};

/// Grid initial state `(rho0, V0, W0)` of the limit system.
pub fn macro_initial(cfg: &Config, grid: GridSpec, delta: f64) -> Result<MacroState> {
    let density = cfg.meso.rho0.resolve(grid.domain())?;
    let rho0 = density.on_grid(grid)?;
    let v0 = cfg.meso.v0.on_grid(grid);
    let w0 = cfg.meso.w0.on_grid(grid);
    MacroState::new(rho0, v0, w0, delta, cfg.kernel_spec()?.diffusivity(), cfg.model)
}

pub fn macro_options(cfg: &Config) -> MacroOptions {
    MacroOptions { nonlinearity: cfg.macro_.nonlinearity, ..MacroOptions::default() }
}

/// Solves the limit system on `cells` cells per axis with the macro section's settings.
pub fn run_macro(cfg: &Config, cells: usize) -> Result<MacroTrajectory> {
    let grid = cfg.extraction_grid(cells)?;
    let init = macro_initial(cfg, grid, cfg.macro_.delta)?;
    solve(&init, cfg.macro_.t_end, cfg.macro_.dt, &macro_options(cfg))
}

/// Result of a single particle run.
#[derive(Debug, Clone)]
pub struct MesoRun {
    pub records: Vec<DiagnosticsRecord>,
    pub ensemble: ParticleEnsemble,
}

/// Samples and integrates one ensemble, recording moments, dissipation,
/// concentration on the configured grid and the symmetrization gap.
pub fn run_meso(cfg: &Config) -> Result<MesoRun> {
    let eps = cfg.meso.eps;
    let n = cfg.meso.n_particles.unwrap_or_else(|| cfg.sweep.n_rule.count(eps));
    let mut ens = sample_initial(&cfg.init(n, cfg.meso.seed), &cfg.setup(eps)?)?;
    let grid = cfg.extraction_grid(cfg.grid.cells)?;
    let records = ens.run(cfg.meso.t_end, cfg.meso.dt, cfg.meso.stride, &StepOptions::default(), |e| {
        let mut r = DiagnosticsRecord::from_ensemble(e)?;
        r.conc2 = Some(concentration_second_moment(e, &grid)?);
        r.gap_sym = Some(symmetrization_gap(e, 1)?);
        Ok(r)
    })?;
    Ok(MesoRun { records, ensemble: ens })
}

/// Cell averages of a fine field on a grid whose cells nest in it.
pub fn restrict(fine: &[f64], fine_grid: &GridSpec, coarse: &GridSpec) -> Result<Vec<f64>> {
    if fine_grid.dim != coarse.dim || fine_grid.cells % coarse.cells != 0 || fine_grid.extent != coarse.extent {
        return Err(Error::GridMismatch(format!(
            "{} cells do not nest in {} cells",
            coarse.cells, fine_grid.cells
        )));
    }
    let r = fine_grid.cells / coarse.cells;
    let mut out = vec![0.0; coarse.len()];
    for (i, v) in fine.iter().enumerate() {
        let m = fine_grid.multi_index(i);
        let c = coarse.linear_index(&[m[0] / r, m[1] / r, m[2] / r]);
        out[c] += v;
    }
    let k = (r as f64).powi(coarse.dim as i32);
    out.iter_mut().for_each(|x| *x /= k);
    Ok(out)
}

pub const GAP_OBSERVABLES: [Observable; 4] = [Observable::VBump, Observable::V2Bump, Observable::XvBump, Observable::W];

/// Metrics of one eps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsResult {
    pub eps: f64,
    pub seed: u64,
    pub n_particles: usize,
    pub cells: usize,
    pub backend: String,
    /// `sup_t H_eps` against the reference restricted to the extraction grid.
    pub sup_h_eps: f64,
    /// `sup_t H_eps` against a reference solved on the extraction grid itself.
    pub sup_h_eps_matched: f64,
    pub d1_integral: f64,
    pub conc_integral: f64,
    /// `sup_t` of each monokinetic observable gap, keyed by observable id.
    pub gaps: BTreeMap<String, f64>,
    /// Realized `|rho_eps(0) - rho0|_2 / eps^2` on the extraction grid.
    pub rho_gap_over_eps2: f64,
    pub max_abs_sym_gap: f64,
}

impl EpsResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "sup_h_eps" => Some(self.sup_h_eps),
            "sup_h_eps_matched" => Some(self.sup_h_eps_matched),
            "d1_integral" => Some(self.d1_integral),
            "conc_integral" => Some(self.conc_integral),
            _ => name.strip_prefix("gap_").and_then(|id| self.gaps.get(id).copied()),
        }
    }
}

pub fn metric_names() -> Vec<String> {
    let mut v: Vec<String> =
        ["sup_h_eps", "sup_h_eps_matched", "d1_integral", "conc_integral"].iter().map(|s| s.to_string()).collect();
    v.extend(GAP_OBSERVABLES.iter().map(|o| format!("gap_{}", o.id())));
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct ReferenceSummary {
    pub cells: usize,
    pub flagged_monitor_steps: usize,
    pub sup_h2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub runs: Vec<EpsResult>,
    pub fits: BTreeMap<String, RateFit>,
    /// Whether each metric strictly decreases along the eps list.
    pub decreasing: BTreeMap<String, bool>,
    /// Metrics that fail to decrease somewhere.
    pub flagged: Vec<String>,
    pub reference: ReferenceSummary,
}

fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2).zip(y.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum()
}

/// Per-step metrics besides the fixed diagnostics columns.
const EXTRA_HEADER: [&str; 7] = ["t", "Heps_matched", "gap_v_bump", "gap_v2_bump", "gap_xv_bump", "gap_w", "v_var_max"];

fn run_one(
    cfg: &Config,
    index: usize,
    eps: f64,
    reference: &MacroTrajectory,
    out: Option<&Path>,
) -> Result<EpsResult> {
    let seed = cfg.seed_for(index);
    let n = cfg.meso.n_particles.unwrap_or_else(|| cfg.sweep.n_rule.count(eps));
    let cells = cfg.cells_for(eps);
    let grid = cfg.extraction_grid(cells)?;
    let mut ens = sample_initial(&cfg.init(n, seed), &cfg.setup(eps)?)?;

    let matched = solve(&macro_initial(cfg, grid, cfg.macro_.delta)?, cfg.meso.t_end, cfg.meso.dt, &macro_options(cfg))?;
    let fine = reference.grid;
    let restricted: Vec<(Vec<f64>, Vec<f64>)> = reference
        .snapshots
        .iter()
        .map(|s| Ok((restrict(&s.v, &fine, &grid)?, restrict(&s.w, &fine, &grid)?)))
        .collect::<Result<_>>()?;
    if reference.snapshots.len() != matched.snapshots.len() {
        return Err(Error::HistoryGap("reference and particle runs use different step counts".into()));
    }

    let rho0 = cfg.meso.rho0.resolve(grid.domain())?.on_grid(grid)?;
    let f0 = extract_macro_fields(&ens, &grid)?;
    let diff = f0.rho_eps.zip_map(&rho0, |a, b| a - b)?;
    let rho_gap = diff.l2_norm() / (eps * eps);

    let mut transport = FTransport::new(adaptation_measure_of(&ens), fine, cfg.model, &reference.snapshots[0].v, 0.0)?;
    let mut extra: Vec<Vec<Option<f64>>> = Vec::new();
    let records = ens.run(cfg.meso.t_end, cfg.meso.dt, 1, &StepOptions::default(), |e| {
        let k = e.steps();
        let snap = &reference.snapshots[k];
        if k > 0 {
            transport.advance(&snap.v, snap.t)?;
        }
        let fields = extract_macro_fields(e, &grid)?;
        let (rv, rw) = &restricted[k];
        let h = modulated_energy_fields(&fields, &ScalarField { grid, values: rv.clone() }, &ScalarField { grid, values: rw.clone() })?;
        let ms = &matched.snapshots[k];
        let h_matched = modulated_energy_fields(
            &fields,
            &ScalarField { grid, values: ms.v.clone() },
            &ScalarField { grid, values: ms.w.clone() },
        )?;
        let v_fine = ScalarField { grid: fine, values: snap.v.clone() };
        let mut row = vec![Some(e.time()), Some(h_matched)];
        for phi in GAP_OBSERVABLES {
            row.push(Some(monokinetic_observable_gap(e, &v_fine, transport.measure(), phi)?));
        }
        row.push(Some(fields.v_var.max_abs()));
        extra.push(row);
        let mut r = DiagnosticsRecord::from_ensemble(e)?;
        r.h_eps = Some(h);
        r.conc2 = Some(concentration_second_moment(e, &grid)?);
        r.gap_sym = Some(symmetrization_gap(e, 1)?);
        Ok(r)
    })?;

    if let Some(dir) = out {
        std::fs::write(dir.join(format!("diagnostics_eps{index}.csv")), records_to_csv(&records))?;
        write_table(&dir.join(format!("metrics_eps{index}.csv")), &EXTRA_HEADER, &extra)?;
    }

    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let col = |f: &dyn Fn(&DiagnosticsRecord) -> Option<f64>| -> Vec<f64> { records.iter().map(|r| f(r).unwrap_or(0.0)).collect() };
    let sup = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let mut gaps = BTreeMap::new();
    for (j, phi) in GAP_OBSERVABLES.iter().enumerate() {
        let series: Vec<f64> = extra.iter().map(|r| r[2 + j].unwrap_or(0.0)).collect();
        gaps.insert(phi.id().to_string(), sup(&series));
    }
    let h_matched: Vec<f64> = extra.iter().map(|r| r[1].unwrap_or(0.0)).collect();
    Ok(EpsResult {
        eps,
        seed,
        n_particles: n,
        cells,
        backend: ens.interaction().backend_name().to_string(),
        sup_h_eps: sup(&col(&|r| r.h_eps)),
        sup_h_eps_matched: sup(&h_matched),
        d1_integral: trapezoid(&t, &col(&|r| r.d1)),
        conc_integral: trapezoid(&t, &col(&|r| r.conc2)),
        gaps,
        rho_gap_over_eps2: rho_gap,
        max_abs_sym_gap: sup(&col(&|r| r.gap_sym)),
    })
}

/// Fits and monotonicity flags for every metric over the completed runs.
pub fn summarize(runs: &[EpsResult]) -> (BTreeMap<String, RateFit>, BTreeMap<String, bool>, Vec<String>) {
    let mut fits = BTreeMap::new();
    let mut decreasing = BTreeMap::new();
    let mut flagged = Vec::new();
    for name in metric_names() {
        let pairs: Vec<(f64, f64)> = runs.iter().filter_map(|r| r.metric(&name).map(|m| (r.eps, m))).collect();
        if pairs.len() >= 2 {
            if let Ok(f) = fit_rate(&pairs) {
                fits.insert(name.clone(), f);
            }
        }
        let dec = pairs.windows(2).all(|w| w[1].1 < w[0].1);
        if !dec {
            flagged.push(name.clone());
        }
        decreasing.insert(name, dec);
    }
    (fits, decreasing, flagged)
}

/// Runs every eps in the list against one reference solve of the limit system.
/// Per-eps CSVs are written as soon as each run finishes.
pub fn run_convergence_sweep(cfg: &Config, out: Option<&Path>) -> Result<SweepReport> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let horizon = (cfg.meso.t_end, cfg.meso.dt);
    let reference = solve(
        &macro_initial(cfg, cfg.extraction_grid(cfg.macro_.cells)?, cfg.macro_.delta)?,
        horizon.0,
        horizon.1,
        &macro_options(cfg),
    )?;
    let mut runs = Vec::new();
    for (i, &eps) in cfg.sweep.eps_list.iter().enumerate() {
        log::info!("sweep: eps = {eps}");
        let r = run_one(cfg, i, eps, &reference, out).map_err(|e| Error::Sweep { eps, source: Box::new(e) })?;
        runs.push(r);
    }
    let (fits, decreasing, flagged) = summarize(&runs);
    let report = SweepReport {
        runs,
        fits,
        decreasing,
        flagged,
        reference: ReferenceSummary {
            cells: cfg.macro_.cells,
            flagged_monitor_steps: reference.flagged_steps(),
            sup_h2: reference.sup_h2(),
        },
    };
    if let Some(dir) = out {
        write_sweep_outputs(dir, &report)?;
    }
    Ok(report)
}

pub fn sweep_table(report: &SweepReport) -> (Vec<String>, Vec<Vec<Option<f64>>>) {
    let mut header = vec!["eps".to_string(), "n_particles".to_string(), "cells".to_string()];
    header.extend(metric_names());
    header.push("rho_gap_over_eps2".into());
    let rows = report
        .runs
        .iter()
        .map(|r| {
            let mut row = vec![Some(r.eps), Some(r.n_particles as f64), Some(r.cells as f64)];
            row.extend(metric_names().iter().map(|m| r.metric(m)));
            row.push(Some(r.rho_gap_over_eps2));
            row
        })
        .collect();
    (header, rows)
}

fn write_sweep_outputs(dir: &Path, report: &SweepReport) -> Result<()> {
    let (header, rows) = sweep_table(report);
    let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_table(&dir.join("sweep.csv"), &h, &rows)?;
    write_json(&dir.join("summary.json"), report)?;
    for name in metric_names() {
        let pts: Vec<(f64, f64)> = report.runs.iter().filter_map(|r| r.metric(&name).map(|m| (r.eps, m))).collect();
        std::fs::write(dir.join(format!("{name}.svg")), loglog_svg(&name, &[(name.as_str(), pts)]))?;
    }
    Ok(())
}

/// The regularization study on the reference grid.
pub fn run_delta_study(cfg: &Config) -> Result<DeltaContinuation> {
    let grid = cfg.extraction_grid(cfg.macro_.cells)?;
    let init = macro_initial(cfg, grid, 0.0)?;
    delta_continuation(&init, cfg.macro_.t_end, cfg.macro_.dt, &cfg.sweep.delta_list, &macro_options(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restriction_averages_children() {
        let f = GridSpec::periodic(1, 1.0, 16).unwrap();
        let c = GridSpec::periodic(1, 1.0, 8).unwrap();
        let v: Vec<f64> = (0..16).map(|i| i as f64).collect();
        assert_eq!(restrict(&v, &f, &c).unwrap(), (0..8).map(|i| 2.0 * i as f64 + 0.5).collect::<Vec<_>>());
        let bad = GridSpec::periodic(1, 1.0, 12).unwrap();
        assert!(restrict(&v, &f, &bad).is_err());
    }

    #[test]
    fn summary_flags_non_decreasing_metrics() {
        let mk = |eps: f64, h: f64| EpsResult {
            eps,
            seed: 0,
            n_particles: 1,
            cells: 8,
            backend: "all_pairs".into(),
            sup_h_eps: h,
            sup_h_eps_matched: h,
            d1_integral: eps * eps,
            conc_integral: eps,
            gaps: GAP_OBSERVABLES.iter().map(|o| (o.id().to_string(), eps)).collect(),
            rho_gap_over_eps2: 0.0,
            max_abs_sym_gap: 0.0,
        };
        let runs = vec![mk(0.4, 1.0), mk(0.2, 2.0), mk(0.1, 0.5)];
        let (fits, dec, flagged) = summarize(&runs);
        assert!((fits["d1_integral"].slope - 2.0).abs() < 1e-12);
        assert!(!dec["sup_h_eps"] && dec["d1_integral"]);
        assert!(flagged.contains(&"sup_h_eps".to_string()));
        let (fits, _, _) = summarize(&runs[..1]);
        assert!(fits.is_empty());
    }

    #[test]
    fn tiny_sweep_runs() {
        let mut cfg = Config::default();
        cfg.meso.t_end = 0.05;
        cfg.sweep.eps_list = vec![0.4, 0.2];
        cfg.sweep.n_rule.n0 = 200.0;
        cfg.macro_.cells = 256;
        let rep = run_convergence_sweep(&cfg, None).unwrap();
        assert_eq!(rep.runs.len(), 2);
        assert!(rep.runs.iter().all(|r| r.sup_h_eps.is_finite() && r.max_abs_sym_gap < 1e-8));
        assert!(rep.fits.contains_key("sup_h_eps"));
    }
}
