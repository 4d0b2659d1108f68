//! JSON run configuration.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Boundary, Domain, GridSpec};
use crate::model::{FhnParams, KernelConfig, KernelSpec};
use crate::particle::interaction::BackendChoice;
use crate::particle::{EnsembleSetup, MesoInitConfig};
use crate::profiles::{DensityProfile, FieldProfile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub extent: f64,
    /// Cells per axis of the extraction grid for single runs.
    pub cells: usize,
    pub boundary: Boundary,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { extent: 2.0 * PI, cells: 64, boundary: Boundary::Periodic }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MesoSection {
    pub eps: f64,
    /// Fixed particle count; the sweep's N rule is used when absent.
    pub n_particles: Option<usize>,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub r0: f64,
    pub seed: u64,
    pub rho0: DensityProfile,
    pub v0: FieldProfile,
    pub w0: FieldProfile,
    pub backend: BackendChoice,
    pub stratified: bool,
    /// Diagnostics every `stride` steps.
    pub stride: usize,
}

impl Default for MesoSection {
    fn default() -> Self {
        let init = MesoInitConfig::new(1, 0);
        Self {
            eps: 0.2,
            n_particles: None,
            dt: 0.01,
            t_end: 2.0,
            r0: init.r0,
            seed: 0,
            rho0: init.rho0,
            v0: init.v0,
            w0: init.w0,
            backend: BackendChoice::Auto,
            stratified: true,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroSection {
    pub delta: f64,
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Cells per axis of the reference grid.
    pub cells: usize,
    pub nonlinearity: bool,
}

impl Default for MacroSection {
    fn default() -> Self {
        Self { delta: 0.0, dt: 0.01, t_end: 2.0, cells: 2048, nonlinearity: true }
    }
}

/// `N(eps) = min(cap, round(n0 (eps_ref / eps)^q))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NRule {
    pub n0: f64,
    pub eps_ref: f64,
    pub q: f64,
    pub cap: usize,
}

impl Default for NRule {
    fn default() -> Self {
        Self { n0: 4000.0, eps_ref: 0.4, q: 2.0, cap: 250_000 }
    }
}

impl NRule {
    pub fn count(&self, eps: f64) -> usize {
        let n = (self.n0 * (self.eps_ref / eps).powf(self.q)).round();
        (n as usize).clamp(1, self.cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub eps_list: Vec<f64>,
    pub n_rule: NRule,
    /// Extraction cell width is about `h_ratio * eps`, rounded to a power-of-two cell count.
    pub h_ratio: f64,
    /// Seeds per eps; defaults to `meso.seed + index`.
    pub seeds: Option<Vec<u64>>,
    /// Regularizations for the continuation study.
    pub delta_list: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            eps_list: vec![0.4, 0.2, 0.1, 0.05],
            n_rule: NRule::default(),
            h_ratio: 0.5,
            seeds: None,
            delta_list: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: FhnParams,
    pub kernel: KernelConfig,
    pub grid: GridSection,
    pub meso: MesoSection,
    #[serde(rename = "macro")]
    pub macro_: MacroSection,
    pub sweep: SweepSection,
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {x}")))
    }
}

impl Config {
    /// Reads and validates a config file; unreadable files are config errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A zero-flux preset with a compactly supported density, which makes the
    /// diffusion degenerate and needs the regularization `delta > 0`.
    pub fn degenerate_preset() -> Self {
        let mut c = Config::default();
        c.grid.boundary = Boundary::ZeroFlux;
        c.meso.rho0 = DensityProfile::CompactBump { center: PI, radius: 2.5 };
        c.macro_.delta = 1e-2;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.kernel_spec()?;
        positive("grid.extent", self.grid.extent)?;
        self.extraction_grid(self.grid.cells)?;
        let m = &self.meso;
        positive("meso.eps", m.eps)?;
        positive("meso.dt", m.dt)?;
        if !(m.t_end >= 0.0 && m.t_end.is_finite()) {
            return Err(Error::Config(format!("meso.T must be >= 0, got {}", m.t_end)));
        }
        if !(m.r0 >= 0.0 && m.r0.is_finite()) {
            return Err(Error::Config(format!("meso.r0 must be >= 0, got {}", m.r0)));
        }
        if m.n_particles == Some(0) {
            return Err(Error::Config("meso.n_particles must be positive".into()));
        }
        if m.stride == 0 {
            return Err(Error::Config("meso.stride must be positive".into()));
        }
        m.v0.validate().and(m.w0.validate()).map_err(|e| Error::Config(e.to_string()))?;
        m.rho0.resolve(self.domain()?).map_err(|e| Error::Config(e.to_string()))?;
        let mc = &self.macro_;
        if !(mc.delta >= 0.0 && mc.delta.is_finite()) {
            return Err(Error::Config(format!("macro.delta must be >= 0, got {}", mc.delta)));
        }
        positive("macro.dt", mc.dt)?;
        if !(mc.t_end >= 0.0 && mc.t_end.is_finite()) {
            return Err(Error::Config(format!("macro.T must be >= 0, got {}", mc.t_end)));
        }
        self.extraction_grid(mc.cells)?;
        let s = &self.sweep;
        if s.eps_list.is_empty() {
            return Err(Error::Config("sweep.eps_list is empty".into()));
        }
        for &e in &s.eps_list {
            positive("sweep.eps_list entry", e)?;
        }
        if s.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("sweep.eps_list must be strictly decreasing".into()));
        }
        positive("sweep.n_rule.n0", s.n_rule.n0)?;
        positive("sweep.n_rule.eps_ref", s.n_rule.eps_ref)?;
        if !(s.n_rule.q >= 0.0) || s.n_rule.cap == 0 {
            return Err(Error::Config("sweep.n_rule needs q >= 0 and cap > 0".into()));
        }
        positive("sweep.h_ratio", s.h_ratio)?;
        if let Some(seeds) = &s.seeds {
            if seeds.len() != s.eps_list.len() {
                return Err(Error::Config("sweep.seeds must have one entry per eps".into()));
            }
        }
        if s.delta_list.windows(2).any(|w| !(w[1] < w[0])) || s.delta_list.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Config("sweep.delta_list must be nonnegative and strictly decreasing".into()));
        }
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::try_from(self.kernel).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim
    }

    pub fn domain(&self) -> Result<Domain> {
        Domain::new(self.dim(), self.grid.extent, self.grid.boundary).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn extraction_grid(&self, cells: usize) -> Result<GridSpec> {
        GridSpec::new(self.dim(), self.grid.extent, cells, self.grid.boundary).map_err(|e| Error::Config(e.to_string()))
    }

    /// Power-of-two cell count with width closest to `h_ratio * eps` from below.
    pub fn cells_for(&self, eps: f64) -> usize {
        let target = self.grid.extent / (self.sweep.h_ratio * eps);
        let mut cells = crate::grid::MIN_CELLS;
        while (cells as f64) < target * (1.0 - 1e-9) {
            cells *= 2;
        }
        cells
    }

    pub fn setup(&self, eps: f64) -> Result<EnsembleSetup> {
        Ok(EnsembleSetup {
            domain: self.domain()?,
            eps,
            kernel: self.kernel_spec()?,
            params: self.model,
            backend: self.meso.backend,
        })
    }

    pub fn init(&self, n: usize, seed: u64) -> MesoInitConfig {
        MesoInitConfig {
            rho0: self.meso.rho0,
            v0: self.meso.v0,
            w0: self.meso.w0,
            r0: self.meso.r0,
            n_particles: n,
            seed,
            stratified: self.meso.stratified,
        }
    }

    pub fn seed_for(&self, index: usize) -> u64 {
        match &self.sweep.seeds {
            Some(s) => s[index],
            None => self.meso.seed.wrapping_add(index as u64),
        }
    }
}
