//! Human-editable scenario configuration (TOML). Physical quantities are in
//! field units (mD, bar, m³/D, mPa·s, 1/bar, days); well indices are
//! 1-based. Everything is converted to SI on the way in.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FormationProps, Grid3D, ScalarField3D, FORMATION_LX, FORMATION_LY, FORMATION_LZ, FORMATION_Z_TOP};
use crate::pso::{FitnessWeights, PermDomain, PsoParams, Search};
use crate::randfield::CovarianceSpec;
use crate::residual::{LossWeights, Normalization, ResidualDomain};
use crate::simulator::{Scenario, SimulatorOptions};
use crate::units;
use crate::wells::{WellControl, WellSpec, DEFAULT_WELL_RADIUS};

/// Reference well columns and rows (1-based) on the 60 × 220 grid.
pub const FORMATION_WELLS: [(usize, usize); 4] = [(11, 21), (51, 21), (11, 201), (51, 201)];

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// m
    #[serde(default = "d_lx")]
    pub lx: f64,
    #[serde(default = "d_ly")]
    pub ly: f64,
    #[serde(default = "d_lz")]
    pub lz: f64,
    #[serde(default = "d_z_top")]
    pub z_top: f64,
}

fn d_lx() -> f64 {
    FORMATION_LX
}
fn d_ly() -> f64 {
    FORMATION_LY
}
fn d_lz() -> f64 {
    FORMATION_LZ
}
fn d_z_top() -> f64 {
    FORMATION_Z_TOP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropsConfig {
    pub porosity: f64,
    /// kg/m³
    pub oil_density: f64,
    /// mPa·s
    pub viscosity_mpas: f64,
    /// 1/bar
    pub compressibility_per_bar: f64,
    pub formation_factor: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for PropsConfig {
    fn default() -> Self {
        Self {
            porosity: 0.2,
            oil_density: 849.0,
            viscosity_mpas: 3.0,
            compressibility_per_bar: 1e-4,
            formation_factor: 1.02,
            gravity: 9.81,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub dt_days: f64,
    pub n_steps: usize,
    /// Initial pressure at the formation top.
    #[serde(default = "d_p_ref")]
    pub p_ref_top_bar: f64,
}

fn d_p_ref() -> f64 {
    413.69
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceConfig {
    /// ⟨ln K⟩, ln mD
    pub mean_lnk: f64,
    pub variance: f64,
    /// m
    pub corr_x: f64,
    pub corr_y: f64,
    pub corr_z: f64,
    pub n_modes: usize,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            mean_lnk: 4.0,
            variance: 0.5,
            corr_x: 152.4,
            corr_y: 152.4,
            corr_z: 152.4,
            n_modes: 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlKind {
    /// Production rate, m³/D.
    Rate,
    /// Bottom-hole pressure at the top perforation, bar.
    Bhp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellConfig {
    pub name: String,
    /// 1-based column.
    pub i: usize,
    /// 1-based row.
    pub j: usize,
    /// 1-based top perforated layer.
    #[serde(default = "d_one")]
    pub k_top: usize,
    /// 1-based bottom perforated layer; omitted means the last layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_bot: Option<usize>,
    /// m
    #[serde(default = "d_radius")]
    pub radius_m: f64,
    pub control: ControlKind,
    pub value: f64,
}

fn d_one() -> usize {
    1
}
fn d_radius() -> f64 {
    DEFAULT_WELL_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    /// Labelled / ensemble permeability draws.
    pub field: u64,
    /// Virtual permeability draws.
    pub virtual_field: u64,
    /// Random well placement.
    pub wells: u64,
    pub noise: u64,
    pub pso: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            field: 1,
            virtual_field: 2,
            wells: 3,
            noise: 4,
            pso: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_rel: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SimulatorOptions::default();
        Self {
            tol_rel: o.tol_rel,
            max_iter: o.max_iter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// λ₁, data term.
    pub data: f64,
    /// λ₂, PDE term.
    pub pde: f64,
    /// λ₃, boundary term.
    pub bc: f64,
    pub normalization: Normalization,
    pub domain: ResidualDomain,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            data: w.data,
            pde: w.pde,
            bc: w.bc,
            normalization: Normalization::Mean,
            domain: ResidualDomain::Interior,
        }
    }
}

/// Dataset sizes and trainer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_lnk_train: usize,
    pub nt_train: usize,
    pub n_lnk_virtual: usize,
    /// Random well configurations (0 keeps the configured wells fixed).
    pub n_well_train: usize,
    pub n_well_virtual: usize,
    /// Wells per random configuration.
    pub n_random_wells: usize,
    /// Control of randomly placed wells.
    pub random_well_control: ControlKind,
    pub random_well_value: f64,
    pub n_batch: usize,
    pub lr: f64,
    pub loss_tol: f64,
    pub lr_decay_rate: f64,
    pub n_decay: usize,
    pub epoch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_lnk_train: 5,
            nt_train: 20,
            n_lnk_virtual: 200,
            n_well_train: 0,
            n_well_virtual: 0,
            n_random_wells: 4,
            random_well_control: ControlKind::Bhp,
            random_well_value: 350.0,
            n_batch: 100,
            lr: 0.001,
            loss_tol: 0.0004,
            lr_decay_rate: 0.9,
            n_decay: 60,
            epoch: 199,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsoConfig {
    pub inertia: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_gen: usize,
    pub pop_size: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    /// λ of the rate, permeability and BHP mismatch terms.
    pub w_rate: f64,
    pub w_perm: f64,
    /// Negative: 0 when every well is BHP-controlled, 10 otherwise.
    pub w_bhp: f64,
    pub perm_domain: PermDomain,
    /// Leading steps with observations.
    pub obs_steps: usize,
    /// Relative observation noise.
    pub noise: f64,
    /// Search ranges for the unknown-statistics mode.
    pub variance_range: [f64; 2],
    pub corr_range: [f64; 2],
}

impl Default for PsoConfig {
    fn default() -> Self {
        let p = PsoParams::standard(1, 0);
        let w = FitnessWeights::default();
        Self {
            inertia: p.inertia,
            c1: p.c1,
            c2: p.c2,
            max_gen: p.max_gen,
            pop_size: p.pop_size,
            v_min: p.v_min[0],
            v_max: p.v_max[0],
            x_min: p.x_min[0],
            x_max: p.x_max[0],
            w_rate: w.rate,
            w_perm: w.perm,
            w_bhp: -1.0,
            perm_domain: PermDomain::LnMd,
            obs_steps: 10,
            noise: 0.1,
            variance_range: [0.0, 1.0],
            corr_range: [130.0, 190.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UqConfig {
    pub n_real: usize,
    pub workers: usize,
    pub batch_size: usize,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            n_real: 2000,
            workers: 1,
            batch_size: 64,
        }
    }
}

/// Complete description of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub props: PropsConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub covariance: CovarianceConfig,
    #[serde(default)]
    pub wells: Vec<WellConfig>,
    #[serde(default)]
    pub seeds: SeedConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub pso: PsoConfig,
    #[serde(default)]
    pub uq: UqConfig,
}

/// Map a 1-based index on an `n_from` axis to the nearest cell of an
/// `n_to` axis with the same physical length.
pub fn rescale_index(i: usize, n_from: usize, n_to: usize) -> usize {
    let centre = (i as f64 - 0.5) / n_from as f64;
    ((centre * n_to as f64).floor() as usize + 1).clamp(1, n_to)
}

impl ScenarioConfig {
    /// Constant-rate case: four wells at 50 m³/D, 3-day steps. Well
    /// positions follow the formation coordinates rescaled to the grid.
    pub fn case1(nx: usize, ny: usize, nz: usize) -> Self {
        Self::preset(nx, ny, nz, ControlKind::Rate, 50.0, 3.0)
    }

    /// Constant-BHP case: four wells at 350 bar, 1-day steps, with its
    /// training settings.
    pub fn case2(nx: usize, ny: usize, nz: usize) -> Self {
        let mut c = Self::preset(nx, ny, nz, ControlKind::Bhp, 350.0, 1.0);
        c.loss.data = 3.0;
        c.loss.pde = 0.03;
        c.loss.bc = 0.03;
        c.training.n_lnk_train = 30;
        c.training.lr = 0.0005;
        c.training.loss_tol = 0.0008;
        c.training.epoch = 215;
        c
    }

    fn preset(nx: usize, ny: usize, nz: usize, control: ControlKind, value: f64, dt_days: f64) -> Self {
        let wells = FORMATION_WELLS
            .iter()
            .enumerate()
            .map(|(n, &(i, j))| WellConfig {
                name: format!("P{}", n + 1),
                i: rescale_index(i, 60, nx),
                j: rescale_index(j, 220, ny),
                k_top: 1,
                k_bot: None,
                radius_m: DEFAULT_WELL_RADIUS,
                control,
                value,
            })
            .collect();
        Self {
            grid: GridConfig {
                nx,
                ny,
                nz,
                lx: FORMATION_LX,
                ly: FORMATION_LY,
                lz: FORMATION_LZ,
                z_top: FORMATION_Z_TOP,
            },
            props: PropsConfig::default(),
            schedule: ScheduleConfig {
                dt_days,
                n_steps: 20,
                p_ref_top_bar: d_p_ref(),
            },
            covariance: CovarianceConfig::default(),
            wells,
            seeds: SeedConfig::default(),
            solver: SolverConfig::default(),
            loss: LossConfig::default(),
            training: TrainingConfig::default(),
            pso: PsoConfig::default(),
            uq: UqConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| cfg_err("", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            cfg_err(path, e.into_inner().message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err("", e.to_string()))
    }

    /// Semantic checks; the error path names the offending key.
    pub fn validate(&self) -> Result<()> {
        fn wrap(path: &str) -> impl Fn(Error) -> Error + '_ {
            move |e| cfg_err(path, e.to_string())
        }
        let grid = self.grid().map_err(wrap("grid"))?;
        self.props().validate().map_err(wrap("props"))?;
        let s = &self.schedule;
        if !(s.dt_days.is_finite() && s.dt_days > 0.0) {
            return Err(cfg_err("schedule.dt_days", "must be positive"));
        }
        if s.n_steps == 0 {
            return Err(cfg_err("schedule.n_steps", "must be at least 1"));
        }
        if !(s.p_ref_top_bar.is_finite() && s.p_ref_top_bar > 0.0) {
            return Err(cfg_err("schedule.p_ref_top_bar", "must be positive"));
        }
        self.covariance_spec().validate().map_err(wrap("covariance"))?;
        if self.covariance.n_modes == 0 || self.covariance.n_modes > grid.n_cells() {
            return Err(cfg_err("covariance.n_modes", format!("must be in 1..={}", grid.n_cells())));
        }
        for (n, w) in self.wells.iter().enumerate() {
            let spec = self.well_spec(w).map_err(wrap(&format!("wells[{n}]")))?;
            spec.validate(&grid).map_err(wrap(&format!("wells[{n}]")))?;
            if !w.value.is_finite() || (w.control == ControlKind::Bhp && w.value <= 0.0) {
                return Err(cfg_err(format!("wells[{n}].value"), "must be finite (and positive for BHP)"));
            }
        }
        crate::wells::well_image(&grid, &self.well_specs()?).map_err(wrap("wells"))?;
        let sv = &self.solver;
        if !(sv.tol_rel > 0.0 && sv.tol_rel < 1.0) || sv.max_iter == 0 {
            return Err(cfg_err("solver", "tol_rel must be in (0, 1) and max_iter positive"));
        }
        LossWeights::new(self.loss.data, self.loss.pde, self.loss.bc).map_err(wrap("loss"))?;
        let t = &self.training;
        if t.nt_train == 0 || t.nt_train > s.n_steps {
            return Err(cfg_err("training.nt_train", format!("must be in 1..={}", s.n_steps)));
        }
        if (t.n_well_train > 0 || t.n_well_virtual > 0) && t.n_random_wells == 0 {
            return Err(cfg_err("training.n_random_wells", "must be positive in random-well mode"));
        }
        self.pso_params(&self.search_known(), 0).validate().map_err(wrap("pso"))?;
        let p = &self.pso;
        if p.obs_steps == 0 || p.obs_steps > s.n_steps {
            return Err(cfg_err("pso.obs_steps", format!("must be in 1..={}", s.n_steps)));
        }
        if !(p.noise >= 0.0) || !(p.w_rate >= 0.0 && p.w_perm >= 0.0) {
            return Err(cfg_err("pso", "noise and weights must be non-negative"));
        }
        if !(p.variance_range[0] >= 0.0 && p.variance_range[0] < p.variance_range[1]) {
            return Err(cfg_err("pso.variance_range", "must be an increasing non-negative pair"));
        }
        if !(p.corr_range[0] > 0.0 && p.corr_range[0] < p.corr_range[1]) {
            return Err(cfg_err("pso.corr_range", "must be an increasing positive pair"));
        }
        if self.uq.n_real < 2 || self.uq.workers == 0 || self.uq.batch_size == 0 {
            return Err(cfg_err("uq", "n_real ≥ 2, workers and batch_size positive"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid3D> {
        let g = &self.grid;
        Grid3D::new(g.nx, g.ny, g.nz, g.lx, g.ly, g.lz, g.z_top)
    }

    pub fn props(&self) -> FormationProps {
        let p = &self.props;
        FormationProps {
            porosity: p.porosity,
            oil_density: p.oil_density,
            viscosity: units::mpas_to_pas(p.viscosity_mpas),
            compressibility: units::per_bar_to_per_pa(p.compressibility_per_bar),
            formation_factor: p.formation_factor,
            gravity: p.gravity,
        }
    }

    pub fn covariance_spec(&self) -> CovarianceSpec {
        let c = &self.covariance;
        CovarianceSpec {
            mean_lnk: c.mean_lnk,
            variance: c.variance,
            corr_x: c.corr_x,
            corr_y: c.corr_y,
            corr_z: c.corr_z,
        }
    }

    pub fn well_spec(&self, w: &WellConfig) -> Result<WellSpec> {
        let control = match w.control {
            ControlKind::Rate => WellControl::Rate(units::m3_per_day_to_si(w.value)),
            ControlKind::Bhp => WellControl::Bhp(units::bar_to_pa(w.value)),
        };
        let k_bot = w.k_bot.unwrap_or(self.grid.nz);
        WellSpec::from_one_based(w.name.clone(), w.i, w.j, w.k_top, k_bot, w.radius_m, control)
    }

    pub fn well_specs(&self) -> Result<Vec<WellSpec>> {
        self.wells.iter().map(|w| self.well_spec(w)).collect()
    }

    pub fn dt(&self) -> f64 {
        units::days_to_s(self.schedule.dt_days)
    }

    /// Forward problem on a given permeability field (m²).
    pub fn scenario(&self, perm: ScalarField3D) -> Result<Scenario> {
        let sc = Scenario {
            grid: self.grid()?,
            props: self.props(),
            perm,
            wells: self.well_specs()?,
            dt: self.dt(),
            n_steps: self.schedule.n_steps,
            p_ref_top: units::bar_to_pa(self.schedule.p_ref_top_bar),
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Scenario on the homogeneous mean-permeability field.
    pub fn mean_scenario(&self) -> Result<Scenario> {
        let grid = self.grid()?;
        let k = units::md_to_m2(self.covariance.mean_lnk.exp());
        self.scenario(ScalarField3D::filled(grid, k))
    }

    pub fn simulator_options(&self) -> SimulatorOptions {
        SimulatorOptions {
            tol_rel: self.solver.tol_rel,
            max_iter: self.solver.max_iter,
        }
    }

    pub fn loss_weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.loss.data, self.loss.pde, self.loss.bc)
    }

    pub fn fitness_weights(&self) -> Result<FitnessWeights> {
        let base = FitnessWeights::for_wells(&self.well_specs()?);
        Ok(FitnessWeights {
            rate: self.pso.w_rate,
            perm: self.pso.w_perm,
            bhp: if self.pso.w_bhp < 0.0 { base.bhp } else { self.pso.w_bhp },
        })
    }

    pub fn search_known(&self) -> Search {
        Search::KnownStats(self.covariance_spec())
    }

    pub fn search_unknown(&self) -> Search {
        let p = &self.pso;
        Search::UnknownStats {
            mean_lnk: self.covariance.mean_lnk,
            variance: (p.variance_range[0], p.variance_range[1]),
            corr: (p.corr_range[0], p.corr_range[1]),
        }
    }

    /// PSO settings for a search over `n_modes` coefficients plus the
    /// search's extra dimensions.
    pub fn pso_params(&self, search: &Search, seed_offset: u64) -> PsoParams {
        let p = &self.pso;
        let mut params = search.params(self.covariance.n_modes, self.seeds.pso.wrapping_add(seed_offset));
        params.inertia = p.inertia;
        params.c1 = p.c1;
        params.c2 = p.c2;
        params.max_gen = p.max_gen;
        params.pop_size = p.pop_size;
        for d in 0..self.covariance.n_modes {
            params.x_min[d] = p.x_min;
            params.x_max[d] = p.x_max;
            params.v_min[d] = p.v_min;
            params.v_max[d] = p.v_max;
        }
        params
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn formation_case_wells() {
        let c = ScenarioConfig::case1(60, 220, 10);
        let coords: Vec<(usize, usize)> = c.wells.iter().map(|w| (w.i, w.j)).collect();
        assert_eq!(coords, FORMATION_WELLS.to_vec());
        let specs = c.well_specs().unwrap();
        assert_eq!((specs[0].i, specs[0].j, specs[0].k_top, specs[0].k_bot), (10, 20, 0, 9));
        assert!(c.validate().is_ok());
        let sc = c.mean_scenario().unwrap();
        assert_relative_eq!(sc.dt, 3.0 * 86400.0);
        assert_relative_eq!(sc.p_ref_top, 4.1369e7, max_relative = 1e-12);
        match sc.wells[0].control {
            WellControl::Rate(q) => assert_relative_eq!(q, 50.0 / 86400.0, max_relative = 1e-12),
            _ => panic!(),
        }
        let c2 = ScenarioConfig::case2(60, 220, 10);
        assert_eq!(c2.schedule.dt_days, 1.0);
        assert_eq!((c2.loss.data, c2.loss.pde, c2.loss.bc), (3.0, 0.03, 0.03));
        assert_eq!(c2.fitness_weights().unwrap().bhp, 0.0);
        assert_eq!(c.fitness_weights().unwrap().bhp, 10.0);
    }

    #[test]
    fn rescaled_wells_on_desk_grid() {
        assert_eq!(rescale_index(11, 60, 60), 11);
        assert_eq!(rescale_index(201, 220, 220), 201);
        let c = ScenarioConfig::case2(20, 20, 5);
        let coords: Vec<(usize, usize)> = c.wells.iter().map(|w| (w.i, w.j)).collect();
        assert_eq!(coords, vec![(4, 2), (17, 2), (4, 19), (17, 19)]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn props_convert_to_si() {
        let p = ScenarioConfig::case1(4, 4, 2).props();
        assert_eq!(p, FormationProps::default());
    }

    #[test]
    fn toml_round_trip_is_fixed_point() {
        for c in [ScenarioConfig::case1(60, 220, 10), ScenarioConfig::case2(20, 20, 5)] {
            let text = c.to_toml_string().unwrap();
            let parsed = ScenarioConfig::from_toml_str(&text).unwrap();
            assert_eq!(parsed, c);
            assert_eq!(parsed.to_toml_string().unwrap(), text);
        }
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let text = r#"
            [grid]
            nx = 6
            ny = 22
            nz = 2

            [schedule]
            dt_days = 1.0
            n_steps = 20

            [[wells]]
            name = "W"
            i = 2
            j = 3
            control = "bhp"
            value = 350.0
        "#;
        let c = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(c.grid.lx, FORMATION_LX);
        assert_eq!(c.covariance.n_modes, 13);
        assert_eq!(c.schedule.p_ref_top_bar, 413.69);
        assert_eq!(c.well_specs().unwrap()[0].k_bot, 1);
    }

    #[test]
    fn errors_name_the_key() {
        let base = ScenarioConfig::case1(10, 10, 2).to_toml_string().unwrap();
        let unknown = base.replace("[grid]", "[grid]\nbogus = 1");
        match ScenarioConfig::from_toml_str(&unknown) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "grid.bogus");
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let mut c = ScenarioConfig::case1(10, 10, 2);
        c.wells[2].i = 11;
        match ScenarioConfig::from_toml_str(&c.to_toml_string().unwrap()) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "wells[2]"),
            other => panic!("{other:?}"),
        }
        let bad_type = base.replace("nx = 10", "nx = \"ten\"");
        match ScenarioConfig::from_toml_str(&bad_type) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "grid.nx"),
            other => panic!("{other:?}"),
        }
        let mut c = ScenarioConfig::case1(10, 10, 2);
        c.schedule.dt_days = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config { path, .. }) if path == "schedule.dt_days"));
        let mut c = ScenarioConfig::case1(10, 10, 2);
        c.wells[1].i = c.wells[0].i;
        c.wells[1].j = c.wells[0].j;
        assert!(matches!(c.validate(), Err(Error::Config { path, .. }) if path == "wells"));
    }
}
