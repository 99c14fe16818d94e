//! Fully implicit single-phase simulator.
//!
//! Each step solves the backward-Euler discretization of
//! `∇·(k/(μB_o) ∇Φ) + q = (φC_o/B_o) ∂Φ/∂t` on the cell-centred grid, with
//! production entering as a negative source. All coefficients are constant
//! in time, so a step is one SPD solve.

mod solver;
mod stencil;

pub use solver::{solve_linear, LinearOperator, SolveOptions, SolveOutcome};
pub use stencil::{transmissibility, StencilMatrix, Transmissibilities};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{init_hydrostatic, potential_from_pressure, pressure_from_potential, FormationProps, Grid3D, ScalarField3D};
use crate::wells::{prepare_wells, well_step, PreparedWell, WellSolution, WellSpec};

/// A forward problem: geometry, properties, permeability (m²), wells and
/// schedule.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: Grid3D,
    pub props: FormationProps,
    pub perm: ScalarField3D,
    pub wells: Vec<WellSpec>,
    /// Step length, s.
    pub dt: f64,
    pub n_steps: usize,
    /// Pressure at the formation top at t = 0, Pa.
    pub p_ref_top: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.props.validate()?;
        if self.perm.grid() != &self.grid {
            return Err(Error::InvalidScenario("permeability field is on a different grid".into()));
        }
        if self.perm.values().iter().any(|&k| !(k.is_finite() && k > 0.0)) {
            return Err(Error::InvalidScenario("permeability must be positive and finite everywhere".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidScenario(format!("dt must be positive, got {}", self.dt)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidScenario("n_steps must be at least 1".into()));
        }
        if !(self.p_ref_top.is_finite() && self.p_ref_top > 0.0) {
            return Err(Error::InvalidScenario("reference pressure must be positive".into()));
        }
        for w in &self.wells {
            w.validate(&self.grid)?;
        }
        Ok(())
    }

    /// Total simulated time, s.
    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    /// Initial (uniform) potential.
    pub fn initial_potential(&self) -> ScalarField3D {
        ScalarField3D::filled(self.grid, self.p_ref_top)
    }

    pub fn with_perm(&self, perm: ScalarField3D) -> Self {
        Self { perm, ..self.clone() }
    }
}

/// Per-step system pieces that do not change in time.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub grid: Grid3D,
    pub props: FormationProps,
    pub dt: f64,
    pub trans: Transmissibilities,
    /// φ·C_o·V / (B_o·Δt), m³/(Pa·s), identical for every cell.
    pub accumulation: f64,
    pub wells: Vec<PreparedWell>,
}

impl Discretization {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let grid = scenario.grid;
        let props = scenario.props;
        let trans = Transmissibilities::new(&grid, &props, &scenario.perm)?;
        let wells = prepare_wells(&grid, &props, &scenario.perm, &scenario.wells)?;
        Ok(Self {
            grid,
            props,
            dt: scenario.dt,
            trans,
            accumulation: props.storage() * grid.cell_volume() / scenario.dt,
            wells,
        })
    }

    /// System `A·Φⁿ⁺¹ = b` for one step from `Φⁿ`.
    ///
    /// Rate wells contribute a fixed sink `−q_i` to `b`; BHP wells add `WI` to
    /// the diagonal and `WI·Φ_bhp` to `b`, with `Φ_bhp` the wellbore pressure
    /// expressed as a potential.
    pub fn assemble(&self, phi_n: &[f64]) -> Result<(StencilMatrix, Vec<f64>)> {
        let n = self.grid.n_cells();
        if phi_n.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                actual: phi_n.len(),
            });
        }
        if phi_n.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential"));
        }
        let mut excess = vec![self.accumulation; n];
        let mut b: Vec<f64> = phi_n.iter().map(|p| self.accumulation * p).collect();
        for w in &self.wells {
            match (&w.allocated_rates, w.bhp_potential) {
                (Some(rates), _) => {
                    for (perf, q) in w.perforations.iter().zip(rates) {
                        b[perf.cell] -= q;
                    }
                }
                (None, Some(target)) => {
                    for perf in &w.perforations {
                        excess[perf.cell] += perf.well_index;
                        b[perf.cell] += perf.well_index * target;
                    }
                }
                (None, None) => unreachable!(),
            }
        }
        Ok((StencilMatrix::new(self.grid, excess, self.trans.clone())?, b))
    }

    /// Weights turning a volumetric equation residual (m³/s) into the
    /// dimensionless residual used by the physics loss: potential scaled by
    /// `potential_scale`, time by `time_scale`.
    pub fn scaled_residual_weight(&self, potential_scale: f64, time_scale: f64) -> f64 {
        time_scale / (self.grid.cell_volume() * self.props.storage() * potential_scale)
    }
}

/// Assemble the step system for a scenario (convenience wrapper around
/// [`Discretization::assemble`]).
pub fn assemble_step(scenario: &Scenario, phi_n: &[f64]) -> Result<(StencilMatrix, Vec<f64>)> {
    Discretization::new(scenario)?.assemble(phi_n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub iterations: usize,
    pub relative_residual: f64,
    /// Largest dimensionless equation residual accepted by the solver.
    pub scaled_residual: f64,
}

/// Result of a forward run. Snapshot 0 is the initial state.
#[derive(Debug, Clone)]
pub struct Solution {
    pub potentials: Vec<ScalarField3D>,
    pub pressures: Vec<ScalarField3D>,
    pub wells: Vec<WellSolution>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub dt: f64,
}

impl Solution {
    pub fn n_steps(&self) -> usize {
        self.potentials.len() - 1
    }

    /// Total production rate of all wells per step (m³/s).
    pub fn field_rates(&self) -> Vec<f64> {
        (0..self.n_steps())
            .map(|s| self.wells.iter().map(|w| w.steps[s].total_rate).sum())
            .collect()
    }
}

/// Per-step storage and production volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassBalanceStep {
    /// Decrease of stored volume over the step, m³.
    pub storage_release: f64,
    /// Volume produced by all wells over the step, m³.
    pub production: f64,
}

/// Step-wise volume balance of a solution. With no-flow boundaries the
/// storage released equals the volume produced.
pub fn mass_balance(scenario: &Scenario, solution: &Solution) -> Vec<MassBalanceStep> {
    let storage = scenario.props.storage() * scenario.grid.cell_volume();
    solution
        .potentials
        .windows(2)
        .zip(solution.field_rates())
        .map(|(pair, q)| {
            let released: f64 = pair[0]
                .values()
                .iter()
                .zip(pair[1].values())
                .map(|(old, new)| storage * (old - new))
                .sum();
            MassBalanceStep {
                storage_release: released,
                production: q * scenario.dt,
            }
        })
        .collect()
}

/// Solver settings for [`run_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatorOptions {
    /// Relative tolerance of every linear solve. The dimensionless equation
    /// residual (potential scaled by the reference pressure, time by the
    /// horizon) is also held below this value in every cell.
    pub tol_rel: f64,
    pub max_iter: usize,
}

impl Default for SimulatorOptions {
    fn default() -> Self {
        Self {
            tol_rel: 1e-10,
            max_iter: 20_000,
        }
    }
}

/// Run with default solver settings.
pub fn run(scenario: &Scenario) -> Result<Solution> {
    run_with(scenario, &SimulatorOptions::default())
}

pub fn run_with(scenario: &Scenario, opts: &SimulatorOptions) -> Result<Solution> {
    let disc = Discretization::new(scenario)?;
    let grid = scenario.grid;
    let n = grid.n_cells();
    let weight = disc.scaled_residual_weight(scenario.p_ref_top, scenario.horizon());
    let solve_opts = SolveOptions {
        tol_rel: opts.tol_rel,
        max_iter: opts.max_iter,
        residual_weights: Some(vec![weight; n]),
    };

    let p0 = init_hydrostatic(&grid, &scenario.props, scenario.p_ref_top)?;
    let phi0 = potential_from_pressure(&p0, &scenario.props);
    let mut potentials = Vec::with_capacity(scenario.n_steps + 1);
    let mut pressures = Vec::with_capacity(scenario.n_steps + 1);
    let mut diagnostics = Vec::with_capacity(scenario.n_steps);
    let mut well_series: Vec<WellSolution> = disc
        .wells
        .iter()
        .map(|w| WellSolution {
            name: w.spec.name.clone(),
            steps: Vec::with_capacity(scenario.n_steps),
        })
        .collect();

    let mut phi = phi0.values().to_vec();
    potentials.push(phi0);
    pressures.push(p0);
    let mut correction = vec![0.0; n];
    for _ in 0..scenario.n_steps {
        let (a, b) = disc.assemble(&phi)?;
        // solve for the increment: A·δ = b − A·Φⁿ
        a.apply(&phi, &mut correction);
        let rhs: Vec<f64> = b.iter().zip(&correction).map(|(bi, ai)| bi - ai).collect();
        let out = solve_linear(&a, &rhs, &solve_opts)?;
        for (p, d) in phi.iter_mut().zip(&out.x) {
            *p += d;
        }
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential"));
        }
        diagnostics.push(StepDiagnostics {
            iterations: out.iterations,
            relative_residual: out.relative_residual,
            scaled_residual: out.weighted_residual,
        });
        for (series, w) in well_series.iter_mut().zip(&disc.wells) {
            series.steps.push(well_step(w, &grid, &scenario.props, &phi)?);
        }
        let field = ScalarField3D::new(grid, phi.clone())?;
        pressures.push(pressure_from_potential(&field, &scenario.props));
        potentials.push(field);
    }

    Ok(Solution {
        potentials,
        pressures,
        wells: well_series,
        diagnostics,
        dt: scenario.dt,
    })
}

/// Well time series implied by a potential sequence (e.g. a surrogate
/// prediction) for the wells of `scenario`.
pub fn well_series_from_potentials(scenario: &Scenario, potentials: &[ScalarField3D]) -> Result<Vec<WellSolution>> {
    let wells = prepare_wells(&scenario.grid, &scenario.props, &scenario.perm, &scenario.wells)?;
    wells
        .iter()
        .map(|w| {
            let steps = potentials
                .iter()
                .skip(1)
                .map(|phi| well_step(w, &scenario.grid, &scenario.props, phi.values()))
                .collect::<Result<Vec<_>>>()?;
            Ok(WellSolution {
                name: w.spec.name.clone(),
                steps,
            })
        })
        .collect()
}
