//! Forward-model handles: anything that maps a permeability field to a
//! potential history with well series.

use crate::error::{Error, Result};
use crate::grid::{pressure_from_potential, ScalarField3D};
use crate::simulator::{run_with, well_series_from_potentials, Scenario, SimulatorOptions, Solution};

pub trait ForwardModel: Sync {
    /// Scenario whose geometry, wells and schedule the model reproduces.
    fn scenario(&self) -> &Scenario;

    /// Solution for realization `index` with permeability `perm` (m²).
    fn evaluate(&self, index: usize, perm: &ScalarField3D) -> Result<Solution>;
}

/// The finite-difference simulator.
#[derive(Debug, Clone)]
pub struct SimulatorForward {
    pub template: Scenario,
    pub options: SimulatorOptions,
}

impl SimulatorForward {
    pub fn new(template: Scenario) -> Self {
        Self {
            template,
            options: SimulatorOptions::default(),
        }
    }
}

impl ForwardModel for SimulatorForward {
    fn scenario(&self) -> &Scenario {
        &self.template
    }

    fn evaluate(&self, _index: usize, perm: &ScalarField3D) -> Result<Solution> {
        run_with(&self.template.with_perm(perm.clone()), &self.options)
    }
}

/// Potential histories computed elsewhere (e.g. a surrogate's predictions
/// read from a bundle), looked up by realization index. Well series are
/// derived from the stored potentials with the simulator's well model.
#[derive(Debug, Clone)]
pub struct PrecomputedForward {
    pub template: Scenario,
    pub potentials: Vec<Vec<ScalarField3D>>,
}

impl ForwardModel for PrecomputedForward {
    fn scenario(&self) -> &Scenario {
        &self.template
    }

    fn evaluate(&self, index: usize, perm: &ScalarField3D) -> Result<Solution> {
        let potentials = self
            .potentials
            .get(index)
            .ok_or_else(|| Error::InvalidParameter(format!("no stored potentials for realization {index}")))?
            .clone();
        if potentials.len() != self.template.n_steps + 1 {
            return Err(Error::ShapeMismatch {
                expected: self.template.n_steps + 1,
                actual: potentials.len(),
            });
        }
        let scenario = self.template.with_perm(perm.clone());
        let wells = well_series_from_potentials(&scenario, &potentials)?;
        let pressures = potentials.iter().map(|p| pressure_from_potential(p, &scenario.props)).collect();
        Ok(Solution {
            potentials,
            pressures,
            wells,
            diagnostics: Vec::new(),
            dt: scenario.dt,
        })
    }
}
