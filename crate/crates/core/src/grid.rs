//! Grid geometry, fluid/rock constants and cell-centred field storage.
//!
//! Depth `z` is measured positive downward. Cell `(i, j, k)` has its centre at
//! depth `z_top + (k + 0.5)·dz`, so `k = 0` is the top layer. Fields are stored
//! flat with `k` varying fastest: `offset = (i·ny + j)·nz + k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;

/// Formation extents used by the reference case (m).
pub const FORMATION_LX: f64 = 365.76;
pub const FORMATION_LY: f64 = 670.56;
pub const FORMATION_LZ: f64 = 51.82;
pub const FORMATION_Z_TOP: f64 = 3657.6;

/// Uniform Cartesian grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3D {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub z_top: f64,
}

impl Grid3D {
    pub fn new(nx: usize, ny: usize, nz: usize, lx: f64, ly: f64, lz: f64, z_top: f64) -> Result<Self> {
        let grid = Self {
            nx,
            ny,
            nz,
            lx,
            ly,
            lz,
            z_top,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid over the reference formation box with the given cell counts.
    pub fn formation(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::new(nx, ny, nz, FORMATION_LX, FORMATION_LY, FORMATION_LZ, FORMATION_Z_TOP)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::InvalidGrid(format!(
                "cell counts must be positive, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        for (name, v) in [("lx", self.lx), ("ly", self.ly), ("lz", self.lz)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGrid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !self.z_top.is_finite() {
            return Err(Error::InvalidGrid("z_top must be finite".into()));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn dz(&self) -> f64 {
        self.lz / self.nz as f64
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx() * self.dy() * self.dz()
    }

    pub fn contains(&self, i: usize, j: usize, k: usize) -> bool {
        i < self.nx && j < self.ny && k < self.nz
    }

    /// Flat offset of `(i, j, k)`. Panics in debug builds when out of range.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(self.contains(i, j, k));
        (i * self.ny + j) * self.nz + k
    }

    /// Inverse of [`Grid3D::index`].
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.nz;
        let ij = idx / self.nz;
        (ij / self.ny, ij % self.ny, k)
    }

    /// Depth of the centre of layer `k`.
    #[inline]
    pub fn depth(&self, k: usize) -> f64 {
        self.z_top + (k as f64 + 0.5) * self.dz()
    }

    /// Depth below the formation top of the centre of layer `k`.
    #[inline]
    pub fn depth_below_top(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dz()
    }

    /// Cell centre coordinates (x, y, depth below top).
    pub fn centre(&self, i: usize, j: usize, k: usize) -> (f64, f64, f64) {
        ((i as f64 + 0.5) * self.dx(), (j as f64 + 0.5) * self.dy(), self.depth_below_top(k))
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

/// Rock and oil constants, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationProps {
    pub porosity: f64,
    /// kg/m³ at standard conditions.
    pub oil_density: f64,
    /// Pa·s
    pub viscosity: f64,
    /// 1/Pa
    pub compressibility: f64,
    pub formation_factor: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for FormationProps {
    /// Reference formation and oil properties.
    fn default() -> Self {
        Self {
            porosity: 0.2,
            oil_density: 849.0,
            viscosity: units::mpas_to_pas(3.0),
            compressibility: units::per_bar_to_per_pa(1e-4),
            formation_factor: 1.02,
            gravity: 9.81,
        }
    }
}

impl FormationProps {
    pub fn validate(&self) -> Result<()> {
        if !(self.porosity > 0.0 && self.porosity < 1.0) {
            return Err(Error::InvalidProps(format!("porosity must lie in (0,1), got {}", self.porosity)));
        }
        for (name, v) in [
            ("viscosity", self.viscosity),
            ("compressibility", self.compressibility),
            ("formation_factor", self.formation_factor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidProps(format!("{name} must be positive, got {v}")));
            }
        }
        // zero density/gravity switch the gravity term off
        for (name, v) in [("oil_density", self.oil_density), ("gravity", self.gravity)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidProps(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Specific weight ρ·g (Pa/m).
    pub fn specific_weight(&self) -> f64 {
        self.oil_density * self.gravity
    }

    /// Storage coefficient φ·C_o/B_o (1/Pa).
    pub fn storage(&self) -> f64 {
        self.porosity * self.compressibility / self.formation_factor
    }
}

/// One scalar per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField3D {
    grid: Grid3D,
    values: Vec<f64>,
}

impl ScalarField3D {
    pub fn new(grid: Grid3D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::ShapeMismatch {
                expected: grid.n_cells(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn filled(grid: Grid3D, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.n_cells()],
        }
    }

    pub fn from_fn(grid: Grid3D, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.n_cells());
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                for k in 0..grid.nz {
                    values.push(f(i, j, k));
                }
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = self.grid.index(i, j, k);
        self.values[idx] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Φ = p − ρ·g·(z − z_top).
pub fn potential_from_pressure(pressure: &ScalarField3D, props: &FormationProps) -> ScalarField3D {
    let grid = *pressure.grid();
    let gamma = props.specific_weight();
    ScalarField3D::from_fn(grid, |i, j, k| pressure.get(i, j, k) - gamma * grid.depth_below_top(k))
}

/// Inverse of [`potential_from_pressure`].
pub fn pressure_from_potential(potential: &ScalarField3D, props: &FormationProps) -> ScalarField3D {
    let grid = *potential.grid();
    let gamma = props.specific_weight();
    ScalarField3D::from_fn(grid, |i, j, k| potential.get(i, j, k) + gamma * grid.depth_below_top(k))
}

/// Gravity-equilibrated initial pressure with `p_ref_top` at the formation top.
pub fn init_hydrostatic(grid: &Grid3D, props: &FormationProps, p_ref_top: f64) -> Result<ScalarField3D> {
    if !(p_ref_top.is_finite() && p_ref_top > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "reference pressure must be positive, got {p_ref_top}"
        )));
    }
    let gamma = props.specific_weight();
    Ok(ScalarField3D::from_fn(*grid, |_, _, k| p_ref_top + gamma * grid.depth_below_top(k)))
}
