//! Seven-point finite-volume operator for the implicit potential equation.

use crate::error::{Error, Result};
use crate::grid::{FormationProps, Grid3D, ScalarField3D};

use super::solver::LinearOperator;

/// Face transmissibility with the harmonic mean of the two cell
/// permeabilities, `T = k_h·A / (μ·B_o·L)`. A face touching a zero-permeability
/// cell is sealing.
pub fn transmissibility(k1: f64, k2: f64, area: f64, dist: f64, viscosity: f64, formation_factor: f64) -> f64 {
    let sum = k1 + k2;
    if sum == 0.0 {
        return 0.0;
    }
    let harmonic = 2.0 * k1 * k2 / sum;
    harmonic * area / (viscosity * formation_factor * dist)
}

/// Transmissibilities of the `+x`, `+y` and `+z` faces of every cell, indexed
/// by the lower cell. Faces on the outer boundary are absent (zero), which is
/// the no-flow condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmissibilities {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

impl Transmissibilities {
    pub fn new(grid: &Grid3D, props: &FormationProps, perm: &ScalarField3D) -> Result<Self> {
        if perm.grid() != grid {
            return Err(Error::ShapeMismatch {
                expected: grid.n_cells(),
                actual: perm.values().len(),
            });
        }
        let (dx, dy, dz) = (grid.dx(), grid.dy(), grid.dz());
        let n = grid.n_cells();
        let k = perm.values();
        let (mu, bo) = (props.viscosity, props.formation_factor);
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                for kk in 0..grid.nz {
                    let c = grid.index(i, j, kk);
                    if i + 1 < grid.nx {
                        x[c] = transmissibility(k[c], k[grid.index(i + 1, j, kk)], dy * dz, dx, mu, bo);
                    }
                    if j + 1 < grid.ny {
                        y[c] = transmissibility(k[c], k[grid.index(i, j + 1, kk)], dx * dz, dy, mu, bo);
                    }
                    if kk + 1 < grid.nz {
                        z[c] = transmissibility(k[c], k[c + 1], dx * dy, dz, mu, bo);
                    }
                }
            }
        }
        Ok(Self { x, y, z })
    }
}

/// Symmetric seven-point matrix stored as a diagonal excess plus face
/// couplings: `(A·x)_c = excess_c·x_c + Σ_faces T·(x_c − x_nb)`.
///
/// Applying the operator in difference form keeps round-off small when `x`
/// is close to uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilMatrix {
    grid: Grid3D,
    excess: Vec<f64>,
    trans: Transmissibilities,
}

impl StencilMatrix {
    pub fn new(grid: Grid3D, excess: Vec<f64>, trans: Transmissibilities) -> Result<Self> {
        let n = grid.n_cells();
        for len in [excess.len(), trans.x.len(), trans.y.len(), trans.z.len()] {
            if len != n {
                return Err(Error::ShapeMismatch { expected: n, actual: len });
            }
        }
        Ok(Self { grid, excess, trans })
    }

    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    /// Diagonal contributions that are not part of the flux Laplacian
    /// (accumulation and BHP-well terms).
    pub fn excess(&self) -> &[f64] {
        &self.excess
    }

    pub fn transmissibilities(&self) -> &Transmissibilities {
        &self.trans
    }

    /// Full diagonal.
    pub fn diagonal(&self) -> Vec<f64> {
        let g = &self.grid;
        let (sx, sy, sz) = (g.ny * g.nz, g.nz, 1);
        let mut d = self.excess.clone();
        for c in 0..g.n_cells() {
            let t = &self.trans;
            d[c] += t.x[c] + t.y[c] + t.z[c];
            let (i, j, k) = g.coords(c);
            if i > 0 {
                d[c] += t.x[c - sx];
            }
            if j > 0 {
                d[c] += t.y[c - sy];
            }
            if k > 0 {
                d[c] += t.z[c - sz];
            }
        }
        d
    }

    /// Row-major dense copy, for tests and small direct solves.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.grid.n_cells();
        let mut a = vec![vec![0.0; n]; n];
        let d = self.diagonal();
        for c in 0..n {
            a[c][c] = d[c];
        }
        let g = &self.grid;
        let (sx, sy) = (g.ny * g.nz, g.nz);
        for c in 0..n {
            for (t, stride) in [(self.trans.x[c], sx), (self.trans.y[c], sy), (self.trans.z[c], 1)] {
                if t != 0.0 {
                    a[c][c + stride] = -t;
                    a[c + stride][c] = -t;
                }
            }
        }
        a
    }
}

impl LinearOperator for StencilMatrix {
    fn dim(&self) -> usize {
        self.grid.n_cells()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = &self.grid;
        let (nx, ny, nz) = (g.nx, g.ny, g.nz);
        let (sx, sy) = (ny * nz, nz);
        let t = &self.trans;
        for (yc, (&e, &xc)) in y.iter_mut().zip(self.excess.iter().zip(x)) {
            *yc = e * xc;
        }
        // each face visited once, contributing to both neighbours
        for i in 0..nx {
            for j in 0..ny {
                let base = (i * ny + j) * nz;
                for c in base..base + nz {
                    let xc = x[c];
                    if i + 1 < nx {
                        let f = t.x[c] * (xc - x[c + sx]);
                        y[c] += f;
                        y[c + sx] -= f;
                    }
                    if j + 1 < ny {
                        let f = t.y[c] * (xc - x[c + sy]);
                        y[c] += f;
                        y[c + sy] -= f;
                    }
                    if c + 1 < base + nz {
                        let f = t.z[c] * (xc - x[c + 1]);
                        y[c] += f;
                        y[c + 1] -= f;
                    }
                }
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        StencilMatrix::diagonal(self)
    }
}
