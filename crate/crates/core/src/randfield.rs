//! Gaussian log-permeability fields from a truncated Karhunen–Loève expansion.
//!
//! The separable exponential covariance
//! `C(x, x') = σ² exp(−|Δx|/η_x − |Δy|/η_y − |Δz|/η_z)` evaluated at cell
//! centres is a Kronecker product of three 1D covariance matrices, so its
//! eigenpairs are products of the 1D eigenpairs. The basis is built from the
//! three small symmetric eigenproblems and the leading products are kept.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid3D, ScalarField3D};
use crate::units;

/// Statistics of `Z = ln K` with K in millidarcy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub mean_lnk: f64,
    pub variance: f64,
    pub corr_x: f64,
    pub corr_y: f64,
    pub corr_z: f64,
}

impl Default for CovarianceSpec {
    fn default() -> Self {
        Self {
            mean_lnk: 4.0,
            variance: 0.5,
            corr_x: 152.4,
            corr_y: 152.4,
            corr_z: 152.4,
        }
    }
}

impl CovarianceSpec {
    pub fn isotropic(mean_lnk: f64, variance: f64, corr: f64) -> Self {
        Self {
            mean_lnk,
            variance,
            corr_x: corr,
            corr_y: corr,
            corr_z: corr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean_lnk.is_finite() {
            return Err(Error::InvalidCovariance("mean must be finite".into()));
        }
        if !(self.variance.is_finite() && self.variance >= 0.0) {
            return Err(Error::InvalidCovariance(format!(
                "variance must be non-negative, got {}",
                self.variance
            )));
        }
        for (axis, eta) in [("x", self.corr_x), ("y", self.corr_y), ("z", self.corr_z)] {
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::InvalidCovariance(format!(
                    "correlation length along {axis} must be positive, got {eta}"
                )));
            }
        }
        Ok(())
    }

    /// Covariance between two points given their coordinate offsets.
    pub fn covariance(&self, dx: f64, dy: f64, dz: f64) -> f64 {
        self.variance * (-dx.abs() / self.corr_x - dy.abs() / self.corr_y - dz.abs() / self.corr_z).exp()
    }

    fn same_correlation(&self, other: &CovarianceSpec) -> bool {
        self.corr_x == other.corr_x && self.corr_y == other.corr_y && self.corr_z == other.corr_z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KleMode {
    pub eigenvalue: f64,
    pub vector: ScalarField3D,
}

/// Truncated eigenbasis of the discrete covariance.
#[derive(Debug, Clone)]
pub struct KleBasis {
    grid: Grid3D,
    cov: CovarianceSpec,
    modes: Vec<KleMode>,
    total_variance: f64,
}

impl KleBasis {
    /// Reassemble a basis from stored parts (e.g. read back from a bundle).
    pub fn from_parts(
        grid: Grid3D,
        cov: CovarianceSpec,
        eigenvalues: Vec<f64>,
        vectors: Vec<Vec<f64>>,
        total_variance: f64,
    ) -> Result<Self> {
        if eigenvalues.len() != vectors.len() {
            return Err(Error::ShapeMismatch {
                expected: eigenvalues.len(),
                actual: vectors.len(),
            });
        }
        let modes = eigenvalues
            .into_iter()
            .zip(vectors)
            .map(|(eigenvalue, v)| {
                Ok(KleMode {
                    eigenvalue,
                    vector: ScalarField3D::new(grid, v)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            cov,
            modes,
            total_variance,
        })
    }

    pub fn grid(&self) -> &Grid3D {
        &self.grid
    }

    /// Covariance the eigenvalues were computed for.
    pub fn covariance(&self) -> &CovarianceSpec {
        &self.cov
    }

    pub fn modes(&self) -> &[KleMode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    /// Trace of the full discrete covariance matrix (σ² times the cell count).
    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Pointwise variance retained by the truncated expansion, Σ λ_i f_i(x)².
    pub fn truncated_variance(&self) -> ScalarField3D {
        let mut var = ScalarField3D::filled(self.grid, 0.0);
        for m in &self.modes {
            for (v, f) in var.values_mut().iter_mut().zip(m.vector.values()) {
                *v += m.eigenvalue * f * f;
            }
        }
        var
    }
}

/// Eigenpairs of the 1D exponential correlation matrix along one axis, sorted
/// by descending eigenvalue. Eigenvectors are unit length with their first
/// significant component positive.
fn axis_eigen(n: usize, spacing: f64, corr: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = DMatrix::from_fn(n, n, |a, b| (-((a as f64 - b as f64).abs() * spacing) / corr).exp());
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lead = eig.eigenvalues[order[0]];
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for &c in &order {
        let mut lambda = eig.eigenvalues[c];
        if lambda < 0.0 {
            debug_assert!(lambda >= -1e-10 * lead, "exponential kernel lost definiteness");
            lambda = 0.0;
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let vmax = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * vmax) {
            if *first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        values.push(lambda);
        vectors.push(v);
    }
    (values, vectors)
}

/// Leading `n_modes` eigenpairs of the discrete covariance on `grid`.
///
/// Ties in eigenvalue are ordered by ascending 1D mode index along x, then y,
/// then z, so the basis is reproducible.
pub fn build_basis(grid: &Grid3D, cov: &CovarianceSpec, n_modes: usize) -> Result<KleBasis> {
    grid.validate()?;
    cov.validate()?;
    if cov.variance == 0.0 {
        return Err(Error::InvalidCovariance(
            "zero variance gives a degenerate basis; sample with xi = 0 instead".into(),
        ));
    }
    let n = grid.n_cells();
    if n_modes == 0 || n_modes > n {
        return Err(Error::OutOfRange {
            what: "n_modes",
            value: n_modes.to_string(),
            range: format!("[1, {n}]"),
        });
    }

    let (lx, vx) = axis_eigen(grid.nx, grid.dx(), cov.corr_x);
    let (ly, vy) = axis_eigen(grid.ny, grid.dy(), cov.corr_y);
    let (lz, vz) = axis_eigen(grid.nz, grid.dz(), cov.corr_z);

    let mut products: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(n);
    for (a, &ea) in lx.iter().enumerate() {
        for (b, &eb) in ly.iter().enumerate() {
            for (c, &ec) in lz.iter().enumerate() {
                products.push((ea * eb * ec, a, b, c));
            }
        }
    }
    products.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)).then(p.3.cmp(&q.3)));

    let modes = products
        .iter()
        .take(n_modes)
        .map(|&(lambda, a, b, c)| {
            let (ux, uy, uz) = (&vx[a], &vy[b], &vz[c]);
            KleMode {
                eigenvalue: cov.variance * lambda,
                vector: ScalarField3D::from_fn(*grid, |i, j, k| ux[i] * uy[j] * uz[k]),
            }
        })
        .collect();

    Ok(KleBasis {
        grid: *grid,
        cov: *cov,
        modes,
        total_variance: cov.variance * n as f64,
    })
}

/// Share of the total variance captured by the leading `m` modes.
pub fn energy_fraction(basis: &KleBasis, m: usize) -> Result<f64> {
    if m == 0 || m > basis.n_modes() {
        return Err(Error::OutOfRange {
            what: "mode count",
            value: m.to_string(),
            range: format!("[1, {}]", basis.n_modes()),
        });
    }
    let kept: f64 = basis.modes[..m].iter().map(|mode| mode.eigenvalue).sum();
    Ok(kept / basis.total_variance)
}

/// Coefficient vector ξ of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KleSample {
    pub xi: Vec<f64>,
}

impl KleSample {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("KLE coefficients"));
        }
        Ok(Self { xi })
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self { xi: vec![0.0; n_modes] }
    }
}

/// Reconstruct `Z = ln K` (ln-mD) from a coefficient vector.
///
/// `cov` supplies the mean and variance. A basis built for a different
/// variance but the same correlation lengths is rescaled, since the
/// eigenvectors do not depend on σ².
pub fn sample_field(basis: &KleBasis, sample: &KleSample, cov: &CovarianceSpec) -> Result<ScalarField3D> {
    if sample.xi.len() != basis.n_modes() {
        return Err(Error::ShapeMismatch {
            expected: basis.n_modes(),
            actual: sample.xi.len(),
        });
    }
    cov.validate()?;
    if !cov.same_correlation(&basis.cov) {
        return Err(Error::InvalidCovariance(
            "correlation lengths differ from the ones the basis was built for".into(),
        ));
    }
    let scale = (cov.variance / basis.cov.variance).sqrt();
    let mut z = ScalarField3D::filled(basis.grid, cov.mean_lnk);
    for (mode, &xi) in basis.modes.iter().zip(&sample.xi) {
        if xi == 0.0 {
            continue;
        }
        let w = scale * mode.eigenvalue.sqrt() * xi;
        for (zv, f) in z.values_mut().iter_mut().zip(mode.vector.values()) {
            *zv += w * f;
        }
    }
    Ok(z)
}

/// `n` i.i.d. standard-normal coefficient vectors, reproducible from `seed`.
pub fn draw_samples(seed: u64, n: usize, n_modes: usize) -> Vec<KleSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| KleSample {
            xi: (0..n_modes).map(|_| StandardNormal.sample(&mut rng)).collect(),
        })
        .collect()
}

/// Permeability in m² from a ln-mD field.
pub fn permeability_from_lnk(lnk_md: &ScalarField3D) -> ScalarField3D {
    lnk_md.map(|z| units::md_to_m2(z.exp()))
}

/// ln-mD field from permeability in m².
pub fn lnk_from_permeability(perm_m2: &ScalarField3D) -> ScalarField3D {
    perm_m2.map(|k| units::m2_to_md(k).ln())
}
