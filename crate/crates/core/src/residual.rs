//! Physics-guidance terms: discrete PDE residual, boundary and data
//! mismatches, the hard initial-condition transform and the weighted total.
//!
//! The PDE residual reuses the simulator's transmissibilities and well
//! terms, so a simulator solution has a residual at the level of the linear
//! solver tolerance. Residuals are reported dimensionless: potential divided
//! by `ResidualScales::potential`, time by `ResidualScales::time`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FormationProps, Grid3D, ScalarField3D};
use crate::simulator::{Scenario, Transmissibilities};
use crate::wells::{prepare_wells, WellSpec};

/// Weights of the data, PDE and boundary terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub data: f64,
    pub pde: f64,
    pub bc: f64,
}

impl LossWeights {
    pub fn new(data: f64, pde: f64, bc: f64) -> Result<Self> {
        let w = Self { data, pde, bc };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.data, self.pde, self.bc];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("loss weights must be non-negative, got {all:?}")));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidParameter("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    /// Weights of the constant-rate training setup.
    fn default() -> Self {
        Self {
            data: 10.0,
            pde: 0.3,
            bc: 0.3,
        }
    }
}

/// How squared sums are reduced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide by the number of squared terms.
    #[default]
    Mean,
    /// Plain sum.
    Sum,
}

impl Normalization {
    fn reduce(self, sum: f64, count: usize) -> f64 {
        match self {
            Normalization::Sum => sum,
            Normalization::Mean if count == 0 => 0.0,
            Normalization::Mean => sum / count as f64,
        }
    }
}

/// Cells entering the PDE loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualDomain {
    /// Every cell; boundary cells use the no-flow stencil.
    AllCells,
    /// Only cells whose full seven-point stencil lies inside the grid.
    #[default]
    Interior,
}

/// Nondimensionalization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualScales {
    /// Pa
    pub potential: f64,
    /// s
    pub time: f64,
}

impl ResidualScales {
    /// Reference top pressure and run horizon of a scenario.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        Self {
            potential: scenario.p_ref_top,
            time: scenario.horizon(),
        }
    }
}

/// Dimensionless residual per step (index 0 is the step into snapshot 1)
/// and cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeResidual {
    pub steps: Vec<Vec<f64>>,
    pub scales: ResidualScales,
    /// φC_o/B_o·potential/time: multiply by this for the residual in 1/s.
    pub physical_unit: f64,
}

impl PdeResidual {
    pub fn max_abs(&self) -> f64 {
        self.steps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

fn check_sequence(phi_seq: &[ScalarField3D], grid: &Grid3D) -> Result<()> {
    for phi in phi_seq {
        if phi.grid() != grid {
            return Err(Error::ShapeMismatch {
                expected: grid.n_cells(),
                actual: phi.values().len(),
            });
        }
    }
    Ok(())
}

/// Residual of the implicit step equation for every consecutive pair of
/// snapshots: `flux divergence + source − accumulation`, per unit volume.
pub fn pde_residual(
    phi_seq: &[ScalarField3D],
    perm: &ScalarField3D,
    wells: &[WellSpec],
    props: &FormationProps,
    dt: f64,
    scales: ResidualScales,
) -> Result<PdeResidual> {
    if phi_seq.len() < 2 {
        return Err(Error::InvalidParameter("residual needs at least two snapshots".into()));
    }
    if !(dt > 0.0 && scales.potential > 0.0 && scales.time > 0.0) {
        return Err(Error::InvalidParameter("dt and scales must be positive".into()));
    }
    let grid = *perm.grid();
    check_sequence(phi_seq, &grid)?;
    let trans = Transmissibilities::new(&grid, props, perm)?;
    let prepared = prepare_wells(&grid, props, perm, wells)?;
    let volume = grid.cell_volume();
    let storage = props.storage();
    let physical_unit = storage * scales.potential / scales.time;
    let to_scaled = 1.0 / (volume * physical_unit);
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let (sx, sy) = (ny * nz, nz);

    let steps = phi_seq
        .windows(2)
        .map(|pair| {
            let old = pair[0].values();
            let new = pair[1].values();
            let mut r = vec![0.0; grid.n_cells()];
            for i in 0..nx {
                for j in 0..ny {
                    for k in 0..nz {
                        let c = grid.index(i, j, k);
                        let pc = new[c];
                        let mut flux = 0.0;
                        if i + 1 < nx {
                            flux += trans.x[c] * (new[c + sx] - pc);
                        }
                        if i > 0 {
                            flux += trans.x[c - sx] * (new[c - sx] - pc);
                        }
                        if j + 1 < ny {
                            flux += trans.y[c] * (new[c + sy] - pc);
                        }
                        if j > 0 {
                            flux += trans.y[c - sy] * (new[c - sy] - pc);
                        }
                        if k + 1 < nz {
                            flux += trans.z[c] * (new[c + 1] - pc);
                        }
                        if k > 0 {
                            flux += trans.z[c - 1] * (new[c - 1] - pc);
                        }
                        let accumulation = storage * volume * (pc - old[c]) / dt;
                        r[c] = flux - accumulation;
                    }
                }
            }
            for w in &prepared {
                for (perf, q) in w.perforations.iter().zip(w.perforation_rates(new)) {
                    r[perf.cell] -= q;
                }
            }
            r.iter_mut().for_each(|v| *v *= to_scaled);
            r
        })
        .collect();

    Ok(PdeResidual {
        steps,
        scales,
        physical_unit,
    })
}

/// Squared-difference mismatch between flattened predictions and references.
pub fn data_loss(pred: &[f64], reference: &[f64], norm: Normalization) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch {
            expected: reference.len(),
            actual: pred.len(),
        });
    }
    let sum: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r).powi(2)).sum();
    Ok(norm.reduce(sum, pred.len()))
}

/// Outer face of a boundary cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] = [Face::XMin, Face::XMax, Face::YMin, Face::YMax, Face::ZMin, Face::ZMax];
}

/// Prescribed outward normal gradient `g` on one boundary face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeumannFace {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub face: Face,
    pub g: f64,
}

/// Prescribed value `h` in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletCell {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub h: f64,
}

/// Every outer face of the grid with gradient `g`. Axes with a single cell
/// have no one-sided difference and are skipped.
pub fn outer_faces(grid: &Grid3D, g: f64) -> Vec<NeumannFace> {
    let mut faces = Vec::new();
    for face in Face::ALL {
        let (axis_len, fixed) = match face {
            Face::XMin => (grid.nx, 0),
            Face::XMax => (grid.nx, grid.nx - 1),
            Face::YMin => (grid.ny, 0),
            Face::YMax => (grid.ny, grid.ny - 1),
            Face::ZMin => (grid.nz, 0),
            Face::ZMax => (grid.nz, grid.nz - 1),
        };
        if axis_len < 2 {
            continue;
        }
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                for k in 0..grid.nz {
                    let coord = match face {
                        Face::XMin | Face::XMax => i,
                        Face::YMin | Face::YMax => j,
                        Face::ZMin | Face::ZMax => k,
                    };
                    if coord == fixed {
                        faces.push(NeumannFace { i, j, k, face, g });
                    }
                }
            }
        }
    }
    faces
}

/// One-sided outward normal derivative at a boundary face.
fn normal_gradient(phi: &ScalarField3D, f: &NeumannFace) -> Result<f64> {
    let grid = phi.grid();
    let bad = || {
        Error::InvalidParameter(format!(
            "face {:?} of cell ({}, {}, {}) is not on the boundary",
            f.face, f.i, f.j, f.k
        ))
    };
    if !grid.contains(f.i, f.j, f.k) {
        return Err(bad());
    }
    let here = phi.get(f.i, f.j, f.k);
    let (inner, h) = match f.face {
        Face::XMin if f.i == 0 && grid.nx > 1 => (phi.get(1, f.j, f.k), grid.dx()),
        Face::XMax if f.i + 1 == grid.nx && grid.nx > 1 => (phi.get(f.i - 1, f.j, f.k), grid.dx()),
        Face::YMin if f.j == 0 && grid.ny > 1 => (phi.get(f.i, 1, f.k), grid.dy()),
        Face::YMax if f.j + 1 == grid.ny && grid.ny > 1 => (phi.get(f.i, f.j - 1, f.k), grid.dy()),
        Face::ZMin if f.k == 0 && grid.nz > 1 => (phi.get(f.i, f.j, 1), grid.dz()),
        Face::ZMax if f.k + 1 == grid.nz && grid.nz > 1 => (phi.get(f.i, f.j, f.k - 1), grid.dz()),
        _ => return Err(bad()),
    };
    Ok((here - inner) / h)
}

/// Soft boundary-condition mismatch summed over snapshots. With `Mean`
/// normalization the Neumann and Dirichlet parts are each averaged over
/// their own term counts.
pub fn bc_loss(phi_seq: &[ScalarField3D], neumann: &[NeumannFace], dirichlet: &[DirichletCell], norm: Normalization) -> Result<f64> {
    let mut neumann_sum = 0.0;
    let mut dirichlet_sum = 0.0;
    for phi in phi_seq {
        for f in neumann {
            neumann_sum += (normal_gradient(phi, f)? - f.g).powi(2);
        }
        for d in dirichlet {
            if !phi.grid().contains(d.i, d.j, d.k) {
                return Err(Error::InvalidParameter(format!(
                    "Dirichlet cell ({}, {}, {}) outside grid",
                    d.i, d.j, d.k
                )));
            }
            dirichlet_sum += (phi.get(d.i, d.j, d.k) - d.h).powi(2);
        }
    }
    let n = phi_seq.len();
    Ok(norm.reduce(neumann_sum, neumann.len() * n) + norm.reduce(dirichlet_sum, dirichlet.len() * n))
}

/// Hard initial condition: `Φ0·(1 − t) − t·raw`. Returns exactly `Φ0` at
/// `t = 0` whatever the raw output.
pub fn hard_ic_value(raw: f64, phi0: f64, t_norm: f64) -> f64 {
    phi0 * (1.0 - t_norm) - t_norm * raw
}

/// Elementwise [`hard_ic_value`] over a field.
pub fn hard_ic_transform(raw_out: &[f64], phi0: &[f64], t_norm: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t_norm) {
        return Err(Error::OutOfRange {
            what: "normalized time",
            value: t_norm.to_string(),
            range: "[0, 1]".into(),
        });
    }
    if raw_out.len() != phi0.len() {
        return Err(Error::ShapeMismatch {
            expected: phi0.len(),
            actual: raw_out.len(),
        });
    }
    Ok(raw_out.iter().zip(phi0).map(|(&r, &p)| hard_ic_value(r, p, t_norm)).collect())
}

/// λ_data·data + λ_pde·pde + λ_bc·bc.
pub fn total_loss(data: f64, pde: f64, bc: f64, weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.data * data + weights.pde * pde + weights.bc * bc)
}

/// A realization with labels: predicted and reference potentials (Pa).
#[derive(Debug, Clone, Copy)]
pub struct LabelledCase<'a> {
    pub predicted: &'a [ScalarField3D],
    pub reference: &'a [ScalarField3D],
}

/// A realization used for the physics terms only.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsCase<'a> {
    /// Potentials (Pa), snapshot 0 first.
    pub potentials: &'a [ScalarField3D],
    /// Permeability, m².
    pub perm: &'a ScalarField3D,
    pub wells: &'a [WellSpec],
}

/// Term counts behind the normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossCounts {
    /// Labelled realizations.
    pub n_k: usize,
    /// Labelled snapshots per realization.
    pub n_t: usize,
    /// Physics realizations.
    pub n_kv: usize,
    /// Residual steps per physics realization.
    pub n_tv: usize,
}

/// Loss components and the residual fields they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Per physics realization, per step, per cell (dimensionless).
    pub pde_residual: Vec<Vec<Vec<f64>>>,
    pub data: f64,
    pub pde: f64,
    pub bc: f64,
    pub total: f64,
    pub weights: LossWeights,
    pub counts: LossCounts,
    pub scales: ResidualScales,
    pub normalization: Normalization,
    pub domain: ResidualDomain,
}

impl ResidualReport {
    pub fn max_abs_residual(&self) -> f64 {
        self.pde_residual.iter().flatten().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Settings shared by every case of a report.
#[derive(Debug, Clone, Copy)]
pub struct ReportSettings<'a> {
    pub props: &'a FormationProps,
    pub dt: f64,
    pub scales: ResidualScales,
    pub weights: LossWeights,
    pub normalization: Normalization,
    pub domain: ResidualDomain,
    /// Prescribed outer-boundary normal gradient (no-flow: 0).
    pub boundary_gradient: f64,
}

fn interior_mask(grid: &Grid3D) -> Vec<bool> {
    (0..grid.n_cells())
        .map(|c| {
            let (i, j, k) = grid.coords(c);
            i > 0 && j > 0 && k > 0 && i + 1 < grid.nx && j + 1 < grid.ny && k + 1 < grid.nz
        })
        .collect()
}

/// Evaluate all loss terms in scaled units.
pub fn evaluate_report(
    labelled: &[LabelledCase<'_>],
    physics: &[PhysicsCase<'_>],
    settings: &ReportSettings<'_>,
) -> Result<ResidualReport> {
    settings.weights.validate()?;
    let scale = settings.scales.potential;
    let scaled = |fields: &[ScalarField3D]| -> Vec<f64> { fields.iter().flat_map(|f| f.values().iter().map(|v| v / scale)).collect() };

    let n_t = labelled.first().map_or(0, |c| c.reference.len());
    let mut pred_all = Vec::new();
    let mut ref_all = Vec::new();
    for case in labelled {
        if case.reference.len() != n_t || case.predicted.len() != n_t {
            return Err(Error::ShapeMismatch {
                expected: n_t,
                actual: case.predicted.len(),
            });
        }
        pred_all.extend(scaled(case.predicted));
        ref_all.extend(scaled(case.reference));
    }
    let data = data_loss(&pred_all, &ref_all, settings.normalization)?;

    let n_tv = physics.first().map_or(0, |c| c.potentials.len().saturating_sub(1));
    let mut pde_fields = Vec::with_capacity(physics.len());
    let mut pde_sum = 0.0;
    let mut pde_count = 0usize;
    let mut bc_sum = 0.0;
    for case in physics {
        if case.potentials.len() != n_tv + 1 {
            return Err(Error::ShapeMismatch {
                expected: n_tv + 1,
                actual: case.potentials.len(),
            });
        }
        let res = pde_residual(case.potentials, case.perm, case.wells, settings.props, settings.dt, settings.scales)?;
        let grid = case.perm.grid();
        let mask = match settings.domain {
            ResidualDomain::AllCells => vec![true; grid.n_cells()],
            ResidualDomain::Interior => interior_mask(grid),
        };
        for step in &res.steps {
            for (v, keep) in step.iter().zip(&mask) {
                if *keep {
                    pde_sum += v * v;
                    pde_count += 1;
                }
            }
        }
        pde_fields.push(res.steps);

        let scaled_seq: Vec<ScalarField3D> = case.potentials[1..].iter().map(|f| f.map(|v| v / scale)).collect();
        bc_sum += bc_loss(
            &scaled_seq,
            &outer_faces(grid, settings.boundary_gradient),
            &[],
            settings.normalization,
        )?;
    }
    let pde = settings.normalization.reduce(pde_sum, pde_count);
    let bc = match settings.normalization {
        Normalization::Mean if !physics.is_empty() => bc_sum / physics.len() as f64,
        _ => bc_sum,
    };
    let total = total_loss(data, pde, bc, &settings.weights)?;

    Ok(ResidualReport {
        pde_residual: pde_fields,
        data,
        pde,
        bc,
        total,
        weights: settings.weights,
        counts: LossCounts {
            n_k: labelled.len(),
            n_t,
            n_kv: physics.len(),
            n_tv,
        },
        scales: settings.scales,
        normalization: settings.normalization,
        domain: settings.domain,
    })
}
