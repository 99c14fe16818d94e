//! Vertical wells: Peaceman inflow, rate allocation and BHP reporting.
//!
//! Sign convention: production is positive. A perforation produces
//! `q = WI·(p_cell − p_wellbore)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FormationProps, Grid3D, ScalarField3D};

/// Default wellbore radius (m).
pub const DEFAULT_WELL_RADIUS: f64 = 0.1;

/// Well control, SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WellControl {
    /// Total rate at standard conditions, m³/s, positive for production.
    Rate(f64),
    /// Bottom-hole pressure at the top perforation, Pa.
    Bhp(f64),
}

/// A vertical well perforated over layers `k_top..=k_bot`. Indices are
/// 0-based here; configuration files use 1-based indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub name: String,
    pub i: usize,
    pub j: usize,
    pub k_top: usize,
    pub k_bot: usize,
    pub radius: f64,
    pub control: WellControl,
}

impl WellSpec {
    /// Well through every layer of an `nz`-layer grid.
    pub fn full_penetration(name: impl Into<String>, i: usize, j: usize, nz: usize, control: WellControl) -> Self {
        Self {
            name: name.into(),
            i,
            j,
            k_top: 0,
            k_bot: nz.saturating_sub(1),
            radius: DEFAULT_WELL_RADIUS,
            control,
        }
    }

    /// Build from 1-based grid coordinates as written in configs.
    pub fn from_one_based(
        name: impl Into<String>,
        i: usize,
        j: usize,
        k_top: usize,
        k_bot: usize,
        radius: f64,
        control: WellControl,
    ) -> Result<Self> {
        let name = name.into();
        if i == 0 || j == 0 || k_top == 0 || k_bot == 0 {
            return Err(Error::InvalidWell {
                well: name,
                reason: "1-based indices must be at least 1".into(),
            });
        }
        Ok(Self {
            name,
            i: i - 1,
            j: j - 1,
            k_top: k_top - 1,
            k_bot: k_bot - 1,
            radius,
            control,
        })
    }

    pub fn n_perforations(&self) -> usize {
        self.k_bot + 1 - self.k_top
    }

    pub fn layers(&self) -> std::ops::RangeInclusive<usize> {
        self.k_top..=self.k_bot
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidWell {
            well: self.name.clone(),
            reason: reason.into(),
        }
    }

    /// Geometric checks against a grid (the `r_w < r_0` check needs
    /// permeability and happens in [`prepare_wells`]).
    pub fn validate(&self, grid: &Grid3D) -> Result<()> {
        if self.i >= grid.nx || self.j >= grid.ny {
            return Err(self.invalid(format!(
                "location ({}, {}) outside {}x{} grid",
                self.i + 1,
                self.j + 1,
                grid.nx,
                grid.ny
            )));
        }
        if self.k_top > self.k_bot || self.k_bot >= grid.nz {
            return Err(self.invalid(format!(
                "perforation range {}..={} invalid for {} layers",
                self.k_top + 1,
                self.k_bot + 1,
                grid.nz
            )));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(self.invalid("wellbore radius must be positive"));
        }
        match self.control {
            WellControl::Rate(q) if !q.is_finite() => Err(self.invalid("rate must be finite")),
            WellControl::Bhp(p) if !(p.is_finite() && p > 0.0) => Err(self.invalid("BHP must be positive")),
            _ => Ok(()),
        }
    }
}

/// Equivalent drainage radius r_0 = 0.28·√(k_y·Δx² + k_x·Δy²) / (√k_x + √k_y).
pub fn drainage_radius(kx: f64, ky: f64, dx: f64, dy: f64) -> Result<f64> {
    if !(kx > 0.0 && ky > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "drainage radius needs positive permeability, got kx={kx}, ky={ky}"
        )));
    }
    Ok(0.28 * (ky * dx * dx + kx * dy * dy).sqrt() / (kx.sqrt() + ky.sqrt()))
}

/// Peaceman well index WI = 2π·Δz·√(k_x·k_y) / (μ·ln(r_0/r_w)), m³/(Pa·s).
pub fn well_index(kx: f64, ky: f64, dz: f64, r0: f64, rw: f64, viscosity: f64) -> Result<f64> {
    if !(r0 > rw && rw > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "drainage radius {r0} must exceed wellbore radius {rw}"
        )));
    }
    Ok(2.0 * PI * dz * (kx * ky).sqrt() / (viscosity * (r0 / rw).ln()))
}

/// Perforation rate for a drawdown, production positive.
#[inline]
pub fn perforation_rate(wi: f64, p_cell: f64, p_wellbore: f64) -> f64 {
    wi * (p_cell - p_wellbore)
}

/// Split a well rate over its perforations in proportion to permeability.
/// The last perforation absorbs rounding so the parts, summed in order, give
/// exactly `q_total`.
pub fn allocate_rate(q_total: f64, perf_perms: &[f64]) -> Result<Vec<f64>> {
    if !q_total.is_finite() {
        return Err(Error::NonFinite("well rate"));
    }
    if perf_perms.is_empty() {
        return Err(Error::InvalidParameter("well has no perforations".into()));
    }
    if perf_perms.iter().any(|&k| !(k >= 0.0 && k.is_finite())) {
        return Err(Error::InvalidParameter("perforation permeabilities must be non-negative".into()));
    }
    let total: f64 = perf_perms.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidParameter("all perforation permeabilities are zero".into()));
    }
    let n = perf_perms.len();
    // Parts are rounded to multiples of ulp(q), so every partial sum is exact
    // and the last part closes the total without rounding.
    let unit = if q_total == 0.0 {
        1.0
    } else {
        q_total.abs().next_up() - q_total.abs()
    };
    let mut rates: Vec<f64> = perf_perms.iter().map(|&k| (q_total * k / total / unit).round() * unit).collect();
    let head: f64 = rates[..n - 1].iter().sum();
    rates[n - 1] = q_total - head;
    debug_assert_eq!(rates.iter().sum::<f64>(), q_total);
    Ok(rates)
}

/// Scalar BHP of a rate-controlled well, referred to the top perforation.
///
/// Each perforation implies a wellbore pressure `p_cell − q/WI`; these are
/// shifted to the top-perforation depth through a static oil column and
/// averaged.
pub fn report_bhp(
    well: &WellSpec,
    grid: &Grid3D,
    perf_pressures: &[f64],
    perf_rates: &[f64],
    well_indices: &[f64],
    props: &FormationProps,
) -> Result<f64> {
    let n = well.n_perforations();
    for len in [perf_pressures.len(), perf_rates.len(), well_indices.len()] {
        if len != n {
            return Err(Error::ShapeMismatch { expected: n, actual: len });
        }
    }
    let z_ref = grid.depth(well.k_top);
    let gamma = props.specific_weight();
    let mut sum = 0.0;
    for (idx, k) in well.layers().enumerate() {
        let wi = well_indices[idx];
        if wi == 0.0 {
            return Err(Error::InvalidParameter(format!("well '{}' has a zero well index", well.name)));
        }
        let bhp_layer = perf_pressures[idx] - perf_rates[idx] / wi;
        sum += bhp_layer - gamma * (grid.depth(k) - z_ref);
    }
    Ok(sum / n as f64)
}

/// Binary image marking perforated cells.
pub fn well_image(grid: &Grid3D, wells: &[WellSpec]) -> Result<ScalarField3D> {
    let mut img = ScalarField3D::filled(*grid, 0.0);
    for w in wells {
        w.validate(grid)?;
        for k in w.layers() {
            if img.get(w.i, w.j, k) != 0.0 {
                return Err(w.invalid(format!(
                    "perforation in cell ({}, {}, {}) overlaps another well",
                    w.i + 1,
                    w.j + 1,
                    k + 1
                )));
            }
            img.set(w.i, w.j, k, 1.0);
        }
    }
    Ok(img)
}

/// A perforation with its precomputed well index.
#[derive(Debug, Clone, PartialEq)]
pub struct Perforation {
    pub cell: usize,
    pub k: usize,
    pub perm: f64,
    pub well_index: f64,
}

/// A well resolved against a permeability field.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWell {
    pub spec: WellSpec,
    pub perforations: Vec<Perforation>,
    /// Fixed per-perforation rates for rate control.
    pub allocated_rates: Option<Vec<f64>>,
    /// Wellbore target expressed as a potential (same for every layer when
    /// the wellbore holds a static oil column).
    pub bhp_potential: Option<f64>,
}

impl PreparedWell {
    pub fn well_indices(&self) -> Vec<f64> {
        self.perforations.iter().map(|p| p.well_index).collect()
    }

    /// Perforation rates given the current potential field.
    pub fn perforation_rates(&self, potential: &[f64]) -> Vec<f64> {
        match (&self.allocated_rates, self.bhp_potential) {
            (Some(rates), _) => rates.clone(),
            (None, Some(target)) => self
                .perforations
                .iter()
                .map(|p| perforation_rate(p.well_index, potential[p.cell], target))
                .collect(),
            (None, None) => unreachable!("prepared well without a control"),
        }
    }
}

/// Resolve wells on a permeability field (m², isotropic per cell): validate
/// geometry, compute well indices and rate allocations.
pub fn prepare_wells(grid: &Grid3D, props: &FormationProps, perm: &ScalarField3D, wells: &[WellSpec]) -> Result<Vec<PreparedWell>> {
    // rejects overlaps and out-of-grid perforations
    well_image(grid, wells)?;
    let gamma = props.specific_weight();
    wells
        .iter()
        .map(|w| {
            let mut perforations = Vec::with_capacity(w.n_perforations());
            for k in w.layers() {
                let cell = grid.index(w.i, w.j, k);
                let kc = perm.values()[cell];
                let r0 = drainage_radius(kc, kc, grid.dx(), grid.dy())?;
                if w.radius >= r0 {
                    return Err(w.invalid(format!(
                        "wellbore radius {} m is not below drainage radius {r0:.4} m in layer {}",
                        w.radius,
                        k + 1
                    )));
                }
                let wi = well_index(kc, kc, grid.dz(), r0, w.radius, props.viscosity)?;
                perforations.push(Perforation {
                    cell,
                    k,
                    perm: kc,
                    well_index: wi,
                });
            }
            let (allocated_rates, bhp_potential) = match w.control {
                WellControl::Rate(q) => {
                    let perms: Vec<f64> = perforations.iter().map(|p| p.perm).collect();
                    (Some(allocate_rate(q, &perms)?), None)
                }
                WellControl::Bhp(bhp) => (None, Some(bhp - gamma * grid.depth_below_top(w.k_top))),
            };
            Ok(PreparedWell {
                spec: w.clone(),
                perforations,
                allocated_rates,
                bhp_potential,
            })
        })
        .collect()
}

/// Results for one timestep of one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellStep {
    /// m³/s, production positive.
    pub total_rate: f64,
    pub perforation_rates: Vec<f64>,
    /// Pa at the top perforation.
    pub bhp: f64,
}

/// Time series of a well, one entry per timestep after the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSolution {
    pub name: String,
    pub steps: Vec<WellStep>,
}

impl WellSolution {
    pub fn rates(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.total_rate).collect()
    }

    pub fn bhps(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.bhp).collect()
    }
}

/// Well rates and BHP for one potential snapshot.
pub fn well_step(well: &PreparedWell, grid: &Grid3D, props: &FormationProps, potential: &[f64]) -> Result<WellStep> {
    let perforation_rates = well.perforation_rates(potential);
    let total_rate = perforation_rates.iter().sum();
    let bhp = match well.spec.control {
        WellControl::Bhp(bhp) => bhp,
        WellControl::Rate(_) => {
            let gamma = props.specific_weight();
            let pressures: Vec<f64> = well
                .perforations
                .iter()
                .map(|p| potential[p.cell] + gamma * grid.depth_below_top(p.k))
                .collect();
            report_bhp(&well.spec, grid, &pressures, &perforation_rates, &well.well_indices(), props)?
        }
    };
    Ok(WellStep {
        total_rate,
        perforation_rates,
        bhp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn isotropic_drainage_radius() {
        let k = 3.0e-14;
        let h = 7.0;
        assert_relative_eq!(drainage_radius(k, k, h, h).unwrap(), 0.28 * h / 2f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(drainage_radius(k, k, h, h).unwrap() / h, 0.19799, max_relative = 1e-4);
    }

    #[test]
    fn reference_cell_drainage_radius() {
        let k = 1e-13;
        let r0 = drainage_radius(k, k, 6.096, 3.048).unwrap();
        assert_relative_eq!(r0, 0.28 * (6.096f64.powi(2) + 3.048f64.powi(2)).sqrt() / 2.0, max_relative = 1e-14);
        assert_relative_eq!(r0, 0.9541, max_relative = 1e-4);
        let r0_big = drainage_radius(k, k, 2.0 * 6.096, 2.0 * 3.048).unwrap();
        assert_relative_eq!(r0_big, 2.0 * r0, max_relative = 1e-14);
        assert!(drainage_radius(0.0, k, 1.0, 1.0).is_err());
    }

    #[test]
    fn well_index_plug_in() {
        let k = units::md_to_m2(54.6);
        let wi = well_index(k, k, 5.182, 0.9541, 0.1, 3e-3).unwrap();
        // independent arithmetic: 2π·5.182·5.3886e-14 / (3e-3·ln 9.541)
        let expected = 2.0 * std::f64::consts::PI * 5.182 * 5.388601e-14 / (3e-3 * 9.541f64.ln());
        assert_relative_eq!(wi, expected, max_relative = 1e-6);
        assert_relative_eq!(wi, 2.594e-10, max_relative = 1e-3);
        let wi2 = well_index(2.0 * k, 2.0 * k, 5.182, 0.9541, 0.1, 3e-3).unwrap();
        assert_relative_eq!(wi2, 2.0 * wi, max_relative = 1e-14);
        assert!(well_index(k, k, 5.0, 0.1, 0.1, 3e-3).is_err());
        assert_eq!(perforation_rate(wi, 3e7, 3e7), 0.0);
    }

    #[test]
    fn allocation_examples() {
        let q = units::m3_per_day_to_si(50.0);
        let parts = allocate_rate(q, &[2.0; 10]).unwrap();
        for p in &parts {
            assert_relative_eq!(units::m3_per_s_to_per_day(*p), 5.0, max_relative = 1e-12);
        }
        assert_eq!(allocate_rate(50.0, &[1.0, 3.0]).unwrap(), vec![12.5, 37.5]);
        assert_eq!(allocate_rate(50.0, &[4.2]).unwrap(), vec![50.0]);
        assert!(allocate_rate(50.0, &[0.0, 0.0]).is_err());
        assert!(allocate_rate(50.0, &[]).is_err());
    }

    #[test]
    fn allocation_breaks_rounding_ties() {
        let q = 0.7988913644079191;
        let parts = allocate_rate(q, &[20.328801200374464, 74.50983823247809]).unwrap();
        assert_eq!(parts.iter().sum::<f64>(), q);
        assert_relative_eq!(
            parts[0],
            q * 20.328801200374464 / (20.328801200374464 + 74.50983823247809),
            max_relative = 1e-15
        );
    }

    fn grid() -> Grid3D {
        Grid3D::formation(60, 220, 10).unwrap()
    }

    #[test]
    fn bhp_single_perforation() {
        let g = grid();
        let props = FormationProps::default();
        let w = WellSpec {
            k_bot: 0,
            ..WellSpec::full_penetration("w", 0, 0, 10, WellControl::Rate(1e-4))
        };
        let bhp = report_bhp(&w, &g, &[4e7], &[1e-4], &[2e-10], &props).unwrap();
        assert_relative_eq!(bhp, 4e7 - 1e-4 / 2e-10, max_relative = 1e-14);
        assert!(report_bhp(&w, &g, &[4e7], &[1e-4], &[0.0], &props).is_err());
    }

    #[test]
    fn bhp_zero_rate_is_corrected_mean() {
        let g = grid();
        let props = FormationProps::default();
        let w = WellSpec {
            k_top: 2,
            k_bot: 4,
            ..WellSpec::full_penetration("w", 0, 0, 10, WellControl::Rate(0.0))
        };
        let gamma = props.specific_weight();
        let p = [4.0e7, 4.01e7, 4.03e7];
        let bhp = report_bhp(&w, &g, &p, &[0.0; 3], &[1e-10; 3], &props).unwrap();
        let dz = g.dz();
        let expected = (p[0] + (p[1] - gamma * dz) + (p[2] - gamma * 2.0 * dz)) / 3.0;
        assert_relative_eq!(bhp, expected, max_relative = 1e-14);
    }

    #[test]
    fn bhp_symmetric_two_perforations() {
        // hydrostatic cell pressures with equal drawdown: the mean equals the
        // top-cell value minus the common drawdown
        let g = grid();
        let props = FormationProps::default();
        let gamma = props.specific_weight();
        let w = WellSpec {
            k_top: 0,
            k_bot: 1,
            ..WellSpec::full_penetration("w", 0, 0, 10, WellControl::Rate(2e-4))
        };
        let p = [4.0e7, 4.0e7 + gamma * g.dz()];
        let bhp = report_bhp(&w, &g, &p, &[1e-4, 1e-4], &[1e-10, 1e-10], &props).unwrap();
        assert_relative_eq!(bhp, 4.0e7 - 1e6, max_relative = 1e-13);
    }

    #[test]
    fn images() {
        let g = grid();
        let none = well_image(&g, &[]).unwrap();
        assert!(none.values().iter().all(|&v| v == 0.0));
        let ctrl = WellControl::Bhp(350e5);
        let wells: Vec<WellSpec> = [(11, 21), (51, 21), (11, 201), (51, 201)]
            .iter()
            .enumerate()
            .map(|(n, &(i, j))| WellSpec::from_one_based(format!("P{}", n + 1), i, j, 1, 10, 0.1, ctrl).unwrap())
            .collect();
        let one = well_image(&g, &wells[..1]).unwrap();
        assert_eq!(one.values().iter().sum::<f64>(), 10.0);
        let img = well_image(&g, &wells).unwrap();
        assert_eq!(img.values().iter().sum::<f64>(), 40.0);
        assert_eq!(img.get(10, 20, 0), 1.0);
        let dup = vec![wells[0].clone(), wells[0].clone()];
        assert!(well_image(&g, &dup).is_err());
    }

    #[test]
    fn validation() {
        let g = grid();
        let ok = WellSpec::full_penetration("w", 0, 0, 10, WellControl::Rate(1.0));
        assert!(ok.validate(&g).is_ok());
        let outside = WellSpec { i: 60, ..ok.clone() };
        assert!(outside.validate(&g).is_err());
        let inverted = WellSpec {
            k_top: 5,
            k_bot: 4,
            ..ok.clone()
        };
        assert!(inverted.validate(&g).is_err());
        assert!(WellSpec::from_one_based("w", 0, 1, 1, 1, 0.1, WellControl::Rate(1.0)).is_err());
    }

    #[test]
    fn wellbore_larger_than_drainage_radius_rejected() {
        let g = Grid3D::new(3, 3, 1, 3.0, 3.0, 1.0, 0.0).unwrap();
        let perm = ScalarField3D::filled(g, 1e-13);
        let w = WellSpec {
            radius: 0.5,
            ..WellSpec::full_penetration("w", 1, 1, 1, WellControl::Rate(1e-4))
        };
        assert!(matches!(
            prepare_wells(&g, &FormationProps::default(), &perm, &[w]),
            Err(Error::InvalidWell { .. })
        ));
    }

    proptest! {
        #[test]
        fn allocation_sums_and_permutes(perms in proptest::collection::vec(0.01f64..100.0, 1..12), q in -1.0f64..1.0) {
            let parts = allocate_rate(q, &perms).unwrap();
            let sum: f64 = parts.iter().sum();
            prop_assert_eq!(sum, q);
            let mut rev = perms.clone();
            rev.reverse();
            let parts_rev = allocate_rate(q, &rev).unwrap();
            for (a, b) in parts.iter().zip(parts_rev.iter().rev()) {
                prop_assert!((a - b).abs() <= 1e-12 * q.abs().max(1e-300));
            }
        }

        #[test]
        fn rate_linear_in_drawdown(wi in 1e-12f64..1e-9, dp in -1e7f64..1e7) {
            let q1 = perforation_rate(wi, 3e7 + dp, 3e7);
            let q2 = perforation_rate(wi, 3e7 + 2.0 * dp, 3e7);
            prop_assert!((q2 - 2.0 * q1).abs() <= 1e-6 * q1.abs().max(1e-300));
            prop_assert!(dp <= 0.0 || q1 > 0.0);
        }
    }
}
