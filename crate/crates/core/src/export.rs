//! Training-set export and helpers moving solutions in and out of bundles.

use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{BundleWriter, DatasetBundle};
use crate::config::{ControlKind, ScenarioConfig, TrainingConfig};
use crate::error::{Error, Result};
use crate::grid::{Grid3D, ScalarField3D};
use crate::randfield::{build_basis, draw_samples, permeability_from_lnk, sample_field, KleBasis, KleSample};
use crate::residual::{evaluate_report, PhysicsCase, ReportSettings, ResidualScales};
use crate::simulator::{run_with, Scenario, Solution};
use crate::units;
use crate::wells::{well_image, WellControl, WellSpec};

const GRID_AXES: [&str; 3] = ["i", "j", "k"];

fn axes<'a>(outer: &[&'a str]) -> Vec<&'a str> {
    outer.iter().copied().chain(GRID_AXES).collect()
}

fn grid_shape(outer: &[usize], grid: &Grid3D) -> Vec<usize> {
    outer.iter().copied().chain(grid.dims()).collect()
}

/// Sizes of an export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportOptions {
    pub n_lnk_train: usize,
    pub nt_train: usize,
    pub n_lnk_virtual: usize,
    /// Random well configurations for the labelled set; 0 keeps the
    /// configured wells.
    pub n_well_train: usize,
    pub n_well_virtual: usize,
    pub workers: usize,
}

impl From<&TrainingConfig> for ExportOptions {
    fn from(t: &TrainingConfig) -> Self {
        Self {
            n_lnk_train: t.n_lnk_train,
            nt_train: t.nt_train,
            n_lnk_virtual: t.n_lnk_virtual,
            n_well_train: t.n_well_train,
            n_well_virtual: t.n_well_virtual,
            workers: 1,
        }
    }
}

/// `n_wells` vertical wells at distinct random columns, each perforated from
/// the top layer down over a random number of layers.
pub fn random_wells(grid: &Grid3D, n_wells: usize, control: WellControl, rng: &mut impl Rng) -> Result<Vec<WellSpec>> {
    let columns = grid.nx * grid.ny;
    if n_wells > columns {
        return Err(Error::InvalidParameter(format!("{n_wells} wells do not fit in {columns} columns")));
    }
    Ok(sample(rng, columns, n_wells)
        .into_iter()
        .enumerate()
        .map(|(n, col)| {
            let length = rng.random_range(1..=grid.nz);
            WellSpec {
                name: format!("P{}", n + 1),
                i: col / grid.ny,
                j: col % grid.ny,
                k_top: 0,
                k_bot: length - 1,
                radius: crate::wells::DEFAULT_WELL_RADIUS,
                control,
            }
        })
        .collect())
}

fn random_well_sets(cfg: &ScenarioConfig, grid: &Grid3D, n_sets: usize, seed: u64) -> Result<Vec<Vec<WellSpec>>> {
    let t = &cfg.training;
    let control = match t.random_well_control {
        ControlKind::Rate => WellControl::Rate(units::m3_per_day_to_si(t.random_well_value)),
        ControlKind::Bhp => WellControl::Bhp(units::bar_to_pa(t.random_well_value)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_sets)
        .map(|_| random_wells(grid, t.n_random_wells, control, &mut rng))
        .collect()
}

/// Well descriptors as rows of (i, j, k_top, k_bot), 1-based.
fn well_rows(wells: &[WellSpec]) -> Vec<f64> {
    wells
        .iter()
        .flat_map(|w| [w.i + 1, w.j + 1, w.k_top + 1, w.k_bot + 1].map(|v| v as f64))
        .collect()
}

/// Run a batch of scenarios on `workers` threads, in order.
pub fn run_batch(scenarios: &[Scenario], cfg: &ScenarioConfig, workers: usize) -> Result<Vec<Solution>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let opts = cfg.simulator_options();
    pool.install(|| {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(n, sc)| {
                run_with(sc, &opts).map_err(|e| Error::Forward {
                    realization: n,
                    source: Box::new(e),
                })
            })
            .collect()
    })
}

/// Store potentials, pressures and well series of several solutions under
/// `prefix`, keeping the first `n_snapshots` snapshots.
pub fn write_solutions(w: &mut BundleWriter, prefix: &str, grid: &Grid3D, solutions: &[Solution], n_snapshots: usize) -> Result<()> {
    let n = solutions.len();
    let n_wells = solutions.first().map_or(0, |s| s.wells.len());
    let n_steps = n_snapshots - 1;
    let mut potential = Vec::with_capacity(n * n_snapshots * grid.n_cells());
    let mut pressure = Vec::with_capacity(potential.capacity());
    let mut rate = Vec::new();
    let mut bhp = Vec::new();
    for s in solutions {
        if s.potentials.len() < n_snapshots || s.wells.len() != n_wells {
            return Err(Error::ShapeMismatch {
                expected: n_snapshots,
                actual: s.potentials.len(),
            });
        }
        for t in 0..n_snapshots {
            potential.extend_from_slice(s.potentials[t].values());
            pressure.extend_from_slice(s.pressures[t].values());
        }
        for well in &s.wells {
            rate.extend(well.steps[..n_steps].iter().map(|st| units::m3_per_s_to_per_day(st.total_rate)));
            bhp.extend(well.steps[..n_steps].iter().map(|st| units::pa_to_bar(st.bhp)));
        }
    }
    let shape = grid_shape(&[n, n_snapshots], grid);
    let ax = axes(&["realization", "snapshot"]);
    w.add_array(
        &format!("{prefix}_potential"),
        &shape,
        &ax,
        "Pa",
        "potential p - rho g (z - z_top), snapshot 0 is the initial state",
        &potential,
    )?;
    w.add_array(&format!("{prefix}_pressure"), &shape, &ax, "Pa", "pressure", &pressure)?;
    let wshape = [n, n_wells, n_steps];
    let wax = ["realization", "well", "step"];
    w.add_array(
        &format!("{prefix}_well_rate"),
        &wshape,
        &wax,
        "m3/D",
        "well production rate after each step",
        &rate,
    )?;
    w.add_array(
        &format!("{prefix}_well_bhp"),
        &wshape,
        &wax,
        "bar",
        "bottom-hole pressure after each step",
        &bhp,
    )?;
    Ok(())
}

/// Per-realization scalar fields stored as `[n, nx, ny, nz]`.
pub fn read_fields(bundle: &DatasetBundle, name: &str) -> Result<Vec<ScalarField3D>> {
    let grid = bundle.manifest.grid;
    let data = bundle.read(name)?;
    let n = grid.n_cells();
    if data.len() % n != 0 {
        return Err(Error::ShapeMismatch {
            expected: n,
            actual: data.len(),
        });
    }
    data.chunks(n).map(|c| ScalarField3D::new(grid, c.to_vec())).collect()
}

/// Snapshot sequences stored as `[n, n_snapshots, nx, ny, nz]`.
pub fn read_sequences(bundle: &DatasetBundle, name: &str) -> Result<Vec<Vec<ScalarField3D>>> {
    let entry = bundle.field(name).ok_or_else(|| Error::Bundle {
        path: bundle.dir.clone(),
        message: format!("no field '{name}'"),
    })?;
    if entry.shape.len() != 5 {
        return Err(Error::Bundle {
            path: bundle.dir.clone(),
            message: format!("field '{name}' is not a [realization, snapshot, i, j, k] array"),
        });
    }
    let per_seq = entry.shape[1];
    let fields = read_fields(bundle, name)?;
    Ok(fields.chunks(per_seq).map(|c| c.to_vec()).collect())
}

fn write_basis(w: &mut BundleWriter, basis: &KleBasis) -> Result<()> {
    let grid = *basis.grid();
    let modes: Vec<f64> = basis.modes().iter().flat_map(|m| m.vector.values().iter().copied()).collect();
    w.add_array(
        "kle_eigenvalues",
        &[basis.n_modes()],
        &["mode"],
        "ln(mD)^2",
        "KLE eigenvalues, descending",
        &basis.eigenvalues(),
    )?;
    w.add_array(
        "kle_modes",
        &grid_shape(&[basis.n_modes()], &grid),
        &axes(&["mode"]),
        "1",
        "orthonormal KLE eigenvectors",
        &modes,
    )
}

fn write_samples(
    w: &mut BundleWriter,
    prefix: &str,
    basis: &KleBasis,
    samples: &[KleSample],
    cfg: &ScenarioConfig,
) -> Result<Vec<ScalarField3D>> {
    let grid = *basis.grid();
    let cov = cfg.covariance_spec();
    let lnk: Vec<ScalarField3D> = samples.iter().map(|s| sample_field(basis, s, &cov)).collect::<Result<_>>()?;
    let xi: Vec<f64> = samples.iter().flat_map(|s| s.xi.iter().copied()).collect();
    w.add_array(
        &format!("{prefix}_xi"),
        &[samples.len(), basis.n_modes()],
        &["realization", "mode"],
        "1",
        "KLE coefficients",
        &xi,
    )?;
    let flat: Vec<f64> = lnk.iter().flat_map(|f| f.values().iter().copied()).collect();
    w.add_array(
        &format!("{prefix}_lnk"),
        &grid_shape(&[samples.len()], &grid),
        &axes(&["realization"]),
        "ln(mD)",
        "log permeability",
        &flat,
    )?;
    Ok(lnk)
}

fn write_well_images(w: &mut BundleWriter, prefix: &str, grid: &Grid3D, sets: &[Vec<WellSpec>]) -> Result<()> {
    let mut images = Vec::with_capacity(sets.len() * grid.n_cells());
    let mut rows = Vec::new();
    for set in sets {
        images.extend_from_slice(well_image(grid, set)?.values());
        rows.extend(well_rows(set));
    }
    let n_wells = sets.first().map_or(0, |s| s.len());
    w.add_array(
        &format!("{prefix}_well_image"),
        &grid_shape(&[sets.len()], grid),
        &axes(&["configuration"]),
        "1",
        "1 in perforated cells",
        &images,
    )?;
    w.add_array(
        &format!("{prefix}_wells"),
        &[sets.len(), n_wells, 4],
        &["configuration", "well", "i_j_ktop_kbot"],
        "1-based index",
        "well columns and perforation interval",
        &rows,
    )
}

/// Build the labelled set (simulated), the virtual set (fields only) and
/// the metadata a trainer needs, and write them as a bundle.
pub fn export_training_set(cfg: &ScenarioConfig, opts: &ExportOptions, out: &Path) -> Result<DatasetBundle> {
    cfg.validate()?;
    if opts.nt_train == 0 || opts.nt_train > cfg.schedule.n_steps {
        return Err(Error::InvalidParameter(format!("nt_train must be in 1..={}", cfg.schedule.n_steps)));
    }
    let grid = cfg.grid()?;
    let cov = cfg.covariance_spec();
    let basis = build_basis(&grid, &cov, cfg.covariance.n_modes)?;
    let varying = opts.n_well_train > 0 || opts.n_well_virtual > 0;
    if varying && opts.n_lnk_train > 0 && opts.n_well_train == 0 {
        return Err(Error::InvalidParameter(
            "random-well mode needs n_well_train > 0 for the labelled set".into(),
        ));
    }

    let mut w = BundleWriter::create(out, grid)?;
    w.set_seed("field", cfg.seeds.field);
    w.set_seed("virtual_field", cfg.seeds.virtual_field);
    if varying {
        w.set_seed("wells", cfg.seeds.wells);
    }
    w.set_provenance("command", "export-dataset");
    w.set_provenance("config", cfg.to_toml_string()?);
    write_basis(&mut w, &basis)?;

    let n_steps = cfg.schedule.n_steps;
    let time_norm: Vec<f64> = (0..=opts.nt_train).map(|i| i as f64 / n_steps as f64).collect();
    w.add_array(
        "time_norm",
        &[opts.nt_train + 1],
        &["snapshot"],
        "1",
        "t / (n_steps dt) of each stored snapshot",
        &time_norm,
    )?;
    let horizon = cfg.dt() * n_steps as f64;
    let scales = ResidualScales {
        potential: units::bar_to_pa(cfg.schedule.p_ref_top_bar),
        time: horizon,
    };
    let props = cfg.props();
    w.set_attribute("dt_s", cfg.dt())?;
    w.set_attribute("n_steps", n_steps)?;
    w.set_attribute("nt_train", opts.nt_train)?;
    w.set_attribute("n_labelled_pairs", opts.n_lnk_train * opts.nt_train)?;
    w.set_attribute("residual_scales", scales)?;
    w.set_attribute("props_si", props)?;
    w.set_attribute("covariance", cov)?;
    w.set_attribute("loss_weights", cfg.loss_weights()?)?;
    w.set_attribute("loss", cfg.loss)?;
    w.set_attribute("training", cfg.training)?;
    w.set_attribute("random_wells", varying)?;

    let train_well_sets = if varying {
        random_well_sets(cfg, &grid, opts.n_well_train, cfg.seeds.wells)?
    } else {
        vec![cfg.well_specs()?]
    };
    if varying {
        write_well_images(&mut w, "train", &grid, &train_well_sets)?;
        let virtual_sets = random_well_sets(cfg, &grid, opts.n_well_virtual, cfg.seeds.wells.wrapping_add(1))?;
        if !virtual_sets.is_empty() {
            write_well_images(&mut w, "virtual", &grid, &virtual_sets)?;
        }
    } else {
        write_well_images(&mut w, "fixed", &grid, &train_well_sets)?;
    }

    if opts.n_lnk_train > 0 {
        let samples = draw_samples(cfg.seeds.field, opts.n_lnk_train, basis.n_modes());
        let lnk = write_samples(&mut w, "train", &basis, &samples, cfg)?;
        let scenarios: Vec<Scenario> = lnk
            .iter()
            .enumerate()
            .map(|(n, z)| {
                let mut sc = cfg.scenario(permeability_from_lnk(z))?;
                sc.wells = train_well_sets[n % train_well_sets.len()].clone();
                Ok(sc)
            })
            .collect::<Result<_>>()?;
        let solutions = run_batch(&scenarios, cfg, opts.workers)?;
        write_solutions(&mut w, "train", &grid, &solutions, opts.nt_train + 1)?;
        if varying {
            let pairing: Vec<f64> = (0..opts.n_lnk_train).map(|n| (n % train_well_sets.len()) as f64).collect();
            w.add_array(
                "train_well_config",
                &[opts.n_lnk_train],
                &["realization"],
                "index",
                "row of train_wells used by each realization",
                &pairing,
            )?;
        }

        let potentials: Vec<Vec<ScalarField3D>> = solutions.iter().map(|s| s.potentials[..=opts.nt_train].to_vec()).collect();
        let cases: Vec<PhysicsCase> = potentials
            .iter()
            .zip(&scenarios)
            .map(|(p, sc)| PhysicsCase {
                potentials: p,
                perm: &sc.perm,
                wells: &sc.wells,
            })
            .collect();
        let settings = ReportSettings {
            props: &props,
            dt: cfg.dt(),
            scales,
            weights: cfg.loss_weights()?,
            normalization: cfg.loss.normalization,
            domain: cfg.loss.domain,
            boundary_gradient: 0.0,
        };
        let mut report = evaluate_report(&[], &cases, &settings)?;
        let residual: Vec<f64> = std::mem::take(&mut report.pde_residual).into_iter().flatten().flatten().collect();
        w.add_array(
            "train_pde_residual",
            &grid_shape(&[opts.n_lnk_train, opts.nt_train], &grid),
            &axes(&["realization", "step"]),
            "1",
            "scaled PDE residual of the simulated potentials",
            &residual,
        )?;
        w.add_json("train_residual_report", &report)?;
    }

    if opts.n_lnk_virtual > 0 {
        let samples = draw_samples(cfg.seeds.virtual_field, opts.n_lnk_virtual, basis.n_modes());
        write_samples(&mut w, "virtual", &basis, &samples, cfg)?;
    }
    w.finish()
}
