//! Monte Carlo uncertainty quantification: streaming pointwise moments of
//! the potential field and of every well series over a KLE ensemble.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::grid::{FormationProps, Grid3D, ScalarField3D};
use crate::randfield::{draw_samples, permeability_from_lnk, sample_field, CovarianceSpec, KleBasis, KleSample};
use crate::simulator::Solution;

/// Streaming mean and sum of squared deviations of a vector quantity.
/// Variance uses the population convention (divisor N).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Moments {
    pub fn new(len: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; len],
            m2: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                actual: x.len(),
            });
        }
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
        Ok(())
    }

    /// Pooled moments of two disjoint samples.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                actual: other.len(),
            });
        }
        if other.n == 0 {
            return Ok(self.clone());
        }
        if self.n == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let (mean, m2) = self
            .mean
            .iter()
            .zip(&other.mean)
            .zip(self.m2.iter().zip(&other.m2))
            .map(|((ma, mb), (sa, sb))| {
                let delta = mb - ma;
                // weighted form keeps merge(a, b) and merge(b, a) within rounding
                ((na * ma + nb * mb) / n, sa + sb + delta * delta * na * nb / n)
            })
            .unzip();
        Ok(Self {
            n: self.n + other.n,
            mean,
            m2,
        })
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.n == 0 {
            return vec![0.0; self.len()];
        }
        self.m2.iter().map(|s| (s / self.n as f64).max(0.0)).collect()
    }
}

/// Ensemble statistics of a forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub grid: Grid3D,
    /// One entry per snapshot (0 = initial state).
    pub potential: Vec<Moments>,
    pub well_names: Vec<String>,
    /// Per well, over steps.
    pub rate: Vec<Moments>,
    pub bhp: Vec<Moments>,
    /// Realizations whose forward evaluation failed and were skipped.
    pub skipped: Vec<usize>,
}

impl EnsembleStats {
    pub fn empty(grid: Grid3D, n_steps: usize, well_names: Vec<String>) -> Self {
        let n_wells = well_names.len();
        Self {
            grid,
            potential: vec![Moments::new(grid.n_cells()); n_steps + 1],
            well_names,
            rate: vec![Moments::new(n_steps); n_wells],
            bhp: vec![Moments::new(n_steps); n_wells],
            skipped: Vec::new(),
        }
    }

    /// Number of realizations accumulated.
    pub fn count(&self) -> usize {
        self.potential.first().map_or(0, |m| m.n)
    }

    pub fn n_steps(&self) -> usize {
        self.potential.len().saturating_sub(1)
    }

    pub fn push(&mut self, solution: &Solution) -> Result<()> {
        if solution.potentials.len() != self.potential.len() || solution.wells.len() != self.rate.len() {
            return Err(Error::ShapeMismatch {
                expected: self.potential.len(),
                actual: solution.potentials.len(),
            });
        }
        for (m, phi) in self.potential.iter_mut().zip(&solution.potentials) {
            m.push(phi.values())?;
        }
        for ((r, b), w) in self.rate.iter_mut().zip(&mut self.bhp).zip(&solution.wells) {
            r.push(&w.rates())?;
            b.push(&w.bhps())?;
        }
        Ok(())
    }

    pub fn mean_potential(&self, snapshot: usize) -> ScalarField3D {
        ScalarField3D::new(self.grid, self.potential[snapshot].mean.clone()).expect("shape fixed at construction")
    }

    pub fn variance_potential(&self, snapshot: usize) -> ScalarField3D {
        ScalarField3D::new(self.grid, self.potential[snapshot].variance()).expect("shape fixed at construction")
    }

    /// Mean pressure; the hydrostatic shift is deterministic so the
    /// pressure variance equals the potential variance.
    pub fn mean_pressure(&self, snapshot: usize, props: &FormationProps) -> ScalarField3D {
        crate::grid::pressure_from_potential(&self.mean_potential(snapshot), props)
    }

    pub fn is_finite(&self) -> bool {
        self.potential
            .iter()
            .chain(&self.rate)
            .chain(&self.bhp)
            .all(|m| m.mean.iter().chain(&m.m2).all(|v| v.is_finite()))
    }
}

/// Pooled statistics of two disjoint ensembles.
pub fn merge_stats(a: &EnsembleStats, b: &EnsembleStats) -> Result<EnsembleStats> {
    if a.grid != b.grid || a.potential.len() != b.potential.len() || a.well_names != b.well_names {
        return Err(Error::ShapeMismatch {
            expected: a.potential.len(),
            actual: b.potential.len(),
        });
    }
    let merge_all = |x: &[Moments], y: &[Moments]| -> Result<Vec<Moments>> { x.iter().zip(y).map(|(p, q)| p.merge(q)).collect() };
    let mut skipped: Vec<usize> = a.skipped.iter().chain(&b.skipped).copied().collect();
    skipped.sort_unstable();
    Ok(EnsembleStats {
        grid: a.grid,
        potential: merge_all(&a.potential, &b.potential)?,
        well_names: a.well_names.clone(),
        rate: merge_all(&a.rate, &b.rate)?,
        bhp: merge_all(&a.bhp, &b.bhp)?,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Abort on the first failed realization.
    #[default]
    FailFast,
    /// Record the index and continue.
    Skip,
}

#[derive(Debug, Clone)]
pub struct EnsembleOptions {
    /// Worker threads for forward evaluations.
    pub workers: usize,
    /// Realizations evaluated per parallel batch; bounds memory.
    pub batch_size: usize,
    pub failure: FailurePolicy,
    /// Use this coefficient vector for every realization instead of drawing.
    pub fixed_sample: Option<KleSample>,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            batch_size: 64,
            failure: FailurePolicy::FailFast,
            fixed_sample: None,
        }
    }
}

/// Draw `n_real` KLE realizations from `seed`, evaluate the forward model on
/// each and accumulate statistics. Realizations are folded in index order,
/// so the result does not depend on the worker count.
pub fn run_ensemble(
    basis: &KleBasis,
    cov: &CovarianceSpec,
    n_real: usize,
    seed: u64,
    forward: &dyn ForwardModel,
    opts: &EnsembleOptions,
) -> Result<EnsembleStats> {
    if n_real < 2 {
        return Err(Error::InvalidParameter(format!(
            "ensemble needs at least 2 realizations, got {n_real}"
        )));
    }
    if opts.workers == 0 || opts.batch_size == 0 {
        return Err(Error::InvalidParameter("workers and batch size must be positive".into()));
    }
    let scenario = forward.scenario();
    if basis.grid() != &scenario.grid {
        return Err(Error::InvalidParameter("KLE basis and scenario grids differ".into()));
    }
    let samples = match &opts.fixed_sample {
        Some(s) => vec![s.clone(); n_real],
        None => draw_samples(seed, n_real, basis.n_modes()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let names = scenario.wells.iter().map(|w| w.name.clone()).collect();
    let mut stats = EnsembleStats::empty(scenario.grid, scenario.n_steps, names);

    let indexed: Vec<(usize, &KleSample)> = samples.iter().enumerate().collect();
    for batch in indexed.chunks(opts.batch_size) {
        let results: Vec<(usize, Result<Solution>)> = pool.install(|| {
            batch
                .par_iter()
                .map(|&(index, sample)| {
                    let out = sample_field(basis, sample, cov).and_then(|lnk| forward.evaluate(index, &permeability_from_lnk(&lnk)));
                    (index, out)
                })
                .collect()
        });
        for (index, out) in results {
            match out {
                Ok(sol) => stats.push(&sol)?,
                Err(e) => match opts.failure {
                    FailurePolicy::FailFast => {
                        return Err(Error::Forward {
                            realization: index,
                            source: Box::new(e),
                        })
                    }
                    FailurePolicy::Skip => stats.skipped.push(index),
                },
            }
        }
    }
    if stats.count() == 0 {
        return Err(Error::InvalidParameter("every realization failed".into()));
    }
    Ok(stats)
}
