//! Particle swarm optimization and PSO history matching over KLE
//! coefficients (optionally with the variance and correlation length).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::grid::ScalarField3D;
use crate::randfield::{build_basis, permeability_from_lnk, sample_field, CovarianceSpec, KleBasis, KleSample};
use crate::simulator::Solution;
use crate::units;
use crate::wells::{WellControl, WellSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoParams {
    /// ω
    pub inertia: f64,
    /// Personal-best attraction c₁.
    pub c1: f64,
    /// Global-best attraction c₂.
    pub c2: f64,
    pub max_gen: usize,
    pub pop_size: usize,
    pub v_min: Vec<f64>,
    pub v_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub seed: u64,
}

impl PsoParams {
    /// ω = 0.9, c₁ = c₂ = 2, 20 particles, 50 generations, |v| ≤ 1, |x| ≤ 4.
    pub fn standard(dim: usize, seed: u64) -> Self {
        Self::with_bounds(dim, (-4.0, 4.0), (-1.0, 1.0), seed)
    }

    /// Standard settings with uniform bounds.
    pub fn with_bounds(dim: usize, x: (f64, f64), v: (f64, f64), seed: u64) -> Self {
        Self {
            inertia: 0.9,
            c1: 2.0,
            c2: 2.0,
            max_gen: 50,
            pop_size: 20,
            v_min: vec![v.0; dim],
            v_max: vec![v.1; dim],
            x_min: vec![x.0; dim],
            x_max: vec![x.1; dim],
            seed,
        }
    }

    /// Clerc-Kennedy constriction coefficients (ω = 0.7298, c₁ = c₂ = 1.49618).
    pub fn constricted(self) -> Self {
        Self {
            inertia: 0.7298,
            c1: 1.49618,
            c2: 1.49618,
            ..self
        }
    }

    pub fn dim(&self) -> usize {
        self.x_min.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || [self.x_max.len(), self.v_min.len(), self.v_max.len()].iter().any(|&n| n != d) {
            return Err(Error::InvalidParameter("PSO bound vectors must share a positive length".into()));
        }
        if self.pop_size < 2 || self.max_gen < 1 {
            return Err(Error::InvalidParameter(format!(
                "PSO needs pop_size ≥ 2 and max_gen ≥ 1, got {} and {}",
                self.pop_size, self.max_gen
            )));
        }
        for i in 0..d {
            if !(self.x_min[i] < self.x_max[i]) || !(self.v_min[i] < self.v_max[i]) {
                return Err(Error::InvalidParameter(format!("PSO bounds in dimension {i} are empty")));
            }
        }
        if ![self.inertia, self.c1, self.c2].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("PSO coefficients must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub fitness: f64,
    pub best_x: Vec<f64>,
    pub best_fitness: f64,
}

/// Velocity and position update with given uniform draws `r1`, `r2`;
/// velocity and position are clamped to their bounds.
pub fn move_particle(p: &mut Particle, gbest: &[f64], params: &PsoParams, r1: &[f64], r2: &[f64]) {
    for d in 0..p.x.len() {
        let v = params.inertia * p.v[d] + params.c1 * r1[d] * (p.best_x[d] - p.x[d]) + params.c2 * r2[d] * (gbest[d] - p.x[d]);
        p.v[d] = v.clamp(params.v_min[d], params.v_max[d]);
        p.x[d] = (p.x[d] + p.v[d]).clamp(params.x_min[d], params.x_max[d]);
    }
}

/// Objective to minimize.
pub type Objective<'a> = dyn Fn(&[f64]) -> Result<f64> + Sync + 'a;

fn evaluate_all(positions: Vec<&[f64]>, objective: &Objective<'_>) -> Result<Vec<f64>> {
    positions
        .into_par_iter()
        .map(|x| {
            let f = objective(x)?;
            if f.is_nan() {
                return Err(Error::NonFinite("fitness"));
            }
            Ok(f)
        })
        .collect()
}

/// Swarm state between generations.
#[derive(Debug, Clone)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    pub gbest: Vec<f64>,
    pub gbest_fitness: f64,
    rngs: Vec<ChaCha8Rng>,
}

impl Swarm {
    /// Uniform random positions and velocities within the bounds, each
    /// particle drawing from its own stream of `params.seed`.
    pub fn init(params: &PsoParams, objective: &Objective<'_>) -> Result<Self> {
        params.validate()?;
        let d = params.dim();
        let mut rngs: Vec<ChaCha8Rng> = (0..params.pop_size)
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
                rng.set_stream(i as u64);
                rng
            })
            .collect();
        let mut particles: Vec<Particle> = rngs
            .iter_mut()
            .map(|rng| {
                let x: Vec<f64> = (0..d).map(|k| rng.random_range(params.x_min[k]..=params.x_max[k])).collect();
                let v: Vec<f64> = (0..d).map(|k| rng.random_range(params.v_min[k]..=params.v_max[k])).collect();
                Particle {
                    best_x: x.clone(),
                    x,
                    v,
                    fitness: f64::INFINITY,
                    best_fitness: f64::INFINITY,
                }
            })
            .collect();
        let fitness = evaluate_all(particles.iter().map(|p| p.x.as_slice()).collect(), objective)?;
        for (p, f) in particles.iter_mut().zip(fitness) {
            p.fitness = f;
            p.best_fitness = f;
        }
        let mut swarm = Self {
            gbest: particles[0].x.clone(),
            gbest_fitness: f64::INFINITY,
            particles,
            rngs,
        };
        swarm.update_gbest();
        Ok(swarm)
    }

    fn update_gbest(&mut self) {
        for p in &self.particles {
            if p.best_fitness < self.gbest_fitness {
                self.gbest_fitness = p.best_fitness;
                self.gbest = p.best_x.clone();
            }
        }
    }
}

/// One synchronous generation: move every particle, evaluate the new
/// positions concurrently, then update personal and global bests on strict
/// improvement.
pub fn pso_step(swarm: &mut Swarm, params: &PsoParams, objective: &Objective<'_>) -> Result<()> {
    let d = params.dim();
    let gbest = swarm.gbest.clone();
    for (p, rng) in swarm.particles.iter_mut().zip(&mut swarm.rngs) {
        let r1: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let r2: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        move_particle(p, &gbest, params, &r1, &r2);
    }
    let fitness = evaluate_all(swarm.particles.iter().map(|p| p.x.as_slice()).collect(), objective)?;
    for (p, f) in swarm.particles.iter_mut().zip(fitness) {
        p.fitness = f;
        if f < p.best_fitness {
            p.best_fitness = f;
            p.best_x = p.x.clone();
        }
    }
    swarm.update_gbest();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoOutcome {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    /// Best fitness after initialization (entry 0) and after every
    /// generation.
    pub trace: Vec<f64>,
}

pub fn minimize(objective: &Objective<'_>, params: &PsoParams) -> Result<PsoOutcome> {
    let mut swarm = Swarm::init(params, objective)?;
    let mut trace = Vec::with_capacity(params.max_gen + 1);
    trace.push(swarm.gbest_fitness);
    for _ in 0..params.max_gen {
        pso_step(&mut swarm, params, objective)?;
        trace.push(swarm.gbest_fitness);
    }
    Ok(PsoOutcome {
        best: swarm.gbest,
        best_fitness: swarm.gbest_fitness,
        trace,
    })
}

/// Weights of the rate, permeability and BHP mismatch terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessWeights {
    pub rate: f64,
    pub perm: f64,
    pub bhp: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self {
            rate: 1.0,
            perm: 1000.0,
            bhp: 10.0,
        }
    }
}

impl FitnessWeights {
    /// Defaults, with the BHP term switched off when every well is
    /// BHP-controlled (its BHP is then known exactly).
    pub fn for_wells(wells: &[WellSpec]) -> Self {
        let all_bhp = !wells.is_empty() && wells.iter().all(|w| matches!(w.control, WellControl::Bhp(_)));
        Self {
            bhp: if all_bhp { 0.0 } else { 10.0 },
            ..Self::default()
        }
    }
}

/// Domain in which perforation permeabilities are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PermDomain {
    #[default]
    LnMd,
    Md,
}

/// Observed (or predicted) quantities of one well, field units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellObservations {
    /// m³/D per observed step.
    pub rates: Vec<f64>,
    /// bar per observed step.
    pub bhp: Vec<f64>,
    /// ln-mD of each perforated cell.
    pub perf_lnk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessSpec {
    pub weights: FitnessWeights,
    pub observed: Vec<WellObservations>,
    pub perm_domain: PermDomain,
}

impl FitnessSpec {
    pub fn n_steps(&self) -> usize {
        self.observed.first().map_or(0, |w| w.rates.len())
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        if ![w.rate, w.perm, w.bhp].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidParameter("fitness weights must be non-negative".into()));
        }
        if self.observed.is_empty() {
            return Err(Error::InvalidParameter("no observed wells".into()));
        }
        let nt = self.n_steps();
        if nt == 0 || self.observed.iter().any(|o| o.rates.len() != nt || o.bhp.len() != nt) {
            return Err(Error::InvalidParameter(
                "every well needs the same positive number of observed steps".into(),
            ));
        }
        Ok(())
    }
}

/// Observable quantities of the first `n_steps` steps of a solution.
pub fn observe(solution: &Solution, lnk: &ScalarField3D, wells: &[WellSpec], n_steps: usize) -> Result<Vec<WellObservations>> {
    if n_steps == 0 || n_steps > solution.n_steps() || wells.len() != solution.wells.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot observe {n_steps} steps of {} wells from a {}-step solution with {} wells",
            wells.len(),
            solution.n_steps(),
            solution.wells.len()
        )));
    }
    Ok(wells
        .iter()
        .zip(&solution.wells)
        .map(|(spec, series)| WellObservations {
            rates: series.steps[..n_steps]
                .iter()
                .map(|s| units::m3_per_s_to_per_day(s.total_rate))
                .collect(),
            bhp: series.steps[..n_steps].iter().map(|s| units::pa_to_bar(s.bhp)).collect(),
            perf_lnk: spec.layers().map(|k| lnk.get(spec.i, spec.j, k)).collect(),
        })
        .collect())
}

fn sq(a: &[f64], b: &[f64], f: impl Fn(f64) -> f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            expected: b.len(),
            actual: a.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (f(*x) - f(*y)).powi(2)).sum())
}

/// Weighted mean-square mismatch between predicted and observed wells.
pub fn fitness_value(spec: &FitnessSpec, predicted: &[WellObservations]) -> Result<f64> {
    spec.validate()?;
    if predicted.len() != spec.observed.len() {
        return Err(Error::ShapeMismatch {
            expected: spec.observed.len(),
            actual: predicted.len(),
        });
    }
    let perm_map = |v: f64| match spec.perm_domain {
        PermDomain::LnMd => v,
        PermDomain::Md => v.exp(),
    };
    let (mut rate, mut bhp, mut perm) = (0.0, 0.0, 0.0);
    let mut n_perm = 0;
    for (p, o) in predicted.iter().zip(&spec.observed) {
        rate += sq(&p.rates, &o.rates, |v| v)?;
        bhp += sq(&p.bhp, &o.bhp, |v| v)?;
        perm += sq(&p.perf_lnk, &o.perf_lnk, perm_map)?;
        n_perm += o.perf_lnk.len();
    }
    let n_series = (spec.n_steps() * spec.observed.len()) as f64;
    let w = spec.weights;
    let mut fv = w.rate * rate / n_series + w.bhp * bhp / n_series;
    if n_perm > 0 {
        fv += w.perm * perm / n_perm as f64;
    }
    Ok(fv)
}

/// Multiplicative Gaussian noise `v·(1 + level·N(0,1))` on rates and BHPs.
pub fn add_noise(observed: &[WellObservations], level: f64, seed: u64) -> Vec<WellObservations> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = |v: &f64| {
        let n: f64 = StandardNormal.sample(&mut rng);
        v * (1.0 + level * n)
    };
    observed
        .iter()
        .map(|o| WellObservations {
            rates: o.rates.iter().map(&mut noisy).collect(),
            bhp: o.bhp.iter().map(&mut noisy).collect(),
            perf_lnk: o.perf_lnk.clone(),
        })
        .collect()
}

/// What is searched for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Search {
    /// Only the KLE coefficients; the covariance is known.
    KnownStats(CovarianceSpec),
    /// Coefficients plus variance and isotropic correlation length within
    /// the given ranges; the mean is known.
    UnknownStats {
        mean_lnk: f64,
        variance: (f64, f64),
        corr: (f64, f64),
    },
}

impl Search {
    /// Default ranges: σ² ∈ [0, 1], η ∈ [130, 190] m.
    pub fn unknown_stats(mean_lnk: f64) -> Self {
        Search::UnknownStats {
            mean_lnk,
            variance: (0.0, 1.0),
            corr: (130.0, 190.0),
        }
    }

    pub fn extra_dims(&self) -> usize {
        match self {
            Search::KnownStats(_) => 0,
            Search::UnknownStats { .. } => 2,
        }
    }

    /// Standard PSO settings extended to the hyperparameter dimensions, whose
    /// velocity bound is a quarter of their range.
    pub fn params(&self, n_modes: usize, seed: u64) -> PsoParams {
        let mut p = PsoParams::standard(n_modes, seed);
        if let Search::UnknownStats { variance, corr, .. } = self {
            for (lo, hi) in [*variance, *corr] {
                let v = (hi - lo) / 4.0;
                p.x_min.push(lo);
                p.x_max.push(hi);
                p.v_min.push(-v);
                p.v_max.push(v);
            }
        }
        p
    }
}

/// History-matching problem: forward model, KLE parameterization and
/// observations.
pub struct Inversion<'a> {
    pub forward: &'a dyn ForwardModel,
    /// Basis for known statistics; for unknown statistics only its mode
    /// count is used and the basis is rebuilt for every candidate η.
    pub basis: &'a KleBasis,
    pub spec: FitnessSpec,
    pub search: Search,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub trace: Vec<f64>,
    pub covariance: CovarianceSpec,
    pub lnk: ScalarField3D,
}

impl Inversion<'_> {
    pub fn dim(&self) -> usize {
        self.basis.n_modes() + self.search.extra_dims()
    }

    /// ln-mD field and covariance represented by a candidate.
    pub fn candidate_field(&self, candidate: &[f64]) -> Result<(ScalarField3D, CovarianceSpec)> {
        let m = self.basis.n_modes();
        if candidate.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                actual: candidate.len(),
            });
        }
        let sample = KleSample::new(candidate[..m].to_vec())?;
        match &self.search {
            Search::KnownStats(cov) => Ok((sample_field(self.basis, &sample, cov)?, *cov)),
            Search::UnknownStats { mean_lnk, .. } => {
                let (variance, eta) = (candidate[m], candidate[m + 1]);
                let unit = CovarianceSpec::isotropic(*mean_lnk, 1.0, eta);
                let basis = build_basis(self.basis.grid(), &unit, m)?;
                let cov = CovarianceSpec { variance, ..unit };
                Ok((sample_field(&basis, &sample, &cov)?, cov))
            }
        }
    }

    /// Predicted observations of a candidate.
    pub fn predict(&self, candidate: &[f64]) -> Result<(Solution, ScalarField3D)> {
        let (lnk, _) = self.candidate_field(candidate)?;
        let solution = self.forward.evaluate(0, &permeability_from_lnk(&lnk))?;
        Ok((solution, lnk))
    }

    pub fn fitness(&self, candidate: &[f64]) -> Result<f64> {
        let (solution, lnk) = self.predict(candidate)?;
        let predicted = observe(&solution, &lnk, &self.forward.scenario().wells, self.spec.n_steps())?;
        fitness_value(&self.spec, &predicted)
    }

    pub fn run(&self, params: &PsoParams) -> Result<InversionResult> {
        self.spec.validate()?;
        if params.dim() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.dim(),
                actual: params.dim(),
            });
        }
        let objective = |x: &[f64]| self.fitness(x);
        let out = minimize(&objective, params)?;
        let (lnk, covariance) = self.candidate_field(&out.best)?;
        Ok(InversionResult {
            best: out.best,
            best_fitness: out.best_fitness,
            trace: out.trace,
            covariance,
            lnk,
        })
    }
}

/// Run a history-matching inversion.
pub fn invert(problem: &Inversion<'_>, params: &PsoParams) -> Result<InversionResult> {
    problem.run(params)
}
