//! `subflow` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use subflow::bundle::{BundleWriter, DatasetBundle};
use subflow::config::{ControlKind, ScenarioConfig};
use subflow::export::{export_training_set, read_fields, read_sequences, write_solutions, ExportOptions};
use subflow::forward::{ForwardModel, PrecomputedForward, SimulatorForward};
use subflow::grid::ScalarField3D;
use subflow::metrics::evaluate_fields;
use subflow::pso::{add_noise, invert, observe, FitnessSpec, Inversion, WellObservations};
use subflow::randfield::{build_basis, draw_samples, permeability_from_lnk, sample_field, CovarianceSpec, KleSample};
use subflow::residual::{evaluate_report, LabelledCase, PhysicsCase, ReportSettings, ResidualScales};
use subflow::simulator::{run_with, Solution};
use subflow::units;
use subflow::uq::{run_ensemble, EnsembleOptions, FailurePolicy};
use subflow::wells::{WellControl, WellSpec, DEFAULT_WELL_RADIUS};
use subflow::Error;

#[derive(Parser)]
#[command(
    name = "subflow",
    version,
    about = "Single-phase 3D reservoir simulation, KLE fields, Monte Carlo UQ and PSO history matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a preset configuration as TOML.
    Config {
        #[arg(long, value_enum, default_value_t = Preset::Case1)]
        preset: Preset,
        #[arg(long, num_args = 3, value_names = ["NX", "NY", "NZ"])]
        dims: Option<Vec<usize>>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw KLE log-permeability realizations.
    Genfield {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Overrides seeds.field.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the simulator and write a bundle plus wells.csv.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Permeability source.
        #[arg(long, value_enum, default_value_t = FieldSource::Sample)]
        field: FieldSource,
        /// Which draw of seeds.field to use with `--field sample`.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Bundle and field name with `--field bundle`, e.g. `run/:train_lnk`.
        #[arg(long)]
        from: Option<String>,
    },
    /// Evaluate the physics residual and loss terms of potentials in a bundle.
    ResidualCheck {
        #[arg(long)]
        bundle: PathBuf,
        /// Defaults to the configuration recorded in the bundle.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Field prefix (`sim` for simulate output, `train` for exports).
        #[arg(long, default_value = "sim")]
        prefix: String,
        /// Predicted potentials `[n, snapshot, i, j, k]` compared with the
        /// stored ones; without it the stored potentials are checked.
        #[arg(long)]
        predicted: Option<String>,
        /// Exit with status 3 if the largest residual exceeds this value.
        #[arg(long)]
        max_residual: Option<f64>,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a labelled/virtual training set.
    ExportDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        nt_train: Option<usize>,
        #[arg(long)]
        n_virtual: Option<usize>,
        #[arg(long)]
        n_well_train: Option<usize>,
        #[arg(long)]
        n_well_virtual: Option<usize>,
    },
    /// Monte Carlo statistics over a KLE ensemble.
    Uq {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides uq.n_real.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Use stored potentials (`dir:field`, `[n, snapshot, i, j, k]`)
        /// instead of the simulator.
        #[arg(long)]
        predictions: Option<String>,
        /// Skip failed realizations instead of aborting.
        #[arg(long)]
        skip_failures: bool,
    },
    /// PSO history matching against well observations.
    Invert {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::KnownStats)]
        mode: Mode,
        /// Observations as JSON (list of {rates, bhp, perf_lnk} per well);
        /// without it a synthetic truth is simulated.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Draw of seeds.field used as the synthetic truth.
        #[arg(long, default_value_t = 0)]
        truth_index: usize,
        /// Synthetic-truth variance (unknown-stats mode).
        #[arg(long, default_value_t = 0.6)]
        truth_variance: f64,
        /// Synthetic-truth correlation length, m (unknown-stats mode).
        #[arg(long, default_value_t = 170.0)]
        truth_corr: f64,
        /// Overrides pso.noise.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Relative L2 and R² tables between two bundle fields.
    Metrics {
        /// `dir:field`
        #[arg(long)]
        pred: String,
        /// `dir:field`
        #[arg(long)]
        reference: String,
        /// CSV output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldSource {
    Sample,
    Mean,
    Bundle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Case1,
    Case2,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Mode {
    KnownStats,
    UnknownStats,
}

/// Failure with a process exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config { .. } => 2,
            e if e.is_numerical() => 3,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Config { preset, dims, out } => {
            let [nx, ny, nz] = match dims.as_deref() {
                Some(&[nx, ny, nz]) => [nx, ny, nz],
                _ => [60, 220, 10],
            };
            let cfg = match preset {
                Preset::Case1 => ScenarioConfig::case1(nx, ny, nz),
                Preset::Case2 => ScenarioConfig::case2(nx, ny, nz),
            };
            cfg.validate()?;
            let text = cfg.to_toml_string()?;
            match out {
                Some(path) => fs::write(path, text)?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Genfield { config, n, seed, out } => genfield(&config, n, seed, &out),
        Command::Simulate {
            config,
            out,
            field,
            index,
            from,
        } => simulate(&config, &out, field, index, from.as_deref()),
        Command::ResidualCheck {
            bundle,
            config,
            prefix,
            predicted,
            max_residual,
            out,
        } => residual_check(
            &bundle,
            config.as_deref(),
            &prefix,
            predicted.as_deref(),
            max_residual,
            out.as_deref(),
        ),
        Command::ExportDataset {
            config,
            out,
            workers,
            n_train,
            nt_train,
            n_virtual,
            n_well_train,
            n_well_virtual,
        } => {
            let cfg = ScenarioConfig::load(&config)?;
            let mut opts = ExportOptions::from(&cfg.training);
            opts.workers = workers;
            opts.n_lnk_train = n_train.unwrap_or(opts.n_lnk_train);
            opts.nt_train = nt_train.unwrap_or(opts.nt_train);
            opts.n_lnk_virtual = n_virtual.unwrap_or(opts.n_lnk_virtual);
            opts.n_well_train = n_well_train.unwrap_or(opts.n_well_train);
            opts.n_well_virtual = n_well_virtual.unwrap_or(opts.n_well_virtual);
            let b = export_training_set(&cfg, &opts, &out)?;
            println!("wrote {} fields to {}", b.manifest.fields.len(), out.display());
            Ok(())
        }
        Command::Uq {
            config,
            out,
            n,
            workers,
            predictions,
            skip_failures,
        } => uq(&config, &out, n, workers, predictions.as_deref(), skip_failures),
        Command::Invert {
            config,
            out,
            mode,
            observations,
            truth_index,
            truth_variance,
            truth_corr,
            noise,
        } => run_invert(
            &config,
            &out,
            mode,
            observations.as_deref(),
            truth_index,
            truth_variance,
            truth_corr,
            noise,
        ),
        Command::Metrics { pred, reference, out } => metrics(&pred, &reference, out.as_deref()),
    }
}

fn split_source(spec: &str) -> CliResult<(PathBuf, String)> {
    match spec.rsplit_once(':') {
        Some((dir, field)) if !dir.is_empty() && !field.is_empty() => Ok((PathBuf::from(dir), field.to_string())),
        _ => Err(usage(format!("expected DIR:FIELD, got '{spec}'"))),
    }
}

fn new_writer(out: &Path, cfg: &ScenarioConfig, command: &str) -> CliResult<BundleWriter> {
    let mut w = BundleWriter::create(out, cfg.grid()?)?;
    w.set_provenance("command", command);
    w.set_provenance("config", cfg.to_toml_string()?);
    Ok(w)
}

fn stack(fields: &[ScalarField3D]) -> Vec<f64> {
    fields.iter().flat_map(|f| f.values().iter().copied()).collect()
}

fn genfield(config: &Path, n: usize, seed: Option<u64>, out: &Path) -> CliResult {
    if n == 0 {
        return Err(usage("--n must be positive"));
    }
    let cfg = ScenarioConfig::load(config)?;
    let grid = cfg.grid()?;
    let cov = cfg.covariance_spec();
    let basis = build_basis(&grid, &cov, cfg.covariance.n_modes)?;
    let seed = seed.unwrap_or(cfg.seeds.field);
    let samples = draw_samples(seed, n, basis.n_modes());
    let fields: Vec<ScalarField3D> = samples.iter().map(|s| sample_field(&basis, s, &cov)).collect::<Result<_, _>>()?;
    let mut w = new_writer(out, &cfg, "genfield")?;
    w.set_seed("field", seed);
    let [nx, ny, nz] = grid.dims();
    let xi: Vec<f64> = samples.iter().flat_map(|s| s.xi.iter().copied()).collect();
    w.add_array("xi", &[n, basis.n_modes()], &["realization", "mode"], "1", "KLE coefficients", &xi)?;
    w.add_array(
        "lnk",
        &[n, nx, ny, nz],
        &["realization", "i", "j", "k"],
        "ln(mD)",
        "log permeability",
        &stack(&fields),
    )?;
    w.add_array(
        "kle_eigenvalues",
        &[basis.n_modes()],
        &["mode"],
        "ln(mD)^2",
        "KLE eigenvalues",
        &basis.eigenvalues(),
    )?;
    w.finish()?;
    println!("wrote {n} realizations to {}", out.display());
    Ok(())
}

#[derive(Serialize)]
struct WellRow<'a> {
    well_id: &'a str,
    step: usize,
    time_days: f64,
    rate_m3_per_day: f64,
    bhp_bar: f64,
}

fn write_wells_csv(path: &Path, solution: &Solution) -> CliResult {
    let mut w = csv::Writer::from_path(path)?;
    for well in &solution.wells {
        for (s, st) in well.steps.iter().enumerate() {
            w.serialize(WellRow {
                well_id: &well.name,
                step: s + 1,
                time_days: units::s_to_days(solution.dt * (s + 1) as f64),
                rate_m3_per_day: units::m3_per_s_to_per_day(st.total_rate),
                bhp_bar: units::pa_to_bar(st.bhp),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn simulate(config: &Path, out: &Path, field: FieldSource, index: usize, from: Option<&str>) -> CliResult {
    let cfg = ScenarioConfig::load(config)?;
    let grid = cfg.grid()?;
    let cov = cfg.covariance_spec();
    let lnk = match field {
        FieldSource::Mean => ScalarField3D::filled(grid, cov.mean_lnk),
        FieldSource::Sample => {
            let basis = build_basis(&grid, &cov, cfg.covariance.n_modes)?;
            let sample = draw_samples(cfg.seeds.field, index + 1, basis.n_modes()).swap_remove(index);
            sample_field(&basis, &sample, &cov)?
        }
        FieldSource::Bundle => {
            let (dir, name) = split_source(from.ok_or_else(|| usage("--field bundle needs --from DIR:FIELD"))?)?;
            let fields = read_fields(&DatasetBundle::open(dir)?, &name)?;
            fields
                .into_iter()
                .nth(index)
                .ok_or_else(|| usage(format!("field '{name}' has no realization {index}")))?
        }
    };
    let scenario = cfg.scenario(permeability_from_lnk(&lnk))?;
    let solution = run_with(&scenario, &cfg.simulator_options())?;
    let mut w = new_writer(out, &cfg, "simulate")?;
    w.set_seed("field", cfg.seeds.field);
    w.set_attribute("field_index", index)?;
    let [nx, ny, nz] = grid.dims();
    w.add_array(
        "sim_lnk",
        &[1, nx, ny, nz],
        &["realization", "i", "j", "k"],
        "ln(mD)",
        "log permeability",
        lnk.values(),
    )?;
    write_solutions(&mut w, "sim", &grid, std::slice::from_ref(&solution), scenario.n_steps + 1)?;
    w.add_json("sim_diagnostics", &solution.diagnostics)?;
    w.finish()?;
    write_wells_csv(&out.join("wells.csv"), &solution)?;
    println!("simulated {} steps; bundle and wells.csv in {}", scenario.n_steps, out.display());
    Ok(())
}

fn bundle_config(bundle: &DatasetBundle, config: Option<&Path>) -> CliResult<ScenarioConfig> {
    match config {
        Some(p) => Ok(ScenarioConfig::load(p)?),
        None => {
            let text = bundle
                .manifest
                .provenance
                .get("config")
                .ok_or_else(|| usage("bundle records no configuration; pass --config"))?;
            Ok(ScenarioConfig::from_toml_str(text)?)
        }
    }
}

/// Wells of each realization of a bundle: random configurations when
/// recorded, otherwise the configured wells.
fn bundle_wells(bundle: &DatasetBundle, cfg: &ScenarioConfig, prefix: &str, n: usize) -> CliResult<Vec<Vec<WellSpec>>> {
    let rows_name = format!("{prefix}_wells");
    let pairing_name = format!("{prefix}_well_config");
    if !(bundle.has_field(&rows_name) && bundle.has_field(&pairing_name)) {
        return Ok(vec![cfg.well_specs()?; n]);
    }
    let entry = bundle.field(&rows_name).expect("checked above");
    let per_set = entry.shape[1];
    let rows = bundle.read(&rows_name)?;
    let pairing = bundle.read(&pairing_name)?;
    let control = match cfg.training.random_well_control {
        ControlKind::Rate => WellControl::Rate(units::m3_per_day_to_si(cfg.training.random_well_value)),
        ControlKind::Bhp => WellControl::Bhp(units::bar_to_pa(cfg.training.random_well_value)),
    };
    let sets: Vec<Vec<WellSpec>> = rows
        .chunks(per_set * 4)
        .map(|set| {
            set.chunks(4)
                .enumerate()
                .map(|(n, r)| {
                    WellSpec::from_one_based(
                        format!("P{}", n + 1),
                        r[0] as usize,
                        r[1] as usize,
                        r[2] as usize,
                        r[3] as usize,
                        DEFAULT_WELL_RADIUS,
                        control,
                    )
                })
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(pairing.iter().map(|&p| sets[p as usize].clone()).collect())
}

#[derive(Serialize)]
struct ResidualSummary {
    data: f64,
    pde: f64,
    bc: f64,
    total: f64,
    max_abs_residual: f64,
    n_physics: usize,
    n_steps: usize,
}

fn residual_check(
    bundle_dir: &Path,
    config: Option<&Path>,
    prefix: &str,
    predicted: Option<&str>,
    max_residual: Option<f64>,
    out: Option<&Path>,
) -> CliResult {
    let bundle = DatasetBundle::open(bundle_dir)?;
    let cfg = bundle_config(&bundle, config)?;
    let stored = read_sequences(&bundle, &format!("{prefix}_potential"))?;
    let lnk = read_fields(&bundle, &format!("{prefix}_lnk"))?;
    if lnk.len() != stored.len() {
        return Err(usage(format!(
            "{} permeability fields for {} potential sequences",
            lnk.len(),
            stored.len()
        )));
    }
    let predicted = match predicted {
        Some(name) => Some(read_sequences(&bundle, name)?),
        None => None,
    };
    let perms: Vec<ScalarField3D> = lnk.iter().map(permeability_from_lnk).collect();
    let wells = bundle_wells(&bundle, &cfg, prefix, stored.len())?;
    let checked = predicted.as_ref().unwrap_or(&stored);
    let physics: Vec<PhysicsCase> = checked
        .iter()
        .zip(&perms)
        .zip(&wells)
        .map(|((p, k), w)| PhysicsCase {
            potentials: p,
            perm: k,
            wells: w,
        })
        .collect();
    let labelled: Vec<LabelledCase> = match &predicted {
        Some(pred) => pred
            .iter()
            .zip(&stored)
            .map(|(p, r)| LabelledCase {
                predicted: p,
                reference: r,
            })
            .collect(),
        None => Vec::new(),
    };
    let props = cfg.props();
    let settings = ReportSettings {
        props: &props,
        dt: cfg.dt(),
        scales: ResidualScales {
            potential: units::bar_to_pa(cfg.schedule.p_ref_top_bar),
            time: cfg.dt() * cfg.schedule.n_steps as f64,
        },
        weights: cfg.loss_weights()?,
        normalization: cfg.loss.normalization,
        domain: cfg.loss.domain,
        boundary_gradient: 0.0,
    };
    let report = evaluate_report(&labelled, &physics, &settings)?;
    let summary = ResidualSummary {
        data: report.data,
        pde: report.pde,
        bc: report.bc,
        total: report.total,
        max_abs_residual: report.max_abs_residual(),
        n_physics: report.counts.n_kv,
        n_steps: report.counts.n_tv,
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain numbers serialize"));
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report).expect("report serializes"))?;
    }
    if let Some(limit) = max_residual {
        // stored values are f32, so compare against what the file can hold
        if summary.max_abs_residual > limit {
            return Err(Failure {
                code: 3,
                message: format!("largest residual {:.3e} exceeds {limit:.3e}", summary.max_abs_residual),
            });
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct WellStatsRow<'a> {
    well_id: &'a str,
    step: usize,
    time_days: f64,
    rate_mean_m3_per_day: f64,
    rate_var: f64,
    bhp_mean_bar: f64,
    bhp_var: f64,
}

fn uq(config: &Path, out: &Path, n: Option<usize>, workers: Option<usize>, predictions: Option<&str>, skip: bool) -> CliResult {
    let cfg = ScenarioConfig::load(config)?;
    let grid = cfg.grid()?;
    let cov = cfg.covariance_spec();
    let basis = build_basis(&grid, &cov, cfg.covariance.n_modes)?;
    let template = cfg.mean_scenario()?;
    let n_real = n.unwrap_or(cfg.uq.n_real);
    let opts = EnsembleOptions {
        workers: workers.unwrap_or(cfg.uq.workers),
        batch_size: cfg.uq.batch_size,
        failure: if skip { FailurePolicy::Skip } else { FailurePolicy::FailFast },
        fixed_sample: None,
    };
    let sim;
    let stored;
    let forward: &dyn ForwardModel = match predictions {
        None => {
            sim = SimulatorForward {
                template,
                options: cfg.simulator_options(),
            };
            &sim
        }
        Some(spec) => {
            let (dir, name) = split_source(spec)?;
            stored = PrecomputedForward {
                template,
                potentials: read_sequences(&DatasetBundle::open(dir)?, &name)?,
            };
            &stored
        }
    };
    let stats = run_ensemble(&basis, &cov, n_real, cfg.seeds.field, forward, &opts)?;

    let mut w = new_writer(out, &cfg, "uq")?;
    w.set_seed("field", cfg.seeds.field);
    w.set_attribute("n_real", stats.count())?;
    w.set_attribute("skipped", &stats.skipped)?;
    let n_snap = stats.potential.len();
    let [nx, ny, nz] = grid.dims();
    let shape = [n_snap, nx, ny, nz];
    let ax = ["snapshot", "i", "j", "k"];
    let mean: Vec<f64> = stats.potential.iter().flat_map(|m| m.mean.iter().copied()).collect();
    let var: Vec<f64> = stats.potential.iter().flat_map(|m| m.variance()).collect();
    let props = cfg.props();
    let mean_p: Vec<f64> = (0..n_snap).flat_map(|t| stats.mean_pressure(t, &props).into_values()).collect();
    w.add_array("mean_potential", &shape, &ax, "Pa", "ensemble mean potential", &mean)?;
    w.add_array(
        "var_potential",
        &shape,
        &ax,
        "Pa^2",
        "ensemble variance (population) of potential and pressure",
        &var,
    )?;
    w.add_array("mean_pressure", &shape, &ax, "Pa", "ensemble mean pressure", &mean_p)?;
    w.finish()?;

    let mut csv_out = csv::Writer::from_path(out.join("well_stats.csv"))?;
    for (k, name) in stats.well_names.iter().enumerate() {
        let (rm, rv) = (&stats.rate[k].mean, stats.rate[k].variance());
        let (bm, bv) = (&stats.bhp[k].mean, stats.bhp[k].variance());
        for s in 0..stats.n_steps() {
            csv_out.serialize(WellStatsRow {
                well_id: name,
                step: s + 1,
                time_days: cfg.schedule.dt_days * (s + 1) as f64,
                rate_mean_m3_per_day: units::m3_per_s_to_per_day(rm[s]),
                rate_var: units::m3_per_s_to_per_day(units::m3_per_s_to_per_day(rv[s])),
                bhp_mean_bar: units::pa_to_bar(bm[s]),
                bhp_var: units::pa_to_bar(units::pa_to_bar(bv[s])),
            })?;
        }
    }
    csv_out.flush()?;
    println!(
        "{} realizations ({} skipped); statistics in {}",
        stats.count(),
        stats.skipped.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    generation: usize,
    best_fitness: f64,
}

#[derive(Serialize)]
struct InversionSummary {
    mode: &'static str,
    best: Vec<f64>,
    best_fitness: f64,
    variance: f64,
    corr_length: f64,
    forecast_rate_relative_l2: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_invert(
    config: &Path,
    out: &Path,
    mode: Mode,
    observations: Option<&Path>,
    truth_index: usize,
    truth_variance: f64,
    truth_corr: f64,
    noise: Option<f64>,
) -> CliResult {
    let cfg = ScenarioConfig::load(config)?;
    let grid = cfg.grid()?;
    let cov = cfg.covariance_spec();
    let n_modes = cfg.covariance.n_modes;
    let basis = build_basis(&grid, &cov, n_modes)?;
    let forward = SimulatorForward {
        template: cfg.mean_scenario()?,
        options: cfg.simulator_options(),
    };
    let wells = cfg.well_specs()?;
    let obs_steps = cfg.pso.obs_steps;
    fs::create_dir_all(out)?;

    let mut truth: Option<(ScalarField3D, Solution)> = None;
    let observed: Vec<WellObservations> = match observations {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let truth_cov = match mode {
                Mode::KnownStats => cov,
                Mode::UnknownStats => CovarianceSpec::isotropic(cov.mean_lnk, truth_variance, truth_corr),
            };
            let truth_basis = build_basis(&grid, &truth_cov, n_modes)?;
            let sample: KleSample = draw_samples(cfg.seeds.field, truth_index + 1, n_modes).swap_remove(truth_index);
            let lnk = sample_field(&truth_basis, &sample, &truth_cov)?;
            let sol = forward.evaluate(0, &permeability_from_lnk(&lnk))?;
            let clean = observe(&sol, &lnk, &wells, obs_steps)?;
            let noisy = add_noise(&clean, noise.unwrap_or(cfg.pso.noise), cfg.seeds.noise);
            fs::write(
                out.join("observations.json"),
                serde_json::to_string_pretty(&noisy).expect("plain numbers"),
            )?;
            truth = Some((lnk, sol));
            noisy
        }
    };
    let search = match mode {
        Mode::KnownStats => cfg.search_known(),
        Mode::UnknownStats => cfg.search_unknown(),
    };
    let problem = Inversion {
        forward: &forward,
        basis: &basis,
        spec: FitnessSpec {
            weights: cfg.fitness_weights()?,
            observed,
            perm_domain: cfg.pso.perm_domain,
        },
        search,
    };
    let params = cfg.pso_params(&problem.search, 0);
    let result = invert(&problem, &params)?;

    let mut trace = csv::Writer::from_path(out.join("fitness_trace.csv"))?;
    for (generation, f) in result.trace.iter().enumerate() {
        trace.serialize(TraceRow {
            generation,
            best_fitness: *f,
        })?;
    }
    trace.flush()?;

    let best = forward.evaluate(0, &permeability_from_lnk(&result.lnk))?;
    write_wells_csv(&out.join("wells.csv"), &best)?;
    let forecast = match &truth {
        Some((_, sol)) => {
            let window = |s: &Solution| -> Vec<f64> { s.wells.iter().flat_map(|w| w.rates()[obs_steps..].to_vec()).collect() };
            let reference = window(sol);
            if reference.is_empty() {
                None
            } else {
                Some(subflow::metrics::relative_l2(&window(&best), &reference)?)
            }
        }
        None => None,
    };

    let mut w = new_writer(&out.join("field"), &cfg, "invert")?;
    w.set_seed("pso", params.seed);
    w.set_seed("noise", cfg.seeds.noise);
    w.set_seed("field", cfg.seeds.field);
    let [nx, ny, nz] = grid.dims();
    let shape = [1, nx, ny, nz];
    let ax = ["realization", "i", "j", "k"];
    w.add_array(
        "inverted_lnk",
        &shape,
        &ax,
        "ln(mD)",
        "best-candidate log permeability",
        result.lnk.values(),
    )?;
    if let Some((lnk, _)) = &truth {
        w.add_array("truth_lnk", &shape, &ax, "ln(mD)", "synthetic truth log permeability", lnk.values())?;
    }
    w.finish()?;

    let summary = InversionSummary {
        mode: if mode == Mode::KnownStats { "known-stats" } else { "unknown-stats" },
        best: result.best.clone(),
        best_fitness: result.best_fitness,
        variance: result.covariance.variance,
        corr_length: result.covariance.corr_x,
        forecast_rate_relative_l2: forecast,
    };
    let text = serde_json::to_string_pretty(&summary).expect("plain numbers");
    fs::write(out.join("result.json"), &text)?;
    println!("{text}");
    Ok(())
}

#[derive(Serialize)]
struct MetricRow {
    realization: String,
    relative_l2: f64,
    r2: f64,
    n_points: usize,
}

fn metrics(pred: &str, reference: &str, out: Option<&Path>) -> CliResult {
    let load = |spec: &str| -> CliResult<Vec<Vec<f64>>> {
        let (dir, name) = split_source(spec)?;
        let b = DatasetBundle::open(dir)?;
        let entry = b.field(&name).ok_or_else(|| usage(format!("no field '{name}' in {spec}")))?;
        let n = entry.shape.first().copied().unwrap_or(1).max(1);
        let data = b.read(&name)?;
        Ok(data.chunks(data.len() / n).map(|c| c.to_vec()).collect())
    };
    let (p, r) = (load(pred)?, load(reference)?);
    let table = evaluate_fields(&p, &r)?;
    let sink: Box<dyn std::io::Write> = match out {
        Some(path) => Box::new(fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for f in &table.per_field {
        w.serialize(MetricRow {
            realization: f.realization.to_string(),
            relative_l2: f.report.relative_l2,
            r2: f.report.r2,
            n_points: f.report.n_points,
        })?;
    }
    w.serialize(MetricRow {
        realization: "pooled".into(),
        relative_l2: table.pooled.relative_l2,
        r2: table.pooled.r2,
        n_points: table.pooled.n_points,
    })?;
    w.flush()?;
    Ok(())
}
