//! Command-line front end: binds scenario configs to the simulation,
//! design, inference, emulation, and benchmark pipelines.
//!
//! Every run writes a `manifest.json` (resolved command, full scenario,
//! config hash, crate version) next to its outputs; `dyncorr rerun
//! --manifest <path>` replays it and reproduces the outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dyncorr::bench::{
    run_comparison, scenario_gravity, scenario_linear_quadratic, study_observations,
    study_test_seeds, Method, ScenarioConfig,
};
use dyncorr::design::{
    exhaustive_design, greedy_design, lazy_greedy_design, partition_matroid_greedy, validate_bound,
    DesignResult,
};
use dyncorr::dynamics::{integrate_rk4, Trajectory};
use dyncorr::error::Error;
use dyncorr::gp;
use dyncorr::observation::NoiseModel;
use dyncorr::rff::{emulate_trajectory, fit_ridge, sample_features};
use dyncorr::seeding::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(
    name = "dyncorr",
    version,
    about = "Learn corrections to misspecified ODE models and design the experiments that feed them"
)]
struct Cli {
    /// Cap worker parallelism (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Verbose logging.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Serialize, Deserialize)]
struct Common {
    /// Builtin scenario name (`linear_quadratic`, `gravity`) or a path to
    /// a scenario JSON file.
    #[arg(long, default_value = "linear_quadratic")]
    scenario: String,

    /// Override the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
enum Command {
    /// Integrate true and proxy trajectories for random seeds → CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of initial conditions to simulate.
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Select experiment initial conditions → JSON.
    Design {
        #[command(flatten)]
        common: Common,
        /// greedy | lazy | exhaustive | matroid
        #[arg(long, default_value = "lazy")]
        algorithm: String,
        /// Selection budget (defaults to the scenario's design budget).
        #[arg(long)]
        budget: Option<usize>,
        /// Matroid only: number of index-stripe groups.
        #[arg(long, default_value_t = 3)]
        groups: usize,
        /// Matroid only: per-group selection quota.
        #[arg(long, default_value_t = 3)]
        group_limit: usize,
    },
    /// Fit the GP correction from designed or random experiments → JSON artifact.
    Fit {
        #[command(flatten)]
        common: Common,
        /// design | random
        #[arg(long, default_value = "design")]
        method: String,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Fit a random-feature model and emulate held-out trajectories → CSV.
    Emulate {
        #[command(flatten)]
        common: Common,
        /// Feature count D.
        #[arg(long, default_value_t = 4096)]
        features: usize,
        /// Number of training experiments (defaults to the scenario's
        /// random budget).
        #[arg(long)]
        train_count: Option<usize>,
        /// Held-out initial conditions to emulate.
        #[arg(long, default_value_t = 10)]
        test_count: usize,
    },
    /// Compare training strategies over seeded realizations → JSON + CSV.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of design,random,agnostic.
        #[arg(long, default_value = "design,random")]
        methods: String,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Empirically validate the proxy-discrepancy bound → JSON.
    ValidateBounds {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// Per-state perturbation radius Δ.
        #[arg(long, default_value_t = 0.01)]
        deviation: f64,
        /// Number of seeds in the evaluated subset.
        #[arg(long, default_value_t = 1)]
        subset_size: usize,
    },
    /// Replay a recorded manifest.
    Rerun {
        /// Path to a manifest.json written by a previous run.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory (defaults to the manifest's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .init();
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Integration { .. } | Error::IllConditioned { .. } => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load_scenario(common: &Common) -> Result<ScenarioConfig, Error> {
    let mut config = match common.scenario.as_str() {
        "linear_quadratic" => scenario_linear_quadratic().1,
        "gravity" => scenario_gravity().1,
        path => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Argument(format!("cannot read scenario file {path}: {e}")))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Argument(format!("scenario file {path}: {e}")))?
        }
    };
    if let Some(seed) = common.seed {
        config.master_seed = seed;
    }
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct Manifest<'a> {
    crate_version: &'static str,
    config_hash: String,
    command: &'a Command,
    scenario: &'a ScenarioConfig,
}

fn write_manifest(out: &Path, command: &Command, scenario: &ScenarioConfig) -> Result<(), Error> {
    let payload = serde_json::to_vec(&(command, scenario))?;
    let manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION"),
        config_hash: hex_digest(&payload),
        command,
        scenario,
    };
    fs::create_dir_all(out)?;
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn dispatch(command: &Command) -> Result<(), Error> {
    match command {
        Command::Simulate { common, count } => {
            let config = load_scenario(common)?;
            write_manifest(&common.out, command, &config)?;
            simulate(&config, *count, &common.out)
        }
        Command::Design {
            common,
            algorithm,
            budget,
            groups,
            group_limit,
        } => {
            let config = load_scenario(common)?;
            write_manifest(&common.out, command, &config)?;
            design(
                &config,
                algorithm,
                budget.unwrap_or(config.design_budget),
                *groups,
                *group_limit,
                &common.out,
            )
        }
        Command::Fit {
            common,
            method,
            budget,
        } => {
            let config = load_scenario(common)?;
            write_manifest(&common.out, command, &config)?;
            fit_command(
                &config,
                method,
                budget.unwrap_or(config.design_budget),
                &common.out,
            )
        }
        Command::Emulate {
            common,
            features,
            train_count,
            test_count,
        } => {
            let config = load_scenario(common)?;
            write_manifest(&common.out, command, &config)?;
            emulate(
                &config,
                *features,
                train_count.unwrap_or(config.random_budget),
                *test_count,
                &common.out,
            )
        }
        Command::Benchmark {
            common,
            methods,
            realizations,
        } => {
            let config = load_scenario(common)?;
            write_manifest(&common.out, command, &config)?;
            benchmark(
                &config,
                methods,
                realizations.unwrap_or(config.realizations),
                &common.out,
            )
        }
        Command::ValidateBounds {
            common,
            trials,
            deviation,
            subset_size,
        } => {
            let config = load_scenario(common)?;
            write_manifest(&common.out, command, &config)?;
            bounds(&config, *trials, *deviation, *subset_size, &common.out)
        }
        Command::Rerun { manifest, out } => rerun(manifest, out.as_deref()),
    }
}

fn rerun(manifest_path: &Path, out: Option<&Path>) -> Result<(), Error> {
    let text = fs::read_to_string(manifest_path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let mut command: Command = serde_json::from_value(
        value
            .get("command")
            .cloned()
            .ok_or_else(|| Error::Argument("manifest has no command".into()))?,
    )
    .map_err(|e| Error::Argument(format!("manifest command: {e}")))?;
    // outputs land next to the manifest unless redirected
    let target = out
        .map(Path::to_path_buf)
        .or_else(|| manifest_path.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    match &mut command {
        Command::Simulate { common, .. }
        | Command::Design { common, .. }
        | Command::Fit { common, .. }
        | Command::Emulate { common, .. }
        | Command::Benchmark { common, .. }
        | Command::ValidateBounds { common, .. } => {
            // the manifest's embedded scenario is authoritative
            let scenario: ScenarioConfig = serde_json::from_value(
                value
                    .get("scenario")
                    .cloned()
                    .ok_or_else(|| Error::Argument("manifest has no scenario".into()))?,
            )
            .map_err(|e| Error::Argument(format!("manifest scenario: {e}")))?;
            fs::create_dir_all(&target)?;
            let path = target.join("scenario.rerun.json");
            fs::write(&path, serde_json::to_string_pretty(&scenario)?)?;
            common.out = target;
            common.scenario = path.to_string_lossy().into_owned();
            common.seed = None;
        }
        Command::Rerun { .. } => {
            return Err(Error::Argument(
                "manifest cannot contain a rerun command".into(),
            ))
        }
    }
    dispatch(&command)
}

fn simulate(config: &ScenarioConfig, count: usize, out: &Path) -> Result<(), Error> {
    let system = config.build_system()?;
    let grid = config.grid()?;
    let seeds = dyncorr::bench::sample_study_seeds(config, count, 101)?;
    let mut w = csv::Writer::from_path(out.join("trajectories.csv"))?;
    let dim = system.dim();
    let mut header = vec![
        "k".to_string(),
        "model".to_string(),
        "i".to_string(),
        "t".to_string(),
    ];
    header.extend((1..=dim).map(|j| format!("y_{j}")));
    w.write_record(&header)?;
    let mut emit = |k: usize, label: &str, tr: &Trajectory| -> Result<(), Error> {
        for (i, state) in tr.states.iter().enumerate() {
            let mut rec = vec![
                k.to_string(),
                label.to_string(),
                i.to_string(),
                format!("{}", tr.grid.points()[i]),
            ];
            rec.extend(state.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        Ok(())
    };
    for (k, seed) in seeds.iter().enumerate() {
        let truth = integrate_rk4(&system, true, seed, &grid, config.substeps)?;
        let proxy = integrate_rk4(&system, false, seed, &grid, config.substeps)?;
        emit(k, "true", &truth)?;
        emit(k, "proxy", &proxy)?;
    }
    w.flush()?;
    println!("wrote {}", out.join("trajectories.csv").display());
    Ok(())
}

fn design(
    config: &ScenarioConfig,
    algorithm: &str,
    budget: usize,
    groups: usize,
    group_limit: usize,
    out: &Path,
) -> Result<(), Error> {
    let problem = config.design_problem(budget)?;
    let result: DesignResult = match algorithm {
        "greedy" => greedy_design(&problem)?,
        "lazy" => lazy_greedy_design(&problem)?,
        "exhaustive" => exhaustive_design(&problem)?,
        "matroid" => {
            if groups == 0 {
                return Err(Error::Argument("matroid needs at least one group".into()));
            }
            // demo partition: candidate index stripes
            let n = problem.candidates.len();
            let partition = (0..n).map(|i| (i, i % groups)).collect();
            let limits = (0..groups).map(|g| (g, group_limit)).collect();
            partition_matroid_greedy(&problem, &partition, &limits)?
        }
        other => {
            return Err(Error::Argument(format!(
                "unknown algorithm {other}; expected greedy|lazy|exhaustive|matroid"
            )))
        }
    };
    write_json(&out.join("design.json"), &result)?;
    println!(
        "selected {} seeds, objective {:.6}, {} objective evaluations → {}",
        result.selected_indices.len(),
        result.objective,
        result.evaluations,
        out.join("design.json").display()
    );
    Ok(())
}

fn training_seeds_for_method(
    config: &ScenarioConfig,
    method: &str,
    budget: usize,
) -> Result<Vec<nalgebra::DVector<f64>>, Error> {
    let candidates = config.candidate_seeds()?;
    match method {
        "design" => {
            let problem = config.design_problem(budget)?;
            let result = lazy_greedy_design(&problem)?;
            Ok(result
                .selected_indices
                .iter()
                .map(|&i| candidates[i].clone())
                .collect())
        }
        "random" => {
            use rand::Rng;
            let mut rng = dyncorr::seeding::rng_for(derive_seed(config.master_seed, 40), 0);
            let mut idx: Vec<usize> = (0..candidates.len()).collect();
            let take = budget.min(idx.len());
            for i in 0..take {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            Ok(idx[..take].iter().map(|&i| candidates[i].clone()).collect())
        }
        other => Err(Error::Argument(format!(
            "unknown method {other}; expected design|random"
        ))),
    }
}

fn fit_command(
    config: &ScenarioConfig,
    method: &str,
    budget: usize,
    out: &Path,
) -> Result<(), Error> {
    let system = config.build_system()?;
    let grid = config.grid()?;
    let seeds = training_seeds_for_method(config, method, budget)?;
    let noise = NoiseModel::isotropic(
        system.dim(),
        config.noise_variance,
        derive_seed(config.master_seed, 41),
    )?;
    let trajectories: Result<Vec<_>, Error> = seeds
        .iter()
        .map(|s| integrate_rk4(&system, true, s, &grid, config.substeps))
        .collect();
    let observations = dyncorr::observation::sample_corrections(&system, &trajectories?, &noise)?;
    let projected = config.project_observations(&observations)?;
    let posterior = gp::fit(&projected, config.kernel)?;
    write_json(&out.join("gp.json"), &posterior.to_artifact())?;
    let mut csv_out = Vec::new();
    projected.write_csv(&mut csv_out)?;
    fs::write(out.join("observations.csv"), csv_out)?;
    println!(
        "fit {} training samples → {} and {}",
        projected.len(),
        out.join("gp.json").display(),
        out.join("observations.csv").display()
    );
    Ok(())
}

fn emulate(
    config: &ScenarioConfig,
    features: usize,
    train_count: usize,
    test_count: usize,
    out: &Path,
) -> Result<(), Error> {
    let (system, observations) = study_observations(config, train_count)?;
    let projected = config.project_observations(&observations)?;
    let map = sample_features(
        &config.kernel,
        projected.state_dim(),
        features,
        derive_seed(config.master_seed, 42),
    )?;
    let model = fit_ridge(&projected, &map, config.noise_variance)?;
    write_json(&out.join("rff.json"), &model.to_artifact())?;
    let grid = config.grid()?;
    let tests = study_test_seeds(config, test_count)?;
    let mut w = csv::Writer::from_path(out.join("emulation.csv"))?;
    w.write_record(["k", "proxy_sup_gap", "emulated_sup_gap", "improved"])?;
    let mut wins = 0usize;
    for (k, seed) in tests.iter().enumerate() {
        let truth = integrate_rk4(&system, true, seed, &grid, config.substeps)?;
        let proxy = integrate_rk4(&system, false, seed, &grid, config.substeps)?;
        let emulated = if projected.state_dim() == system.dim() {
            emulate_trajectory(&system, &model, seed, &grid, config.substeps)?
        } else {
            // correction acts on a state subspace: embed before integrating
            let estimate = config.embed_correction(Box::new(|y: &nalgebra::DVector<f64>| {
                model.emulate_query(y).expect("projected query")
            }));
            dyncorr::dynamics::integrate_corrected(
                &system,
                estimate.as_ref(),
                seed,
                &grid,
                config.substeps,
            )?
        };
        let sup = |a: &Trajectory, b: &Trajectory| {
            a.states
                .iter()
                .zip(b.states.iter())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max)
        };
        let proxy_gap = sup(&truth, &proxy);
        let emulated_gap = sup(&truth, &emulated);
        if emulated_gap < proxy_gap {
            wins += 1;
        }
        w.write_record(&[
            k.to_string(),
            format!("{proxy_gap}"),
            format!("{emulated_gap}"),
            (emulated_gap < proxy_gap).to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "emulated {} held-out seeds, improved on {wins} → {}",
        tests.len(),
        out.join("emulation.csv").display()
    );
    Ok(())
}

fn benchmark(
    config: &ScenarioConfig,
    methods: &str,
    realizations: usize,
    out: &Path,
) -> Result<(), Error> {
    let parsed: Result<Vec<Method>, Error> = methods
        .split(',')
        .map(|m| match m.trim() {
            "design" => Ok(Method::Design),
            "random" => Ok(Method::Random),
            "agnostic" => Ok(Method::Agnostic),
            other => Err(Error::Argument(format!("unknown method {other}"))),
        })
        .collect();
    let report = run_comparison(config, &parsed?, realizations)?;
    write_json(&out.join("report.json"), &report)?;
    let file = fs::File::create(out.join("report.csv"))?;
    report.write_csv(file)?;
    println!(
        "benchmark complete: {} rows → {} and {}",
        report.rows.len(),
        out.join("report.json").display(),
        out.join("report.csv").display()
    );
    Ok(())
}

fn bounds(
    config: &ScenarioConfig,
    trials: usize,
    deviation: f64,
    subset_size: usize,
    out: &Path,
) -> Result<(), Error> {
    let problem = config.design_problem(config.design_budget)?;
    if subset_size == 0 || subset_size > problem.candidates.len() {
        return Err(Error::Argument("subset size out of range".into()));
    }
    let stride = problem.candidates.len() / subset_size;
    let subset: Vec<usize> = (0..subset_size).map(|i| i * stride).collect();
    let report = validate_bound(
        &problem,
        &subset,
        deviation,
        trials,
        derive_seed(config.master_seed, 43),
    )?;
    write_json(&out.join("bounds.json"), &report)?;
    println!(
        "{} trials: all within bound = {}, max ratio {:.3e}, vacuous {} → {}",
        report.trials.len(),
        report.all_within_bound,
        report.max_ratio,
        report.vacuous_count,
        out.join("bounds.json").display()
    );
    Ok(())
}
