//! Command-line pipeline: generate synthetic data, fit (statically or
//! day-by-day), evaluate, summarize, and run the decision routines.
//!
//! Machine-readable JSON goes to stdout; diagnostics go to stderr. Exit
//! codes: 0 success, 1 validation/input error, 2 numeric or sampler error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use routepref_core::decision::{
    min_incentive, optimize_incentive, rank_carpool, select_routes, CandidateUser, DetourOption,
    IncentiveProblem, PassengerOption, RideOffer,
};
use routepref_core::dynamic::{fit_dynamic_step, DayType, WeightingConfig};
use routepref_core::experiment::{
    run_beta_shift, run_dynamic_iters, run_filter_ablation, run_static_sweep, ExperimentConfig,
};
use routepref_core::io::{
    load_particles, read_dataset, read_params, read_store, save_particles, write_dataset,
    ParamsFile,
};
use routepref_core::static_fit::{evaluate_accuracy, fit_static, posterior_summary};
use routepref_core::{
    compute_weights, datagen, Dataset, Error, FeatureVector, McmcConfig, RouteAttributes, Scaler,
    FEATURE_DIM,
};

#[derive(Parser)]
#[command(name = "routepref", version, about = "Route-preference inference and decision toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic interaction dataset from ground-truth coefficients.
    Datagen {
        /// Coefficient file ({"a2":[...],"a3":[...]} or a summary file).
        #[arg(long)]
        params: PathBuf,
        /// Number of observations.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Routes per offer set.
        #[arg(long, default_value_t = 8)]
        k: usize,
        /// Output JSONL path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model on a full dataset with a standard-normal prior.
    FitStatic {
        /// Input dataset (JSONL).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 500)]
        warmup: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        target_accept: f64,
        #[arg(long, default_value_t = 10)]
        max_depth: usize,
        /// Output posterior file.
        #[arg(long)]
        out: PathBuf,
    },
    /// One nightly sequential update from a previous posterior.
    FitDynamic {
        /// Observation store (JSONL with day metadata).
        #[arg(long)]
        store: PathBuf,
        /// Previous posterior file.
        #[arg(long)]
        prev: PathBuf,
        /// Day the refreshed posterior will serve.
        #[arg(long)]
        day: i64,
        /// Temporal decay factor in [0, 1].
        #[arg(long, default_value_t = 0.9)]
        beta: f64,
        /// Maximum observation age.
        #[arg(long, default_value_t = 5)]
        amax: u32,
        /// Maximum retained observations.
        #[arg(long, default_value_t = 100000)]
        nmax: usize,
        /// Weekday/weekend mixing weight in [0, 1].
        #[arg(long)]
        lambda: Option<f64>,
        /// Target day type for the mixing weight.
        #[arg(long)]
        daytype: Option<DayTypeArg>,
        #[arg(long, default_value_t = 500)]
        warmup: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output posterior file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validation accuracy of a fitted posterior on a dataset.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        posterior: PathBuf,
    },
    /// Posterior means and equal-tailed credible intervals.
    Summary {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        level: f64,
    },
    /// Pick k diverse high-value routes for a user.
    SelectRoutes {
        #[arg(long)]
        posterior: PathBuf,
        /// User feature file (JSON).
        #[arg(long)]
        user: PathBuf,
        /// Candidate routes (JSON array).
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rank car-pool candidates for a ride offer.
    RankCarpool {
        #[arg(long)]
        posterior: PathBuf,
        /// Ride offer file (JSON).
        #[arg(long)]
        ride: PathBuf,
        /// Candidate users (JSON array).
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Minimum and grid-optimal incentive for a detour.
    Incentive {
        #[arg(long)]
        posterior: PathBuf,
        /// Baseline route (JSON).
        #[arg(long)]
        baseline: PathBuf,
        /// Detour route (JSON).
        #[arg(long)]
        detour: PathBuf,
        /// Driver feature file (JSON).
        #[arg(long)]
        user: PathBuf,
        /// Served passengers with alternatives (JSON array, optional).
        #[arg(long)]
        passengers: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        imax: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        /// Platform cost per incentive unit.
        #[arg(long, default_value_t = 0.0)]
        kappa: f64,
    },
    /// Run one of the built-in studies and print its data table.
    Experiment {
        #[arg(long)]
        name: ExperimentName,
        /// JSON config overriding the experiment defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DayTypeArg {
    Weekday,
    Weekend,
}

impl From<DayTypeArg> for DayType {
    fn from(v: DayTypeArg) -> Self {
        match v {
            DayTypeArg::Weekday => DayType::Weekday,
            DayTypeArg::Weekend => DayType::Weekend,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ExperimentName {
    StaticSweep,
    DynamicIters,
    BetaShift,
    FilterAblation,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path with status 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Numeric(_) | Error::Sampler(_) => 2,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

/// Point estimate (posterior mean) plus scaler from a posterior file.
fn load_point_estimate(
    path: &Path,
) -> Result<(routepref_core::ParameterMatrix, Scaler), Error> {
    let (particles, scaler) = load_particles(path)?;
    Ok((particles.mean_parameters()?, scaler))
}

#[derive(Deserialize)]
struct CandidateRecord {
    #[serde(flatten)]
    user: CandidateUser,
    alt_route: RouteAttributes,
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Datagen {
            params,
            n,
            seed,
            k,
            out,
        } => {
            let truth = read_params(&params)?;
            let mut cfg = datagen::GeneratorConfig::new(truth, seed);
            cfg.offer_size = k;
            let generator = datagen::Generator::new(cfg)?;
            let data = generator.generate_dataset(n)?;
            write_dataset(&data, &out)?;
            print_json(&json!({
                "written": out.display().to_string(),
                "n": n,
                "k": k,
                "seed": seed,
            }));
            Ok(())
        }
        Command::FitStatic {
            data,
            warmup,
            samples,
            seed,
            target_accept,
            max_depth,
            out,
        } => {
            let mut dataset = read_dataset(&data)?;
            if !dataset.is_empty() {
                dataset.fit_scaler()?;
            }
            let scaler = dataset.scaler.clone().unwrap_or_else(Scaler::identity);
            let config = McmcConfig {
                n_warmup: warmup,
                n_samples: samples,
                target_accept,
                max_tree_depth: max_depth,
                seed,
            };
            let particles = fit_static(&dataset, &config)?;
            save_particles(&particles, &scaler, &out)?;
            print_json(&json!({
                "written": out.display().to_string(),
                "n_obs": dataset.len(),
                "n_draws": particles.len(),
            }));
            Ok(())
        }
        Command::FitDynamic {
            store,
            prev,
            day,
            beta,
            amax,
            nmax,
            lambda,
            daytype,
            warmup,
            samples,
            seed,
            out,
        } => {
            let store = read_store(&store)?;
            let (prev_particles, scaler) = load_particles(&prev)?;
            let mut wcfg = WeightingConfig::new(beta, amax, nmax)?;
            wcfg.lambda_daytype = lambda;
            let mcfg = McmcConfig {
                n_warmup: warmup,
                n_samples: samples,
                target_accept: 0.8,
                max_tree_depth: 10,
                seed,
            };
            let particles = match daytype {
                Some(d) => routepref_core::dynamic::fit_dynamic_step_with_options(
                    &prev_particles,
                    &store,
                    day,
                    &wcfg,
                    &mcfg,
                    &scaler,
                    &routepref_core::dynamic::DynamicOptions {
                        filter: true,
                        target_daytype: Some(d.into()),
                    },
                )?,
                None => fit_dynamic_step(&prev_particles, &store, day, &wcfg, &mcfg, &scaler)?,
            };
            save_particles(&particles, &scaler, &out)?;
            print_json(&json!({
                "written": out.display().to_string(),
                "day": day,
                "n_draws": particles.len(),
                "store_size": store.len(),
            }));
            Ok(())
        }
        Command::Evaluate { data, posterior } => {
            let dataset = read_dataset(&data)?;
            let (point, scaler) = load_point_estimate(&posterior)?;
            let validation = Dataset::with_scaler(dataset.observations, scaler.clone());
            let accuracy = evaluate_accuracy(&point, &scaler, &validation)?;
            print_json(&json!({
                "accuracy": accuracy,
                "n": validation.len(),
            }));
            Ok(())
        }
        Command::Summary { posterior, level } => {
            let (particles, _) = load_particles(&posterior)?;
            let summary = posterior_summary(&particles, level)?;
            let halves = |v: &[f64]| ParamsFile {
                a2: v[..FEATURE_DIM].to_vec(),
                a3: v[FEATURE_DIM..].to_vec(),
            };
            print_json(&json!({
                "level": summary.level,
                "n_draws": particles.len(),
                "mean": halves(&summary.mean),
                "ci_low": halves(&summary.ci_low),
                "ci_high": halves(&summary.ci_high),
            }));
            Ok(())
        }
        Command::SelectRoutes {
            posterior,
            user,
            candidates,
            k,
            seed,
        } => {
            let (point, scaler) = load_point_estimate(&posterior)?;
            let features: FeatureVector = read_json(&user)?;
            let routes: Vec<RouteAttributes> = read_json(&candidates)?;
            let selected = select_routes(&point, &scaler, &features, &routes, k, seed)?;
            let w = compute_weights(&point, &features)?;
            let detail: Vec<_> = selected
                .iter()
                .map(|&i| {
                    let r = routes[i];
                    json!({
                        "index": i,
                        "t": r.t,
                        "c": r.c,
                        "tw": r.t_w,
                        "value": routepref_core::route_value(&w, &scaler.apply_route(&r)),
                    })
                })
                .collect();
            print_json(&json!({ "selected": detail }));
            Ok(())
        }
        Command::RankCarpool {
            posterior,
            ride,
            candidates,
        } => {
            let (point, scaler) = load_point_estimate(&posterior)?;
            let offer: RideOffer = read_json(&ride)?;
            let records: Vec<CandidateRecord> = read_json(&candidates)?;
            let users: Vec<CandidateUser> = records.iter().map(|r| r.user.clone()).collect();
            let alts: Vec<RouteAttributes> = records.iter().map(|r| r.alt_route).collect();
            let ranking = rank_carpool(&offer, &users, &alts, &point, &scaler, &BTreeMap::new())?;
            print_json(&json!({
                "offers": ranking.offers,
                "waiting": ranking.waiting,
            }));
            Ok(())
        }
        Command::Incentive {
            posterior,
            baseline,
            detour,
            user,
            passengers,
            imax,
            step,
            kappa,
        } => {
            let (point, scaler) = load_point_estimate(&posterior)?;
            let baseline: RouteAttributes = read_json(&baseline)?;
            let detour_route: RouteAttributes = read_json(&detour)?;
            let driver: FeatureVector = read_json(&user)?;
            let served: Vec<PassengerOption> = match passengers {
                Some(p) => read_json(&p)?,
                None => Vec::new(),
            };
            let w = compute_weights(&point, &driver)?;
            let quote = min_incentive(&w.in_raw_units(&scaler), &baseline, &detour_route)?;
            let problem = IncentiveProblem {
                driver,
                baseline,
                detours: vec![DetourOption {
                    route: detour_route,
                    passengers: served,
                }],
                i_max: imax,
                step,
                kappa,
            };
            let solution = optimize_incentive(&problem, &point, &scaler)?;
            print_json(&json!({
                "min_incentive": quote.incentive,
                "min_incentive_floored": quote.floored,
                "optimal_incentive": solution.incentive,
                "expected_utility": solution.expected_utility,
                "objective": solution.objective,
                "grid": { "i_max": imax, "step": step },
                "kappa": kappa,
            }));
            Ok(())
        }
        Command::Experiment { name, config } => {
            let cfg: ExperimentConfig = match config {
                Some(path) => read_json(&path)?,
                None => ExperimentConfig::default(),
            };
            let table = match name {
                ExperimentName::StaticSweep => {
                    json!({ "experiment": "static-sweep", "rows": run_static_sweep(&cfg)? })
                }
                ExperimentName::DynamicIters => {
                    json!({ "experiment": "dynamic-iters", "rows": run_dynamic_iters(&cfg)? })
                }
                ExperimentName::BetaShift => {
                    json!({ "experiment": "beta-shift", "rows": run_beta_shift(&cfg)? })
                }
                ExperimentName::FilterAblation => {
                    json!({ "experiment": "filter-ablation", "rows": run_filter_ablation(&cfg)? })
                }
            };
            print_json(&table);
            Ok(())
        }
    }
}
