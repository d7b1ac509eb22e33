//! Experiment drivers: static accuracy scaling, dynamic iteration trends,
//! the filtering ablation, and the decay-factor shift study. Each driver
//! returns its result table as plain rows (the CLI serializes them).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use routepref_nuts::McmcConfig;
use serde::{Deserialize, Serialize};

use crate::choice::{ParameterMatrix, PARAM_DIM};
use crate::datagen::{Generator, GeneratorConfig};
use crate::dataset::Dataset;
use crate::dynamic::{
    fit_dynamic_step_with_options, prune_store, DynamicOptions, DayType, ObservationStore,
    WeightingConfig,
};
use crate::error::Result;
use crate::particles::ParticleSet;
use crate::static_fit::{evaluate_accuracy, fit_static};

/// Knobs shared by the experiment drivers; every field has a default so a
/// config file only needs overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub base_seed: u64,
    /// Ground-truth coefficients behind the synthetic data.
    pub truth: ParameterMatrix,
    pub warmup: usize,
    pub samples: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub n_validation: usize,
    /// Likelihood sizes for the static sweep.
    pub sizes: Vec<usize>,
    /// Repetitions (static sweep and filtering ablation).
    pub runs: usize,
    /// Iterations per dynamic trajectory.
    pub iterations: usize,
    /// Batch-size variants for the dynamic iteration study.
    pub obs_per_iteration: Vec<usize>,
    /// Batch size for the filtering ablation.
    pub ablation_obs_per_iteration: usize,
    /// Batch size for the decay study.
    pub shift_obs_per_iteration: usize,
    /// Decay factors for the shift study.
    pub betas: Vec<f64>,
    /// The generator switches from misleading to true coefficients after
    /// this iteration.
    pub shift_after: usize,
    pub a_max: u32,
    pub n_max: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            base_seed: 20240,
            truth: ParameterMatrix::reference(),
            warmup: 300,
            samples: 500,
            target_accept: 0.8,
            max_tree_depth: 10,
            n_validation: 4000,
            sizes: vec![1000, 5000, 20_000],
            runs: 5,
            iterations: 15,
            obs_per_iteration: vec![500, 2000],
            ablation_obs_per_iteration: 2500,
            shift_obs_per_iteration: 2500,
            betas: vec![0.1, 0.5, 0.9, 0.99],
            shift_after: 4,
            a_max: 5,
            n_max: 200_000,
        }
    }
}

impl ExperimentConfig {
    fn mcmc(&self, seed: u64) -> McmcConfig {
        McmcConfig {
            n_warmup: self.warmup,
            n_samples: self.samples,
            target_accept: self.target_accept,
            max_tree_depth: self.max_tree_depth,
            seed,
        }
    }
}

fn derive_seed(base: u64, tag: u64, idx: u64) -> u64 {
    base.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(idx.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

/// Stream offset reserved for validation sets, far past any training batch.
const VALIDATION_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Serialize)]
pub struct StaticSweepRow {
    pub n_obs: usize,
    pub run: usize,
    pub accuracy: f64,
    pub truth_accuracy: f64,
}

/// Static accuracy scaling: fits the model at each likelihood size across
/// repeated runs and evaluates on a held-out set, alongside the ground
/// truth's own accuracy.
pub fn run_static_sweep(cfg: &ExperimentConfig) -> Result<Vec<StaticSweepRow>> {
    let mut rows = Vec::new();
    for run in 0..cfg.runs {
        let gen_seed = derive_seed(cfg.base_seed, 1, run as u64);
        let generator = Generator::new(GeneratorConfig::new(cfg.truth, gen_seed))?;
        let val_obs = generator.generate_observations(cfg.n_validation, VALIDATION_STREAM)?;
        for (si, &size) in cfg.sizes.iter().enumerate() {
            let train_obs = generator.generate_observations(size, 0)?;
            let mut train = Dataset::new(train_obs);
            let scaler = train.fit_scaler()?.clone();
            let validation = Dataset::with_scaler(val_obs.clone(), scaler.clone());

            let fit_seed = derive_seed(cfg.base_seed, 2, (run * 100 + si) as u64);
            let particles = fit_static(&train, &cfg.mcmc(fit_seed))?;
            let point = particles.mean_parameters()?;
            let accuracy = evaluate_accuracy(&point, &scaler, &validation)?;
            let truth_accuracy = evaluate_accuracy(&cfg.truth, &scaler, &validation)?;
            rows.push(StaticSweepRow {
                n_obs: size,
                run,
                accuracy,
                truth_accuracy,
            });
        }
    }
    Ok(rows)
}

/// Specification of one dynamic trajectory.
#[derive(Debug, Clone)]
pub struct TrajectorySpec {
    pub truth: ParameterMatrix,
    /// Coefficients used before the shift point (defaults to `truth`).
    pub pre_shift_truth: Option<ParameterMatrix>,
    /// Last iteration generated from `pre_shift_truth`.
    pub shift_after: usize,
    pub iterations: usize,
    pub obs_per_iteration: usize,
    pub n_validation: usize,
    pub weighting: WeightingConfig,
    pub filter: bool,
    pub seed: u64,
}

/// Runs one sequential-update trajectory and returns the per-iteration
/// validation accuracy (evaluated against whichever generator is active at
/// that iteration).
pub fn run_trajectory(spec: &TrajectorySpec, cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    let main_gen = Generator::new(GeneratorConfig::new(spec.truth, spec.seed))?;
    // The pipeline scaler is fixed up front and persisted across days.
    let scaler = main_gen.reference_scaler().clone();
    let pre_gen = match spec.pre_shift_truth {
        Some(params) => Some(Generator::new(GeneratorConfig::new(
            params,
            derive_seed(spec.seed, 7, 0),
        ))?),
        None => None,
    };

    let main_val = Dataset::with_scaler(
        main_gen.generate_observations(spec.n_validation, VALIDATION_STREAM)?,
        scaler.clone(),
    );
    let pre_val = match &pre_gen {
        Some(g) => Some(Dataset::with_scaler(
            g.generate_observations(spec.n_validation, VALIDATION_STREAM)?,
            scaler.clone(),
        )),
        None => None,
    };

    // Initial particles: draws from the standard-normal prior.
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 11, 0));
    let init_rows: Vec<Vec<f64>> = (0..cfg.samples.max(2))
        .map(|_| {
            (0..PARAM_DIM)
                .map(|_| StandardNormal.sample(&mut init_rng))
                .collect()
        })
        .collect();
    let mut particles = ParticleSet::new(init_rows, 0)?;

    let mut store = ObservationStore::new();
    let mut accuracies = Vec::with_capacity(spec.iterations);
    for l in 1..=spec.iterations {
        let pre_shift = l <= spec.shift_after && pre_gen.is_some();
        let active_gen = if pre_shift {
            pre_gen.as_ref().unwrap()
        } else {
            &main_gen
        };
        let batch = active_gen
            .generate_observations(spec.obs_per_iteration, (l as u64) * (1 << 24))?;
        store.push_batch(batch, l as i64 - 1, DayType::Weekday)?;

        let step_seed = derive_seed(spec.seed, 13, l as u64);
        particles = fit_dynamic_step_with_options(
            &particles,
            &store,
            l as i64,
            &spec.weighting,
            &cfg.mcmc(step_seed),
            &scaler,
            &DynamicOptions {
                filter: spec.filter,
                target_daytype: None,
            },
        )?;

        let validation = if pre_shift {
            pre_val.as_ref().unwrap()
        } else {
            &main_val
        };
        let point = particles.mean_parameters()?;
        accuracies.push(evaluate_accuracy(&point, &scaler, validation)?);

        // Keep the physical store bounded; the next step's pruning result
        // is unchanged because fresh batches only outrank old entries.
        store = prune_store(&store, l as i64 + 1, &spec.weighting);
    }
    Ok(accuracies)
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicItersRow {
    pub obs_per_iteration: usize,
    pub iteration: usize,
    pub accuracy: f64,
}

/// Dynamic batch-size study: no-memory weighting (β = 0), one trajectory
/// per batch-size variant.
pub fn run_dynamic_iters(cfg: &ExperimentConfig) -> Result<Vec<DynamicItersRow>> {
    let mut rows = Vec::new();
    for (vi, &obs) in cfg.obs_per_iteration.iter().enumerate() {
        let spec = TrajectorySpec {
            truth: cfg.truth,
            pre_shift_truth: None,
            shift_after: 0,
            iterations: cfg.iterations,
            obs_per_iteration: obs,
            n_validation: cfg.n_validation,
            weighting: WeightingConfig::new(0.0, cfg.a_max, cfg.n_max)?,
            filter: true,
            seed: derive_seed(cfg.base_seed, 17, vi as u64),
        };
        for (iteration, accuracy) in run_trajectory(&spec, cfg)?.into_iter().enumerate() {
            rows.push(DynamicItersRow {
                obs_per_iteration: obs,
                iteration: iteration + 1,
                accuracy,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterAblationRow {
    pub filtered: bool,
    pub run: usize,
    pub iteration: usize,
    pub accuracy: f64,
}

/// Filtering ablation: repeated paired trajectories with and without the
/// particle-filter refinement, sharing data seeds within a pair.
pub fn run_filter_ablation(cfg: &ExperimentConfig) -> Result<Vec<FilterAblationRow>> {
    let mut rows = Vec::new();
    for run in 0..cfg.runs {
        for filtered in [true, false] {
            let spec = TrajectorySpec {
                truth: cfg.truth,
                pre_shift_truth: None,
                shift_after: 0,
                iterations: cfg.iterations.min(10),
                obs_per_iteration: cfg.ablation_obs_per_iteration,
                n_validation: cfg.n_validation,
                weighting: WeightingConfig::new(0.0, cfg.a_max, cfg.n_max)?,
                filter: filtered,
                seed: derive_seed(cfg.base_seed, 19, run as u64),
            };
            for (iteration, accuracy) in run_trajectory(&spec, cfg)?.into_iter().enumerate() {
                rows.push(FilterAblationRow {
                    filtered,
                    run,
                    iteration: iteration + 1,
                    accuracy,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct BetaShiftRow {
    pub beta: f64,
    pub iteration: usize,
    pub accuracy: f64,
}

/// Decay study: trajectories start on misleading coefficients (the truth
/// with flipped signs) and shift to the real ones after `shift_after`
/// iterations; different β values control how fast the old evidence fades.
pub fn run_beta_shift(cfg: &ExperimentConfig) -> Result<Vec<BetaShiftRow>> {
    let flipped = {
        let mut m = cfg.truth;
        for v in m.a2.iter_mut().chain(m.a3.iter_mut()) {
            *v = -*v;
        }
        m
    };
    let mut rows = Vec::new();
    for (bi, &beta) in cfg.betas.iter().enumerate() {
        let spec = TrajectorySpec {
            truth: cfg.truth,
            pre_shift_truth: Some(flipped),
            shift_after: cfg.shift_after,
            iterations: cfg.iterations,
            obs_per_iteration: cfg.shift_obs_per_iteration,
            n_validation: cfg.n_validation,
            weighting: WeightingConfig::new(beta, cfg.a_max, cfg.n_max)?,
            filter: true,
            seed: derive_seed(cfg.base_seed, 23, bi as u64),
        };
        for (iteration, accuracy) in run_trajectory(&spec, cfg)?.into_iter().enumerate() {
            rows.push(BetaShiftRow {
                beta,
                iteration: iteration + 1,
                accuracy,
            });
        }
    }
    Ok(rows)
}

/// First post-shift iteration whose accuracy is back within `tolerance` of
/// the accuracy at the shift point, if any.
pub fn recovery_iteration(
    accuracies: &[f64],
    shift_after: usize,
    tolerance: f64,
) -> Option<usize> {
    let reference = accuracies[shift_after - 1];
    (shift_after..accuracies.len())
        .find(|&i| accuracies[i] >= reference - tolerance)
        .map(|i| i + 1)
}
