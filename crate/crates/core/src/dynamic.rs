//! Nightly sequential update: residual particle filtering of the previous
//! posterior, a Gaussian-mixture prior with plug-in diagonal bandwidth, and
//! an age-weighted likelihood over a pruned observation store.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routepref_nuts::{nuts_sample, McmcConfig};
use serde::{Deserialize, Serialize};

use crate::choice::{observation_log_likelihood, ParameterMatrix, PARAM_DIM};
use crate::error::{Error, Result};
use crate::particles::ParticleSet;
use crate::posterior::{PosteriorTarget, PriorDensity};
use crate::routes::Observation;
use crate::scaler::Scaler;

/// Bandwidth entries are floored here to keep the mixture nonsingular after
/// aggressive filtering collapses a component.
const BANDWIDTH_FLOOR: f64 = 1e-8;

/// Fewer distinct particles than this after filtering triggers a degeneracy
/// warning.
const DEGENERACY_THRESHOLD: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Weekend,
}

/// Temporal decay and retention policy for the observation store.
#[derive(Debug, Clone)]
pub struct WeightingConfig {
    /// Temporal decay β ∈ [0, 1]; an observation of age α gets weight β^α
    /// (with β⁰ = 1 even for β = 0, so the newest batch always counts).
    pub beta: f64,
    /// Maximum observation age kept in the store.
    pub a_max: u32,
    /// Maximum number of observations kept after age pruning.
    pub n_max: usize,
    /// Optional weekday/weekend mixing: weight × λ when an observation's
    /// day type matches the target, × (1 − λ) otherwise.
    pub lambda_daytype: Option<f64>,
}

impl WeightingConfig {
    pub fn new(beta: f64, a_max: u32, n_max: usize) -> Result<Self> {
        let cfg = Self {
            beta,
            a_max,
            n_max,
            lambda_daytype: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::validation(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.n_max == 0 {
            return Err(Error::validation("n_max must be >= 1"));
        }
        if let Some(l) = self.lambda_daytype {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::validation(format!(
                    "lambda_daytype must lie in [0, 1], got {l}"
                )));
            }
        }
        Ok(())
    }
}

/// One stored interaction with its recording day.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredObservation {
    pub observation: Observation,
    pub day_recorded: i64,
    pub day_type: DayType,
}

/// Dated observations, insertion-ordered by nondecreasing recording day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObservationStore {
    entries: Vec<StoredObservation>,
}

impl ObservationStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, observation: Observation, day_recorded: i64, day_type: DayType) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if day_recorded < last.day_recorded {
                return Err(Error::validation(format!(
                    "day_recorded must be nondecreasing: {} after {}",
                    day_recorded, last.day_recorded
                )));
            }
        }
        self.entries.push(StoredObservation {
            observation,
            day_recorded,
            day_type,
        });
        Ok(())
    }

    pub fn push_batch(
        &mut self,
        batch: impl IntoIterator<Item = Observation>,
        day_recorded: i64,
        day_type: DayType,
    ) -> Result<()> {
        for obs in batch {
            self.push(obs, day_recorded, day_type)?;
        }
        Ok(())
    }

    pub fn entries(&self) -> &[StoredObservation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn from_entries(entries: Vec<StoredObservation>) -> Self {
        Self { entries }
    }
}

/// Age of an observation on inference day `today`: the batch recorded the
/// previous day (the newest data a nightly run can see) has age 0.
pub fn observation_age(today: i64, day_recorded: i64) -> i64 {
    today - (day_recorded + 1)
}

fn decay_weight(beta: f64, age: i64) -> f64 {
    // powi(0) == 1.0 for every base, which is exactly the β⁰ = 1 convention.
    beta.powi(age as i32)
}

/// Observation weights `ηᵢ = β^{αᵢ}`, optionally mixed by day type.
///
/// The day-type multiplier is applied only when both `cfg.lambda_daytype`
/// and `target_daytype` are present.
pub fn compute_observation_weights(
    store: &ObservationStore,
    today: i64,
    cfg: &WeightingConfig,
    target_daytype: Option<DayType>,
) -> Vec<f64> {
    store
        .entries
        .iter()
        .map(|e| {
            let mut eta = decay_weight(cfg.beta, observation_age(today, e.day_recorded));
            if let (Some(lambda), Some(target)) = (cfg.lambda_daytype, target_daytype) {
                eta *= if e.day_type == target { lambda } else { 1.0 - lambda };
            }
            eta
        })
        .collect()
}

/// Removes entries older than `a_max`; if more than `n_max` remain, keeps
/// the `n_max` with the largest decay weight (ties favor the more recent
/// entry, then insertion order). Relative order is preserved.
pub fn prune_store(store: &ObservationStore, today: i64, cfg: &WeightingConfig) -> ObservationStore {
    let mut kept: Vec<(usize, &StoredObservation)> = store
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| observation_age(today, e.day_recorded) <= cfg.a_max as i64)
        .collect();

    if kept.len() > cfg.n_max {
        let mut ranked = kept.clone();
        ranked.sort_by(|(ia, a), (ib, b)| {
            let eta_a = decay_weight(cfg.beta, observation_age(today, a.day_recorded));
            let eta_b = decay_weight(cfg.beta, observation_age(today, b.day_recorded));
            eta_b
                .partial_cmp(&eta_a)
                .unwrap()
                .then(b.day_recorded.cmp(&a.day_recorded))
                .then(ia.cmp(ib))
        });
        ranked.truncate(cfg.n_max);
        let mut keep_idx: Vec<usize> = ranked.into_iter().map(|(i, _)| i).collect();
        keep_idx.sort_unstable();
        kept = keep_idx
            .into_iter()
            .map(|i| (i, &store.entries[i]))
            .collect();
    }

    ObservationStore::from_entries(kept.into_iter().map(|(_, e)| e.clone()).collect())
}

/// Plug-in diagonal bandwidth for a kernel density over the particles:
/// `(4·n/(d+4))^(2/(d+6)) · diag(S)` with `S` the population covariance.
pub fn plugin_bandwidth(particles: &ParticleSet) -> Result<Vec<f64>> {
    let n = particles.len();
    if n < 2 {
        return Err(Error::validation(format!(
            "plug-in bandwidth needs at least 2 particles, got {n}"
        )));
    }
    let d = particles.dim() as f64;
    let factor = (4.0 * n as f64 / (d + 4.0)).powf(2.0 / (d + 6.0));
    Ok((0..particles.dim())
        .map(|j| (factor * particles.component_population_variance(j)).max(BANDWIDTH_FLOOR))
        .collect())
}

/// Equal-weight mixture of Gaussians with a shared diagonal covariance,
/// centered at posterior particles.
#[derive(Debug, Clone)]
pub struct MixturePrior {
    centers: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    /// `−½ Σ ln(2π h_k) − ln n`, the per-component log-normalizer plus the
    /// mixture weight.
    log_norm: f64,
}

impl MixturePrior {
    pub fn new(centers: Vec<Vec<f64>>, bandwidth: Vec<f64>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::validation("mixture prior needs at least one center"));
        }
        let dim = bandwidth.len();
        if dim == 0 || centers.iter().any(|c| c.len() != dim) {
            return Err(Error::validation(
                "mixture centers and bandwidth must share a positive dimension",
            ));
        }
        if bandwidth.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::validation("bandwidth entries must be positive"));
        }
        let log_norm = -0.5
            * bandwidth
                .iter()
                .map(|h| (2.0 * std::f64::consts::PI * h).ln())
                .sum::<f64>()
            - (centers.len() as f64).ln();
        Ok(Self {
            centers,
            bandwidth,
            log_norm,
        })
    }

    /// Mixture centered at the particles with the plug-in bandwidth.
    pub fn from_particles(particles: &ParticleSet) -> Result<Self> {
        let bandwidth = plugin_bandwidth(particles)?;
        Self::new(particles.rows().to_vec(), bandwidth)
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn n_components(&self) -> usize {
        self.centers.len()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    /// Log-density and gradient at `a`, via log-sum-exp over component
    /// log-densities; the gradient is the responsibility-weighted sum of
    /// component gradients.
    pub fn log_density_and_grad(&self, a: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(a.len(), self.dim());
        let n = self.centers.len();
        let mut exponents = Vec::with_capacity(n);
        let mut max_e = f64::NEG_INFINITY;
        for c in &self.centers {
            let mut e = 0.0;
            for k in 0..a.len() {
                let diff = a[k] - c[k];
                e -= 0.5 * diff * diff / self.bandwidth[k];
            }
            max_e = max_e.max(e);
            exponents.push(e);
        }
        let mut sum = 0.0;
        for e in &exponents {
            sum += (e - max_e).exp();
        }
        let lse = max_e + sum.ln();

        grad.fill(0.0);
        for (e, c) in exponents.iter().zip(self.centers.iter()) {
            let resp = (e - lse).exp();
            for k in 0..a.len() {
                grad[k] += resp * (c[k] - a[k]) / self.bandwidth[k];
            }
        }
        lse + self.log_norm
    }
}

impl PriorDensity for MixturePrior {
    fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        MixturePrior::log_density_and_grad(self, theta, grad)
    }
}

/// Floor counts and residuals of residual resampling for pre-scaled weights
/// `scaled_j = ω_j · n`.
fn residual_counts_scaled(scaled: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut counts = Vec::with_capacity(scaled.len());
    let mut residuals = Vec::with_capacity(scaled.len());
    for &s in scaled {
        let floor = s.floor();
        counts.push(floor as usize);
        residuals.push(s - floor);
    }
    (counts, residuals)
}

/// Residual resampling: `⌊ω_j·n⌋` deterministic copies of index `j`, then
/// the remaining draws taken with probabilities proportional to the
/// fractional parts (with replacement). Returns the selected indices:
/// deterministic copies in index order, then the random draws.
pub fn residual_resample(weights: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let scaled: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    residual_resample_scaled(&scaled, n, rng)
}

fn residual_resample_scaled(scaled: &[f64], n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let (counts, residuals) = residual_counts_scaled(scaled);
    let mut out = Vec::with_capacity(n);
    for (j, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            out.push(j);
        }
    }
    let deterministic = out.len();
    let n_star = n.saturating_sub(deterministic);
    if n_star > 0 {
        let total: f64 = residuals.iter().sum();
        if total > 0.0 {
            let cdf: Vec<f64> = residuals
                .iter()
                .scan(0.0, |acc, r| {
                    *acc += r;
                    Some(*acc)
                })
                .collect();
            for _ in 0..n_star {
                let u = rng.random::<f64>() * total;
                let idx = cdf.partition_point(|&c| c < u).min(residuals.len() - 1);
                out.push(idx);
            }
        } else {
            // All residuals vanished to rounding; fall back to uniform draws.
            for _ in 0..n_star {
                out.push(rng.random_range(0..scaled.len()));
            }
        }
    }
    out.truncate(n);
    out
}

/// Refines the particle set against a fresh batch: log-likelihood weights,
/// median-shifted softmax normalization, then residual resampling back to
/// the original particle count. An empty batch returns the particles
/// unchanged.
pub fn particle_filter_resample(
    particles: &ParticleSet,
    batch: &[Observation],
    scaler: &Scaler,
    seed: u64,
) -> Result<ParticleSet> {
    if batch.is_empty() {
        return Ok(particles.clone());
    }
    if particles.dim() != PARAM_DIM {
        return Err(Error::validation(format!(
            "particle filtering needs {PARAM_DIM}-dimensional particles, got {}",
            particles.dim()
        )));
    }
    let n = particles.len();

    let mut log_weights = Vec::with_capacity(n);
    for row in particles.rows() {
        let params = ParameterMatrix::from_flat(row)?;
        let mut xi = 0.0;
        for obs in batch {
            xi += observation_log_likelihood(&params, obs, scaler)?;
        }
        log_weights.push(xi);
    }

    let mut sorted = log_weights.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };

    let mut shifted: Vec<f64> = log_weights.iter().map(|x| x - median).collect();
    // The median shift is the normalization prescribed for this step; an
    // extra max shift (a softmax no-op) guards exp overflow on extreme
    // batches.
    let max_shifted = shifted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max_shifted > 700.0 {
        for s in shifted.iter_mut() {
            *s -= max_shifted;
        }
    }
    let exp: Vec<f64> = shifted.iter().map(|s| s.exp()).collect();
    let total: f64 = exp.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::numeric("particle weights degenerated to zero"));
    }
    // ω_j·n computed as e_j · (n/Σe) so the uniform case stays exact.
    let scale = n as f64 / total;
    let scaled: Vec<f64> = exp.iter().map(|e| e * scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = residual_resample_scaled(&scaled, n, &mut rng);
    let rows = indices
        .into_iter()
        .map(|j| particles.row(j).to_vec())
        .collect();
    ParticleSet::new(rows, particles.day)
}

fn count_distinct(particles: &ParticleSet) -> usize {
    let mut keys: Vec<Vec<u64>> = particles
        .rows()
        .iter()
        .map(|row| row.iter().map(|v| v.to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Knobs for [`fit_dynamic_step_with_options`]; the plain entry point uses
/// the defaults.
#[derive(Debug, Clone)]
pub struct DynamicOptions {
    /// Skip the particle-filter refinement (used by the ablation studies).
    pub filter: bool,
    /// Target day type for the weekday/weekend weighting scheme.
    pub target_daytype: Option<DayType>,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        Self {
            filter: true,
            target_daytype: None,
        }
    }
}

/// One nightly update: prune the store, weight observations by age, filter
/// yesterday's particles against the newest batch, build the mixture prior,
/// and sample the weighted posterior.
///
/// `today` is the day the refreshed posterior will serve; entries recorded
/// on `today − 1` are the newest batch (age 0). The chain starts at a
/// filtered particle chosen uniformly at random, and everything is
/// deterministic given `mcfg.seed`.
pub fn fit_dynamic_step(
    prev: &ParticleSet,
    store: &ObservationStore,
    today: i64,
    wcfg: &WeightingConfig,
    mcfg: &McmcConfig,
    scaler: &Scaler,
) -> Result<ParticleSet> {
    fit_dynamic_step_with_options(prev, store, today, wcfg, mcfg, scaler, &DynamicOptions::default())
}

pub fn fit_dynamic_step_with_options(
    prev: &ParticleSet,
    store: &ObservationStore,
    today: i64,
    wcfg: &WeightingConfig,
    mcfg: &McmcConfig,
    scaler: &Scaler,
    options: &DynamicOptions,
) -> Result<ParticleSet> {
    wcfg.validate()?;
    if prev.dim() != PARAM_DIM {
        return Err(Error::validation(format!(
            "previous particles have dimension {}, expected {PARAM_DIM}",
            prev.dim()
        )));
    }
    if let Some(last) = store.entries.last() {
        if last.day_recorded >= today {
            return Err(Error::validation(format!(
                "store contains day {} but inference runs for day {today}",
                last.day_recorded
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mcfg.seed);
    let filter_seed: u64 = rng.random();
    let chain_seed: u64 = rng.random();
    let init_pick: u64 = rng.random();

    let pruned = prune_store(store, today, wcfg);
    let weights = compute_observation_weights(&pruned, today, wcfg, options.target_daytype);

    let newest_batch: Vec<Observation> = pruned
        .entries()
        .iter()
        .filter(|e| observation_age(today, e.day_recorded) == 0)
        .map(|e| e.observation.clone())
        .collect();

    let filtered = if options.filter {
        let f = particle_filter_resample(prev, &newest_batch, scaler, filter_seed)?;
        let distinct = count_distinct(&f);
        if distinct < DEGENERACY_THRESHOLD {
            log::warn!(
                "particle filter degeneracy: only {distinct} distinct particles remain on day {today}"
            );
        }
        f
    } else {
        prev.clone()
    };

    let prior = MixturePrior::from_particles(&filtered)?;
    // Zero-weight observations contribute nothing to the likelihood, so
    // they are dropped rather than evaluated (exact, not an approximation).
    let batch: Vec<(Observation, f64)> = pruned
        .entries()
        .iter()
        .zip(weights.iter())
        .filter(|(_, eta)| **eta > 0.0)
        .map(|(e, eta)| (e.observation.clone(), *eta))
        .collect();
    let target = PosteriorTarget::new(&batch, prior, scaler);

    let init = filtered.row((init_pick % filtered.len() as u64) as usize).to_vec();
    let chain_cfg = McmcConfig {
        seed: chain_seed,
        ..mcfg.clone()
    };
    let chain = nuts_sample(&target, &init, &chain_cfg)?;
    ParticleSet::from_chain(&chain, today)
}
