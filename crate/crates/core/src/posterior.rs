//! Weighted log-posterior with analytic gradient, and the sampler target
//! built from it.
//!
//! For one observation with standardized route attributes `x_l` and choice
//! `i₀`, the log-likelihood is `v_{i₀} − logsumexp(v)` with
//! `v_l = −Σ_j w_j x_lʲ` and `w = softmax(0, a²ᵀz, a³ᵀz)`. Chaining through
//! both softmax layers gives, for row m ∈ {2, 3}:
//!
//! ```text
//! ∂ll/∂aᵐ = z · w_m (q_m − qᵀw),   q_j = Σ_l p_l x_lʲ − x_{i₀}ʲ
//! ```
//!
//! which is what `accumulate_loglik_grad` implements. Batches accumulate
//! `Σ η_i · ll_i` plus a prior term.

use rayon::prelude::*;

use crate::choice::{softmax3, weight_logits, ParameterMatrix, PARAM_DIM};
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::routes::Observation;
use crate::scaler::Scaler;

/// Observations per work unit in the parallel likelihood reduction. Chunk
/// results are folded in index order so the sum is bitwise independent of
/// the thread count.
const LIKELIHOOD_CHUNK: usize = 1024;

/// A differentiable log-density over the flat parameter vector, used as the
/// prior term of the posterior.
pub trait PriorDensity: Sync {
    fn dim(&self) -> usize {
        PARAM_DIM
    }

    /// Writes the gradient into `grad` and returns the log-density.
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;
}

/// Independent standard normal prior on every free coefficient.
#[derive(Debug, Clone, Default)]
pub struct StandardNormalPrior;

impl PriorDensity for StandardNormalPrior {
    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let mut logp = -0.5 * (PARAM_DIM as f64) * (2.0 * std::f64::consts::PI).ln();
        for (g, t) in grad.iter_mut().zip(theta.iter()) {
            logp -= 0.5 * t * t;
            *g = -t;
        }
        logp
    }
}

/// An observation pre-standardized and flattened for repeated likelihood
/// evaluation.
#[derive(Debug, Clone)]
pub(crate) struct PreparedObservation {
    z: [f64; FEATURE_DIM],
    routes: Vec<[f64; 3]>,
    choice: usize,
    weight: f64,
}

impl PreparedObservation {
    pub(crate) fn new(obs: &Observation, weight: f64, scaler: &Scaler) -> Self {
        let routes = obs
            .offers
            .routes()
            .iter()
            .map(|r| {
                let s = scaler.apply_route(r);
                [s.t, s.c, s.t_w]
            })
            .collect();
        Self {
            z: *obs.features.as_array(),
            routes,
            choice: obs.choice(),
            weight,
        }
    }
}

/// Adds `weight · ∇ll` into `grad` and returns `weight · ll`.
fn accumulate_loglik_grad(
    params: &ParameterMatrix,
    obs: &PreparedObservation,
    grad: &mut [f64; PARAM_DIM],
) -> Result<f64> {
    let logits = weight_logits(params, &obs.z);
    if !(logits[1].is_finite() && logits[2].is_finite()) {
        return Err(Error::numeric("non-finite weight logits"));
    }
    let w = softmax3(logits);

    // Route values and a streaming log-sum-exp over them.
    let k = obs.routes.len();
    let mut values = Vec::with_capacity(k);
    let mut max_v = f64::NEG_INFINITY;
    for r in &obs.routes {
        let v = -(w[0] * r[0] + w[1] * r[1] + w[2] * r[2]);
        if !v.is_finite() {
            return Err(Error::numeric("non-finite route value"));
        }
        max_v = max_v.max(v);
        values.push(v);
    }
    let mut sum_exp = 0.0;
    for v in &values {
        sum_exp += (v - max_v).exp();
    }
    let lse = max_v + sum_exp.ln();
    let ll = values[obs.choice] - lse;

    // q_j = E_p[x_j] − x_choice^j, the likelihood gradient w.r.t. w_j.
    let mut q = [0.0f64; 3];
    for (v, r) in values.iter().zip(obs.routes.iter()) {
        let p = (v - lse).exp();
        q[0] += p * r[0];
        q[1] += p * r[1];
        q[2] += p * r[2];
    }
    let chosen = &obs.routes[obs.choice];
    q[0] -= chosen[0];
    q[1] -= chosen[1];
    q[2] -= chosen[2];

    let qw = q[0] * w[0] + q[1] * w[1] + q[2] * w[2];
    let coeff2 = obs.weight * w[1] * (q[1] - qw);
    let coeff3 = obs.weight * w[2] * (q[2] - qw);
    for kk in 0..FEATURE_DIM {
        grad[kk] += coeff2 * obs.z[kk];
        grad[FEATURE_DIM + kk] += coeff3 * obs.z[kk];
    }
    Ok(obs.weight * ll)
}

fn batch_loglik_grad(
    params: &ParameterMatrix,
    prepared: &[PreparedObservation],
) -> Result<(f64, [f64; PARAM_DIM])> {
    let chunk_results: Vec<Result<(f64, [f64; PARAM_DIM])>> = prepared
        .par_chunks(LIKELIHOOD_CHUNK)
        .enumerate()
        .map(|(chunk_idx, chunk)| {
            let mut grad = [0.0; PARAM_DIM];
            let mut value = 0.0;
            for (i, obs) in chunk.iter().enumerate() {
                value += accumulate_loglik_grad(params, obs, &mut grad).map_err(|e| {
                    Error::numeric(format!(
                        "observation {}: {e}",
                        chunk_idx * LIKELIHOOD_CHUNK + i
                    ))
                })?;
            }
            Ok((value, grad))
        })
        .collect();

    let mut value = 0.0;
    let mut grad = [0.0; PARAM_DIM];
    for r in chunk_results {
        let (v, g) = r?;
        value += v;
        for (acc, gi) in grad.iter_mut().zip(g.iter()) {
            *acc += gi;
        }
    }
    Ok((value, grad))
}

/// Log-posterior `Σᵢ ηᵢ·loglik(obsᵢ) + log prior(params)` and its exact
/// gradient over the flat parameter vector.
///
/// Observation weights must be finite and nonnegative; a weight of zero
/// removes the observation from the likelihood entirely.
pub fn log_posterior_and_gradient(
    params: &ParameterMatrix,
    batch: &[(Observation, f64)],
    prior: &dyn PriorDensity,
    scaler: &Scaler,
) -> Result<(f64, [f64; PARAM_DIM])> {
    for (i, (_, eta)) in batch.iter().enumerate() {
        if !eta.is_finite() || *eta < 0.0 {
            return Err(Error::validation(format!(
                "observation {i}: weight must be finite and nonnegative, got {eta}"
            )));
        }
    }
    let prepared: Vec<PreparedObservation> = batch
        .iter()
        .map(|(obs, eta)| PreparedObservation::new(obs, *eta, scaler))
        .collect();
    let (mut value, mut grad) = batch_loglik_grad(params, &prepared)?;

    let theta = params.to_flat();
    let mut prior_grad = [0.0; PARAM_DIM];
    value += prior.log_density_and_grad(&theta, &mut prior_grad);
    for (g, pg) in grad.iter_mut().zip(prior_grad.iter()) {
        *g += pg;
    }
    Ok((value, grad))
}

/// NUTS target for the weighted posterior. Numeric failures in the
/// likelihood map to a `-inf` log-density, which the sampler rejects as a
/// divergent point.
pub struct PosteriorTarget<P: PriorDensity> {
    prepared: Vec<PreparedObservation>,
    prior: P,
}

impl<P: PriorDensity> PosteriorTarget<P> {
    pub fn new(batch: &[(Observation, f64)], prior: P, scaler: &Scaler) -> Self {
        let prepared = batch
            .iter()
            .map(|(obs, eta)| PreparedObservation::new(obs, *eta, scaler))
            .collect();
        Self { prepared, prior }
    }
}

impl<P: PriorDensity> routepref_nuts::TargetDensity for PosteriorTarget<P> {
    fn dim(&self) -> usize {
        PARAM_DIM
    }

    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let params = match ParameterMatrix::from_flat(x) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        let (mut value, mut g) = match batch_loglik_grad(&params, &self.prepared) {
            Ok(r) => r,
            Err(_) => return f64::NEG_INFINITY,
        };
        value += self.prior.log_density_and_grad(x, &mut g[..]);
        grad.copy_from_slice(&g);
        value
    }
}
