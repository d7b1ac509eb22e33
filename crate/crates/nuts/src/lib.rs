//! No-U-Turn sampler (NUTS) over an arbitrary differentiable log-density on ℝᵈ.
//!
//! Single-chain Hamiltonian Monte Carlo with an identity mass matrix,
//! binary-tree trajectory doubling, multinomial selection of the proposal
//! within the trajectory, and dual-averaging step-size adaptation during
//! warmup. Chains are reproducible: all randomness comes from a ChaCha8
//! stream seeded through [`McmcConfig::seed`], so identical inputs yield
//! bit-identical draws.
//!
//! Multiple chains may be run concurrently by calling [`nuts_sample`] from
//! several threads with distinct seeds; the target only needs to be `Sync`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Energy-error threshold beyond which a leapfrog transition is declared
/// divergent (same cutoff as Stan).
const DIVERGENCE_THRESHOLD: f64 = 1000.0;

/// A differentiable log-density on ℝᵈ.
///
/// Implementations must be pure: the sampler may evaluate the density from
/// multiple chains concurrently.
pub trait TargetDensity: Sync {
    fn dim(&self) -> usize;

    /// Evaluates the log-density at `x`, writing the gradient into `grad`
    /// (which has length `dim`). Returning a non-finite value rejects the
    /// proposed point.
    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapter turning a closure into a [`TargetDensity`].
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F> FnTarget<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> TargetDensity for FnTarget<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn logp_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

/// Sampler hyperparameters.
#[derive(Debug, Clone)]
pub struct McmcConfig {
    /// Warmup (burn-in) transitions used for step-size adaptation; discarded.
    pub n_warmup: usize,
    /// Post-warmup draws returned in the chain.
    pub n_samples: usize,
    /// Dual-averaging acceptance target, in (0, 1).
    pub target_accept: f64,
    /// Maximum number of trajectory doublings per transition.
    pub max_tree_depth: usize,
    /// RNG seed; the chain is a deterministic function of it.
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_warmup: 500,
            n_samples: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<(), SamplerError> {
        if self.n_samples == 0 {
            return Err(SamplerError::InvalidConfig("n_samples must be >= 1".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(SamplerError::InvalidConfig(
                "target_accept must lie in (0, 1)".into(),
            ));
        }
        if self.max_tree_depth == 0 {
            return Err(SamplerError::InvalidConfig(
                "max_tree_depth must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-draw sampler diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct DrawStats {
    /// Number of trajectory doublings performed.
    pub tree_depth: usize,
    /// Mean Metropolis acceptance statistic over the trajectory.
    pub accept_stat: f64,
    /// Whether any leapfrog step in the transition diverged.
    pub divergent: bool,
}

/// Output of one NUTS chain.
#[derive(Debug, Clone)]
pub struct SampleChain {
    /// Post-warmup draws, one row per draw, `dim` columns.
    pub draws: Vec<Vec<f64>>,
    /// Diagnostics parallel to `draws`.
    pub stats: Vec<DrawStats>,
    /// Step size fixed after dual averaging.
    pub adapted_step_size: f64,
}

impl SampleChain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn divergence_rate(&self) -> f64 {
        if self.stats.is_empty() {
            return 0.0;
        }
        self.stats.iter().filter(|s| s.divergent).count() as f64 / self.stats.len() as f64
    }

    pub fn component_mean(&self, j: usize) -> f64 {
        self.draws.iter().map(|d| d[j]).sum::<f64>() / self.draws.len() as f64
    }

    /// Sample variance (n − 1 normalization) of component `j`.
    pub fn component_variance(&self, j: usize) -> f64 {
        let n = self.draws.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.component_mean(j);
        self.draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("log-density or gradient is not finite at the initial point")]
    NonFiniteInit,
    #[error("step-size search failed: log-density stayed non-finite along the trajectory")]
    StepSizeSearch,
    #[error(
        "{divergent}/{total} post-warmup transitions diverged (step size {step_size:.3e}); \
         the target geometry is likely pathological"
    )]
    Divergent {
        divergent: usize,
        total: usize,
        step_size: f64,
    },
}

/// One end of (or point within) a trajectory: position, momentum, cached
/// gradient and log-density.
#[derive(Clone)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl PhasePoint {
    /// log of the joint density exp(logp − |p|²/2), up to a constant.
    fn log_joint(&self) -> f64 {
        self.logp - 0.5 * self.p.iter().map(|v| v * v).sum::<f64>()
    }
}

/// A (sub)trajectory with trajectory-oriented endpoints: `minus` is the
/// backward-most state, `plus` the forward-most.
struct Tree {
    minus: PhasePoint,
    plus: PhasePoint,
    /// Multinomially selected proposal within the subtree.
    proposal: PhasePoint,
    /// logsumexp of (log_joint − log_joint₀) over the subtree's states.
    log_weight: f64,
    sum_alpha: f64,
    n_alpha: usize,
    divergent: bool,
    turning: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn leapfrog(target: &dyn TargetDensity, state: &mut PhasePoint, eps: f64) {
    for (pi, gi) in state.p.iter_mut().zip(state.grad.iter()) {
        *pi += 0.5 * eps * gi;
    }
    for (qi, pi) in state.q.iter_mut().zip(state.p.iter()) {
        *qi += eps * pi;
    }
    state.logp = target.logp_and_grad(&state.q, &mut state.grad);
    for (pi, gi) in state.p.iter_mut().zip(state.grad.iter()) {
        *pi += 0.5 * eps * gi;
    }
}

/// U-turn criterion on the span between the two endpoints.
fn is_turning(minus: &PhasePoint, plus: &PhasePoint) -> bool {
    let mut dot_minus = 0.0;
    let mut dot_plus = 0.0;
    for i in 0..minus.q.len() {
        let diff = plus.q[i] - minus.q[i];
        dot_minus += diff * minus.p[i];
        dot_plus += diff * plus.p[i];
    }
    dot_minus < 0.0 || dot_plus < 0.0
}

/// Builds a balanced subtree of `depth` doublings starting one leapfrog step
/// beyond `from` in direction `dir` (±1).
#[allow(clippy::too_many_arguments)]
fn build_tree(
    target: &dyn TargetDensity,
    from: &PhasePoint,
    dir: f64,
    depth: usize,
    eps: f64,
    log_joint0: f64,
    rng: &mut ChaCha8Rng,
) -> Tree {
    if depth == 0 {
        let mut state = from.clone();
        leapfrog(target, &mut state, dir * eps);
        let delta = state.log_joint() - log_joint0;
        // NaN compares false, so a non-finite energy error also counts as
        // divergent here.
        let divergent = !(delta > -DIVERGENCE_THRESHOLD);
        let alpha = if delta.is_finite() {
            delta.exp().min(1.0)
        } else {
            0.0
        };
        return Tree {
            minus: state.clone(),
            plus: state.clone(),
            proposal: state,
            log_weight: if divergent { f64::NEG_INFINITY } else { delta },
            sum_alpha: alpha,
            n_alpha: 1,
            divergent,
            turning: false,
        };
    }

    let mut first = build_tree(target, from, dir, depth - 1, eps, log_joint0, rng);
    if first.divergent || first.turning {
        return first;
    }
    let second_start = if dir > 0.0 { &first.plus } else { &first.minus };
    let second = build_tree(target, second_start, dir, depth - 1, eps, log_joint0, rng);

    first.sum_alpha += second.sum_alpha;
    first.n_alpha += second.n_alpha;
    if second.divergent || second.turning {
        first.divergent |= second.divergent;
        first.turning |= second.turning;
        return first;
    }

    // Multinomial proposal selection between the two halves.
    let total = log_add_exp(first.log_weight, second.log_weight);
    if rng.random::<f64>().ln() < second.log_weight - total {
        first.proposal = second.proposal;
    }
    first.log_weight = total;
    if dir > 0.0 {
        first.plus = second.plus;
    } else {
        first.minus = second.minus;
    }
    first.turning = is_turning(&first.minus, &first.plus);
    first
}

/// One NUTS transition from `state`; returns the selected point and
/// diagnostics.
fn transition(
    target: &dyn TargetDensity,
    state: PhasePoint,
    eps: f64,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> (PhasePoint, DrawStats) {
    let dim = state.q.len();
    let mut start = state;
    for pi in start.p.iter_mut() {
        *pi = StandardNormal.sample(rng);
    }
    let log_joint0 = start.log_joint();

    let mut tree = Tree {
        minus: start.clone(),
        plus: start.clone(),
        proposal: start,
        log_weight: 0.0,
        sum_alpha: 0.0,
        n_alpha: 0,
        divergent: false,
        turning: false,
    };
    let mut depth = 0;

    while depth < max_depth {
        let dir = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
        let from = if dir > 0.0 { &tree.plus } else { &tree.minus };
        let sub = build_tree(target, from, dir, depth, eps, log_joint0, rng);

        tree.sum_alpha += sub.sum_alpha;
        tree.n_alpha += sub.n_alpha;
        if sub.divergent || sub.turning {
            tree.divergent |= sub.divergent;
            break;
        }

        // Biased progressive sampling: favor the new subtree.
        if rng.random::<f64>().ln() < sub.log_weight - tree.log_weight {
            tree.proposal = sub.proposal;
        }
        tree.log_weight = log_add_exp(tree.log_weight, sub.log_weight);
        if dir > 0.0 {
            tree.plus = sub.plus;
        } else {
            tree.minus = sub.minus;
        }
        depth += 1;
        if is_turning(&tree.minus, &tree.plus) {
            break;
        }
    }

    let accept_stat = if tree.n_alpha > 0 {
        tree.sum_alpha / tree.n_alpha as f64
    } else {
        0.0
    };
    debug_assert_eq!(tree.proposal.q.len(), dim);
    (
        tree.proposal,
        DrawStats {
            tree_depth: depth,
            accept_stat,
            divergent: tree.divergent,
        },
    )
}

/// Heuristic initial step size: double/halve until the one-step acceptance
/// probability crosses 1/2.
fn find_reasonable_step_size(
    target: &dyn TargetDensity,
    init: &PhasePoint,
    rng: &mut ChaCha8Rng,
) -> Result<f64, SamplerError> {
    let mut eps = 1.0;
    let mut start = init.clone();
    for pi in start.p.iter_mut() {
        *pi = StandardNormal.sample(rng);
    }
    let log_joint0 = start.log_joint();

    let step_delta = |eps: f64| -> f64 {
        let mut probe = start.clone();
        leapfrog(target, &mut probe, eps);
        probe.log_joint() - log_joint0
    };

    let mut delta = step_delta(eps);
    let mut shrink_budget = 64;
    while !delta.is_finite() {
        eps *= 0.5;
        shrink_budget -= 1;
        if shrink_budget == 0 {
            return Err(SamplerError::StepSizeSearch);
        }
        delta = step_delta(eps);
    }

    let dir: f64 = if delta > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..100 {
        if dir * delta <= -dir * (2.0f64).ln() {
            break;
        }
        eps *= (2.0f64).powf(dir);
        delta = step_delta(eps);
        if !delta.is_finite() {
            // Overshot into a non-finite region; back off and stop.
            eps *= 0.5;
            break;
        }
    }
    Ok(eps)
}

/// Dual-averaging state for step-size adaptation (Hoffman & Gelman 2014
/// constants).
struct DualAveraging {
    mu: f64,
    log_eps_bar: f64,
    h_bar: f64,
    gamma: f64,
    t0: f64,
    kappa: f64,
}

impl DualAveraging {
    fn new(initial_step: f64) -> Self {
        Self {
            mu: (10.0 * initial_step).ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            gamma: 0.05,
            t0: 10.0,
            kappa: 0.75,
        }
    }

    /// Updates with the acceptance statistic of warmup iteration `m`
    /// (1-based) and returns the step size for the next iteration.
    fn update(&mut self, m: usize, accept_stat: f64, target_accept: f64) -> f64 {
        let m = m as f64;
        let w = 1.0 / (m + self.t0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (target_accept - accept_stat);
        let log_eps = self.mu - m.sqrt() / self.gamma * self.h_bar;
        let mk = m.powf(-self.kappa);
        self.log_eps_bar = mk * log_eps + (1.0 - mk) * self.log_eps_bar;
        log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Runs a single NUTS chain on `target` starting at `init`.
///
/// Draws `config.n_warmup` adaptation transitions (discarded) followed by
/// `config.n_samples` retained draws. Fails if the log-density is not finite
/// at `init` or if more than half of the retained transitions diverge.
pub fn nuts_sample(
    target: &dyn TargetDensity,
    init: &[f64],
    config: &McmcConfig,
) -> Result<SampleChain, SamplerError> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(SamplerError::InvalidConfig(format!(
            "init has length {}, target dimension is {}",
            init.len(),
            dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut grad = vec![0.0; dim];
    let logp = target.logp_and_grad(init, &mut grad);
    if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SamplerError::NonFiniteInit);
    }
    let mut state = PhasePoint {
        q: init.to_vec(),
        p: vec![0.0; dim],
        grad,
        logp,
    };

    let mut eps = find_reasonable_step_size(target, &state, &mut rng)?;
    let mut adapt = DualAveraging::new(eps);

    for m in 1..=config.n_warmup {
        let (next, stats) = transition(target, state, eps, config.max_tree_depth, &mut rng);
        state = next;
        eps = adapt.update(m, stats.accept_stat, config.target_accept);
    }
    let eps = if config.n_warmup > 0 { adapt.adapted() } else { eps };

    let mut draws = Vec::with_capacity(config.n_samples);
    let mut stats = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let (next, stat) = transition(target, state, eps, config.max_tree_depth, &mut rng);
        state = next;
        draws.push(state.q.clone());
        stats.push(stat);
    }

    let divergent = stats.iter().filter(|s| s.divergent).count();
    if 2 * divergent > config.n_samples {
        return Err(SamplerError::Divergent {
            divergent,
            total: config.n_samples,
            step_size: eps,
        });
    }

    Ok(SampleChain {
        draws,
        stats,
        adapted_step_size: eps,
    })
}
