//! Full-dataset ("static") Bayesian fit, posterior summaries, and
//! predictive-accuracy evaluation.

use routepref_nuts::{nuts_sample, McmcConfig};
use serde::Serialize;

use crate::choice::{compute_weights, route_value, ParameterMatrix, PARAM_DIM};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::particles::ParticleSet;
use crate::posterior::{PosteriorTarget, StandardNormalPrior};
use crate::routes::OfferSet;
use crate::scaler::Scaler;

/// Componentwise posterior mean and equal-tailed credible interval.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub level: f64,
}

/// Fits the model on the full dataset with a standard-normal prior.
///
/// The chain targets `Σᵢ log p(choiceᵢ) + log N(a; 0, I)` over the 14 free
/// coefficients, initialized at the prior mean. An empty dataset yields a
/// prior-only fit. When the dataset carries no scaler one is fitted from the
/// data first.
pub fn fit_static(data: &Dataset, config: &McmcConfig) -> Result<ParticleSet> {
    let scaler = match (&data.scaler, data.is_empty()) {
        (Some(s), _) => s.clone(),
        (None, false) => Scaler::fit(&data.observations)?,
        (None, true) => Scaler::identity(),
    };
    let batch: Vec<_> = data
        .observations
        .iter()
        .map(|o| (o.clone(), 1.0))
        .collect();
    let target = PosteriorTarget::new(&batch, StandardNormalPrior, &scaler);
    let chain = nuts_sample(&target, &[0.0; PARAM_DIM], config)?;
    ParticleSet::from_chain(&chain, 0)
}

/// Linear-interpolation empirical quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Componentwise mean and equal-tailed interval at the given coverage level.
pub fn posterior_summary(samples: &ParticleSet, level: f64) -> Result<PosteriorSummary> {
    if samples.len() < 2 {
        return Err(Error::validation(format!(
            "posterior summary needs at least 2 draws, got {}",
            samples.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::validation(format!(
            "credible level must lie in (0, 1), got {level}"
        )));
    }
    let tail = (1.0 - level) / 2.0;
    let dim = samples.dim();
    let mut mean = Vec::with_capacity(dim);
    let mut ci_low = Vec::with_capacity(dim);
    let mut ci_high = Vec::with_capacity(dim);
    let mut column = vec![0.0; samples.len()];
    for j in 0..dim {
        for (slot, row) in column.iter_mut().zip(samples.rows()) {
            *slot = row[j];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        mean.push(samples.component_mean(j));
        ci_low.push(quantile_sorted(&column, tail));
        ci_high.push(quantile_sorted(&column, 1.0 - tail));
    }
    Ok(PosteriorSummary {
        mean,
        ci_low,
        ci_high,
        level,
    })
}

/// Index of the route with the highest predicted choice probability; ties
/// break toward the lowest index.
pub fn predict_choice(
    point_estimate: &ParameterMatrix,
    scaler: &Scaler,
    features: &FeatureVector,
    offers: &OfferSet,
) -> Result<usize> {
    let w = compute_weights(point_estimate, features)?;
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, r) in offers.routes().iter().enumerate() {
        let v = route_value(&w, &scaler.apply_route(r));
        if v > best_value {
            best_value = v;
            best = i;
        }
    }
    Ok(best)
}

/// Fraction of validation observations whose predicted route matches the
/// recorded choice.
pub fn evaluate_accuracy(
    point_estimate: &ParameterMatrix,
    scaler: &Scaler,
    validation: &Dataset,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::validation("validation dataset is empty"));
    }
    let mut hits = 0usize;
    for obs in &validation.observations {
        if predict_choice(point_estimate, scaler, &obs.features, &obs.offers)? == obs.choice() {
            hits += 1;
        }
    }
    Ok(hits as f64 / validation.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::AgeGroup;
    use crate::routes::{Observation, RouteAttributes};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn summary_of_constant_draws_is_degenerate() {
        let p = ParticleSet::new(vec![vec![2.5, -1.0]; 4], 0).unwrap();
        let s = posterior_summary(&p, 0.9).unwrap();
        assert_eq!(s.mean, vec![2.5, -1.0]);
        assert_eq!(s.ci_low, vec![2.5, -1.0]);
        assert_eq!(s.ci_high, vec![2.5, -1.0]);
    }

    #[test]
    fn summary_rejects_tiny_samples() {
        let p = ParticleSet::new(vec![vec![1.0]], 0).unwrap();
        assert!(posterior_summary(&p, 0.9).is_err());
        let p = ParticleSet::new(vec![vec![1.0], vec![2.0]], 0).unwrap();
        assert!(posterior_summary(&p, 1.0).is_err());
    }

    // Gaussian quantile oracle: the equal-tailed 90% interval of a standard
    // normal is ±1.6448536269514722.
    #[test]
    fn summary_matches_gaussian_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| vec![StandardNormal.sample(&mut rng)])
            .collect();
        let p = ParticleSet::new(draws, 0).unwrap();
        let s = posterior_summary(&p, 0.9).unwrap();
        assert!((s.ci_low[0] + 1.6448536269514722).abs() < 0.02, "{}", s.ci_low[0]);
        assert!((s.ci_high[0] - 1.6448536269514722).abs() < 0.02, "{}", s.ci_high[0]);
        assert!(s.mean[0].abs() < 0.02);
    }

    fn two_route_observation(choice: usize, better_first: bool) -> Observation {
        let z = FeatureVector::from_parts(AgeGroup::Active, 0.5, false, 0.5, 0).unwrap();
        let (a, b) = if better_first {
            (RouteAttributes::new(10.0, 10.0, 1.0), RouteAttributes::new(50.0, 30.0, 20.0))
        } else {
            (RouteAttributes::new(50.0, 30.0, 20.0), RouteAttributes::new(10.0, 10.0, 1.0))
        };
        Observation::new(z, OfferSet::new(vec![a, b]).unwrap(), choice).unwrap()
    }

    #[test]
    fn perfect_predictor_has_accuracy_one() {
        // The first route dominates on every attribute, so any positive
        // weights pick it; the recorded choice always agrees.
        let observations = vec![two_route_observation(0, true), two_route_observation(1, false)];
        let mut data = Dataset::new(observations);
        let scaler = data.fit_scaler().unwrap().clone();
        let acc = evaluate_accuracy(&ParameterMatrix::zeros(), &scaler, &data).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let z = FeatureVector::from_parts(AgeGroup::Young, 0.0, false, 0.0, 0).unwrap();
        let offers = OfferSet::new(vec![RouteAttributes::new(5.0, 5.0, 5.0); 8]).unwrap();
        let idx = predict_choice(
            &ParameterMatrix::reference(),
            &Scaler::identity(),
            &z,
            &offers,
        )
        .unwrap();
        assert_eq!(idx, 0);
    }

    #[test]
    fn accuracy_invariant_under_monotone_value_transform() {
        // argmax(v) == argmax(m(v)) for strictly increasing m; checked via
        // an order-isomorphic predictor on random offers.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = ParameterMatrix::reference();
        let scaler = Scaler::identity();
        for _ in 0..200 {
            let z = FeatureVector::from_parts(
                AgeGroup::Active,
                rng.random::<f64>(),
                rng.random::<f64>() < 0.5,
                rng.random::<f64>(),
                0,
            )
            .unwrap();
            let routes: Vec<RouteAttributes> = (0..6)
                .map(|_| {
                    RouteAttributes::new(
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                    )
                })
                .collect();
            let offers = OfferSet::new(routes.clone()).unwrap();
            let idx = predict_choice(&params, &scaler, &z, &offers).unwrap();

            let w = compute_weights(&params, &z).unwrap();
            let transformed_argmax = routes
                .iter()
                .map(|r| {
                    let v = route_value(&w, r);
                    (2.0 * v + 1.0).exp() // strictly increasing transform
                })
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, v)| {
                    if v > acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                })
                .0;
            assert_eq!(idx, transformed_argmax);
        }
    }

    #[test]
    fn empty_validation_errors() {
        let data = Dataset::default();
        assert!(evaluate_accuracy(&ParameterMatrix::zeros(), &Scaler::identity(), &data).is_err());
    }

    // Posterior-mean and MAP-style argmax decisions agree when the marginal
    // posterior is symmetric around its center, except at effective ties.
    #[test]
    fn mean_and_map_decisions_agree_on_symmetric_posteriors() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let center = ParameterMatrix::reference().to_flat();
        let draws: Vec<Vec<f64>> = (0..2000)
            .map(|_| {
                center
                    .iter()
                    .map(|c| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        c + 0.05 * noise
                    })
                    .collect()
            })
            .collect();
        let particles = ParticleSet::new(draws, 0).unwrap();
        let mean_point = particles.mean_parameters().unwrap();
        let map_point = ParameterMatrix::reference(); // the true mode
        let scaler = Scaler::identity();
        let mut decisive = 0;
        for _ in 0..100 {
            let z = FeatureVector::from_parts(
                AgeGroup::Retired,
                rng.random::<f64>(),
                rng.random::<f64>() < 0.5,
                rng.random::<f64>(),
                2,
            )
            .unwrap();
            let routes: Vec<RouteAttributes> = (0..8)
                .map(|_| {
                    RouteAttributes::new(
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                        rng.random::<f64>() * 2.0 - 1.0,
                    )
                })
                .collect();
            let offers = OfferSet::new(routes).unwrap();

            // Margin between the two best routes under the mode.
            let w = compute_weights(&map_point, &z).unwrap();
            let mut values: Vec<f64> =
                offers.routes().iter().map(|r| route_value(&w, r)).collect();
            values.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if values[0] - values[1] < 0.01 {
                continue; // effective tie, argmax not identifiable
            }
            decisive += 1;

            let a = predict_choice(&mean_point, &scaler, &z, &offers).unwrap();
            let b = predict_choice(&map_point, &scaler, &z, &offers).unwrap();
            assert_eq!(a, b);
        }
        assert!(decisive > 80, "only {decisive} decisive instances");
    }
}
