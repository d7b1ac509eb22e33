//! The two-level choice model: multinomial-logit attribute weights and
//! Plackett–Luce choice probabilities.
//!
//! Level one maps a feature vector `z` to weights over the three route
//! attributes through a softmax of linear scores `(aʲ)ᵀz`, with the first
//! score pinned to zero for identifiability. Level two scores each route by
//! the additive value `v(r) = −(w₁t + w₂c + w₃t_w)` on standardized
//! attributes and selects with probability `softmax(v)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureVector, FEATURE_DIM};
use crate::routes::{Observation, OfferSet, RouteAttributes};
use crate::scaler::Scaler;

/// Free parameter count: two coefficient rows of length [`FEATURE_DIM`].
pub const PARAM_DIM: usize = 2 * FEATURE_DIM;

/// Latent coefficients `a = (a¹ ≡ 0, a², a³)`; the inference target.
///
/// `a2` drives the cost weight and `a3` the walking-time weight; the travel
/// time row is the pinned baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterMatrix {
    pub a2: [f64; FEATURE_DIM],
    pub a3: [f64; FEATURE_DIM],
}

impl ParameterMatrix {
    pub fn zeros() -> Self {
        Self {
            a2: [0.0; FEATURE_DIM],
            a3: [0.0; FEATURE_DIM],
        }
    }

    /// Reconstructs the matrix from the flat layout `(a2, a3)` used by the
    /// sampler and the posterior files.
    pub fn from_flat(x: &[f64]) -> Result<Self> {
        if x.len() != PARAM_DIM {
            return Err(Error::validation(format!(
                "parameter vector must have length {PARAM_DIM}, got {}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("parameter entries must be finite"));
        }
        let mut a2 = [0.0; FEATURE_DIM];
        let mut a3 = [0.0; FEATURE_DIM];
        a2.copy_from_slice(&x[..FEATURE_DIM]);
        a3.copy_from_slice(&x[FEATURE_DIM..]);
        Ok(Self { a2, a3 })
    }

    pub fn to_flat(&self) -> [f64; PARAM_DIM] {
        let mut out = [0.0; PARAM_DIM];
        out[..FEATURE_DIM].copy_from_slice(&self.a2);
        out[FEATURE_DIM..].copy_from_slice(&self.a3);
        out
    }

    /// Reference coefficients used as the default ground truth for the
    /// synthetic experiments.
    pub fn reference() -> Self {
        Self {
            a2: [1.402, 0.135, 0.446, -2.315, -1.155, -3.263, -0.716],
            a3: [1.110, -1.243, 1.843, 1.018, 2.934, 0.884, 3.281],
        }
    }
}

/// Attribute weights `(w_t, w_c, w_tw)`: strictly positive, summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightVector {
    w: [f64; 3],
}

impl WeightVector {
    /// Softmax of the three logits, computed with max-subtraction. The first
    /// logit is 0 by construction in this model but any finite triple is
    /// accepted (the softmax is shift-invariant).
    pub fn from_logits(logits: [f64; 3]) -> Result<Self> {
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite weight logits ({}, {}, {})",
                logits[0], logits[1], logits[2]
            )));
        }
        Ok(Self {
            w: softmax3(logits),
        })
    }

    pub fn uniform() -> Self {
        Self {
            w: [1.0 / 3.0; 3],
        }
    }

    pub fn as_array(&self) -> &[f64; 3] {
        &self.w
    }

    pub fn time(&self) -> f64 {
        self.w[0]
    }

    pub fn cost(&self) -> f64 {
        self.w[1]
    }

    pub fn walk(&self) -> f64 {
        self.w[2]
    }

    /// Rescales weights learned on standardized attributes back to raw
    /// attribute units (divide by the per-attribute std), for quantities
    /// like incentives that live in natural units.
    pub fn in_raw_units(&self, scaler: &Scaler) -> RawUnitWeights {
        RawUnitWeights {
            time: self.w[0] / scaler.std[0],
            cost: self.w[1] / scaler.std[1],
            walk: self.w[2] / scaler.std[2],
        }
    }
}

/// Attribute weights expressed per raw unit (minutes, currency). These do
/// not sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawUnitWeights {
    pub time: f64,
    pub cost: f64,
    pub walk: f64,
}

pub(crate) fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let m = logits[0].max(logits[1]).max(logits[2]);
    let e = [
        (logits[0] - m).exp(),
        (logits[1] - m).exp(),
        (logits[2] - m).exp(),
    ];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

pub(crate) fn weight_logits(params: &ParameterMatrix, z: &[f64; FEATURE_DIM]) -> [f64; 3] {
    let mut g2 = 0.0;
    let mut g3 = 0.0;
    for k in 0..FEATURE_DIM {
        g2 += params.a2[k] * z[k];
        g3 += params.a3[k] * z[k];
    }
    [0.0, g2, g3]
}

/// Maps context features to attribute weights through the logit layer.
pub fn compute_weights(params: &ParameterMatrix, z: &FeatureVector) -> Result<WeightVector> {
    WeightVector::from_logits(weight_logits(params, z.as_array()))
}

/// Additive value of a standardized route: `−(w_t·t + w_c·c + w_tw·t_w)`.
/// Higher is better.
pub fn route_value(w: &WeightVector, standardized: &RouteAttributes) -> f64 {
    -(w.w[0] * standardized.t + w.w[1] * standardized.c + w.w[2] * standardized.t_w)
}

/// Log-sum-exp with max subtraction; inputs must be non-empty.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Choice probabilities over a standardized offer set: `softmax(v(r_l))`.
pub fn choice_probabilities(w: &WeightVector, standardized_offers: &OfferSet) -> Result<Vec<f64>> {
    let values: Vec<f64> = standardized_offers
        .routes()
        .iter()
        .map(|r| route_value(w, r))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite route value in offer set"));
    }
    let lse = log_sum_exp(&values);
    Ok(values.iter().map(|v| (v - lse).exp()).collect())
}

/// Odds of choosing route `r_k` over `r_j` (standardized attributes):
/// `Πᵢ exp(−wᵢ (r_kⁱ − r_jⁱ))`.
pub fn choice_odds(w: &WeightVector, r_k: &RouteAttributes, r_j: &RouteAttributes) -> f64 {
    (-(w.w[0] * (r_k.t - r_j.t) + w.w[1] * (r_k.c - r_j.c) + w.w[2] * (r_k.t_w - r_j.t_w))).exp()
}

/// Log-probability of the recorded choice under the two-level model; always
/// finite and strictly negative for finite inputs.
pub fn observation_log_likelihood(
    params: &ParameterMatrix,
    obs: &Observation,
    scaler: &Scaler,
) -> Result<f64> {
    let w = compute_weights(params, &obs.features)?;
    let values: Vec<f64> = obs
        .offers
        .routes()
        .iter()
        .map(|r| route_value(&w, &scaler.apply_route(r)))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite route value"));
    }
    Ok(values[obs.choice()] - log_sum_exp(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::AgeGroup;

    fn feature(z: [f64; 7]) -> FeatureVector {
        FeatureVector::new(z).unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform_weights() {
        let z = feature([0.0, 1.0, 0.0, 0.7, 1.0, -2.0, 2.0]);
        let w = compute_weights(&ParameterMatrix::zeros(), &z).unwrap();
        for wi in w.as_array() {
            assert!((wi - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ln2_logit_gives_quarter_half_quarter() {
        let w = WeightVector::from_logits([0.0, (2.0f64).ln(), 0.0]).unwrap();
        assert!((w.time() - 0.25).abs() < 1e-15);
        assert!((w.cost() - 0.5).abs() < 1e-15);
        assert!((w.walk() - 0.25).abs() < 1e-15);
    }

    // Frozen against an independent 50-digit softmax evaluation of the
    // reference coefficients at z = (0,1,0,0.5,1,0.5,0).
    #[test]
    fn reference_coefficients_weight_oracle() {
        let z = feature([0.0, 1.0, 0.0, 0.5, 1.0, 0.5, 0.0]);
        let w = compute_weights(&ParameterMatrix::reference(), &z).unwrap();
        let expected = [
            0.066385949702875518,
            0.0014717989575554804,
            0.93214225133956900,
        ];
        for (wi, ei) in w.as_array().iter().zip(expected.iter()) {
            assert!((wi - ei).abs() / ei < 1e-12, "{wi} vs {ei}");
        }
    }

    #[test]
    fn non_finite_logits_error() {
        let z = feature([1.0, 0.0, 0.0, f64::MAX, 0.0, f64::MAX, 0.0]);
        let mut params = ParameterMatrix::zeros();
        params.a2[3] = f64::MAX;
        params.a2[5] = f64::MAX;
        assert!(compute_weights(&params, &z).is_err());
    }

    #[test]
    fn route_value_examples() {
        let w = WeightVector::uniform();
        assert!((route_value(&w, &RouteAttributes::new(3.0, 3.0, 3.0)) + 3.0).abs() < 1e-15);

        let w = WeightVector::from_logits([100.0, 0.0, 0.0]).unwrap();
        let v = route_value(&w, &RouteAttributes::new(7.5, 1.0, 2.0));
        assert!((v + 7.5).abs() < 1e-12);

        let w = WeightVector {
            w: [0.2, 0.5, 0.3],
        };
        let v = route_value(&w, &RouteAttributes::new(1.0, -0.5, 2.0));
        assert!((v + 0.55).abs() < 1e-15);
    }

    #[test]
    fn identical_routes_are_uniform() {
        let offers = OfferSet::new(vec![RouteAttributes::new(0.3, -0.2, 1.0); 8]).unwrap();
        let p = choice_probabilities(&WeightVector::uniform(), &offers).unwrap();
        for pi in &p {
            assert!((pi - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn two_route_softmax() {
        // Values (0, ln 3) -> probabilities (0.25, 0.75).
        let w = WeightVector::from_logits([0.0, -100.0, -100.0]).unwrap(); // ~ (1,0,0)
        let offers = OfferSet::new(vec![
            RouteAttributes::new(0.0, 0.0, 0.0),
            RouteAttributes::new(-(3.0f64).ln(), 0.0, 0.0),
        ])
        .unwrap();
        let p = choice_probabilities(&w, &offers).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    // Frozen against a 50-digit softmax evaluation of a fixed standardized
    // offer set under uniform weights.
    #[test]
    fn fixed_offer_set_probability_oracle() {
        let routes = [
            (-1.25, 0.90, -0.40),
            (0.35, -1.10, 0.75),
            (1.60, -0.55, 1.20),
            (-0.80, 1.45, -1.00),
            (0.05, 0.10, -0.20),
            (0.95, -1.60, 0.60),
            (-0.30, 0.25, 1.40),
            (-0.60, 0.55, -2.35),
        ];
        let offers = OfferSet::new(
            routes
                .iter()
                .map(|&(t, c, tw)| RouteAttributes::new(t, c, tw))
                .collect(),
        )
        .unwrap();
        let p = choice_probabilities(&WeightVector::uniform(), &offers).unwrap();
        let expected = [
            0.14629569788950206,
            0.11393520407632188,
            0.053819179585376172,
            0.12803409148365984,
            0.11585003675865461,
            0.11585003675865461,
            0.072648293579834649,
            0.25356745986799617,
        ];
        for (pi, ei) in p.iter().zip(expected.iter()) {
            assert!((pi - ei).abs() / ei < 1e-12, "{pi} vs {ei}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn odds_examples() {
        let w = WeightVector::uniform();
        let r = RouteAttributes::new(1.0, -0.5, 0.3);
        assert!((choice_odds(&w, &r, &r) - 1.0).abs() < 1e-15);

        let w = WeightVector {
            w: [0.5, 0.5, 0.0],
        };
        let rk = RouteAttributes::new(2.0, 0.0, 0.0);
        let rj = RouteAttributes::new(0.0, 0.0, 0.0);
        assert!((choice_odds(&w, &rk, &rj) - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_examples() {
        let z = FeatureVector::from_parts(AgeGroup::Active, 0.5, true, 0.2, 0).unwrap();
        let offers = OfferSet::new(vec![RouteAttributes::new(10.0, 5.0, 2.0); 8]).unwrap();
        let obs = Observation::new(z, offers, 3).unwrap();
        let ll = observation_log_likelihood(&ParameterMatrix::zeros(), &obs, &Scaler::identity())
            .unwrap();
        assert!((ll - (1.0f64 / 8.0).ln()).abs() < 1e-12);
        assert!((ll + 2.0794415416798359).abs() < 1e-12);
    }

    #[test]
    fn log_likelihood_matches_op_composition() {
        let z = FeatureVector::from_parts(AgeGroup::Retired, 0.3, false, 0.9, 1).unwrap();
        let offers = OfferSet::new(vec![
            RouteAttributes::new(30.0, 12.0, 4.0),
            RouteAttributes::new(55.0, 3.0, 10.0),
            RouteAttributes::new(20.0, 20.0, 1.0),
        ])
        .unwrap();
        let scaler = Scaler {
            mean: [35.0, 11.0, 5.0],
            std: [12.0, 6.0, 3.0],
        };
        let params = ParameterMatrix::reference();
        let obs = Observation::new(z, offers.clone(), 1).unwrap();
        let ll = observation_log_likelihood(&params, &obs, &scaler).unwrap();

        let w = compute_weights(&params, &z).unwrap();
        let p = choice_probabilities(&w, &scaler.apply_offers(&offers)).unwrap();
        assert!((ll - p[1].ln()).abs() < 1e-12);
        assert!(ll < 0.0);
    }
}
