//! Per-attribute standardization fitted on a training corpus.
//!
//! Route values are computed on standardized attributes so that the additive
//! value function is unit-free. The scaler is fitted once per dataset
//! (population mean/std over every route of every observation), persisted
//! alongside the posterior, and applied to all later offers — per-offer-set
//! scaling would make a route's value depend on its competitors twice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routes::{Observation, OfferSet, RouteAttributes};

/// Standard deviations below this are treated as degenerate and floored to 1
/// (identity scaling), keeping constant-attribute corpora usable.
const STD_FLOOR_THRESHOLD: f64 = 1e-9;

/// Affine per-attribute standardizer over `(t, c, t_w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Scaler {
    /// The identity transform (mean 0, std 1).
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Fits population mean/std per attribute over all routes of all
    /// observations.
    pub fn fit(observations: &[Observation]) -> Result<Self> {
        Self::fit_offers(observations.iter().map(|o| &o.offers))
    }

    /// Same as [`Scaler::fit`], over bare offer sets.
    pub fn fit_offers<'a>(offers: impl IntoIterator<Item = &'a OfferSet>) -> Result<Self> {
        let mut n = 0.0f64;
        let mut sum = [0.0f64; 3];
        let mut sum_sq = [0.0f64; 3];
        for offer in offers {
            for r in offer.routes() {
                let vals = [r.t, r.c, r.t_w];
                for k in 0..3 {
                    sum[k] += vals[k];
                    sum_sq[k] += vals[k] * vals[k];
                }
                n += 1.0;
            }
        }
        if n == 0.0 {
            return Err(Error::validation("cannot fit a scaler on empty data"));
        }
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for k in 0..3 {
            mean[k] = sum[k] / n;
            let var = (sum_sq[k] / n - mean[k] * mean[k]).max(0.0);
            let s = var.sqrt();
            std[k] = if s < STD_FLOOR_THRESHOLD { 1.0 } else { s };
        }
        Ok(Self { mean, std })
    }

    pub fn apply_route(&self, r: &RouteAttributes) -> RouteAttributes {
        RouteAttributes {
            t: (r.t - self.mean[0]) / self.std[0],
            c: (r.c - self.mean[1]) / self.std[1],
            t_w: (r.t_w - self.mean[2]) / self.std[2],
        }
    }

    pub fn apply_offers(&self, offers: &OfferSet) -> OfferSet {
        OfferSet::new(offers.routes().iter().map(|r| self.apply_route(r)).collect())
            .expect("offer set size preserved")
    }

    /// Inverse of [`Scaler::apply_route`].
    pub fn invert_route(&self, r: &RouteAttributes) -> RouteAttributes {
        RouteAttributes {
            t: r.t * self.std[0] + self.mean[0],
            c: r.c * self.std[1] + self.mean[1],
            t_w: r.t_w * self.std[2] + self.mean[2],
        }
    }
}
