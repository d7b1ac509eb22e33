//! Route attributes, offer sets, and observed interactions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Number of routes displayed per trip request in production.
pub const DEFAULT_OFFER_SIZE: usize = 8;

/// One route's attributes: total travel time `t` (minutes), monetary cost
/// `c`, and walking time `t_w` (minutes).
///
/// The struct itself places no constraints on the values so that it can also
/// carry standardized (possibly negative) attributes; raw data is checked at
/// the input boundaries via [`RouteAttributes::validate_raw`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteAttributes {
    pub t: f64,
    pub c: f64,
    #[serde(rename = "tw")]
    pub t_w: f64,
}

impl RouteAttributes {
    pub fn new(t: f64, c: f64, t_w: f64) -> Self {
        Self { t, c, t_w }
    }

    /// Checks the raw-data invariants: `t >= 0`, `c >= 0`, `0 <= t_w <= t`,
    /// all finite.
    pub fn validate_raw(&self) -> Result<()> {
        if !(self.t.is_finite() && self.c.is_finite() && self.t_w.is_finite()) {
            return Err(Error::validation("route attributes must be finite"));
        }
        if self.t < 0.0 || self.c < 0.0 {
            return Err(Error::validation(format!(
                "travel time and cost must be nonnegative, got t={}, c={}",
                self.t, self.c
            )));
        }
        if self.t_w < 0.0 || self.t_w > self.t {
            return Err(Error::validation(format!(
                "walking time must satisfy 0 <= t_w <= t, got t_w={}, t={}",
                self.t_w, self.t
            )));
        }
        Ok(())
    }
}

/// The routes displayed for one trip request.
#[derive(Debug, Clone, PartialEq)]
pub struct OfferSet {
    routes: Vec<RouteAttributes>,
}

impl OfferSet {
    /// Builds an offer set; at least two routes are required for a choice to
    /// be meaningful.
    pub fn new(routes: Vec<RouteAttributes>) -> Result<Self> {
        if routes.len() < 2 {
            return Err(Error::validation(format!(
                "an offer set needs at least 2 routes, got {}",
                routes.len()
            )));
        }
        Ok(Self { routes })
    }

    pub fn routes(&self) -> &[RouteAttributes] {
        &self.routes
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// One recorded user interaction: context features, the displayed offer set,
/// and the 0-based index of the chosen route.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: FeatureVector,
    pub offers: OfferSet,
    choice: usize,
}

impl Observation {
    pub fn new(features: FeatureVector, offers: OfferSet, choice: usize) -> Result<Self> {
        if choice >= offers.len() {
            return Err(Error::validation(format!(
                "choice index {} out of range for {} routes",
                choice,
                offers.len()
            )));
        }
        Ok(Self {
            features,
            offers,
            choice,
        })
    }

    pub fn choice(&self) -> usize {
        self.choice
    }
}
