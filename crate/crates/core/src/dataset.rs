//! A collection of observations plus the scaler fitted on it.

use crate::error::{Error, Result};
use crate::routes::Observation;
use crate::scaler::Scaler;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub observations: Vec<Observation>,
    pub scaler: Option<Scaler>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Self {
        Self {
            observations,
            scaler: None,
        }
    }

    pub fn with_scaler(observations: Vec<Observation>, scaler: Scaler) -> Self {
        Self {
            observations,
            scaler: Some(scaler),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Fits (and caches) the scaler from the stored observations.
    pub fn fit_scaler(&mut self) -> Result<&Scaler> {
        if self.scaler.is_none() {
            self.scaler = Some(Scaler::fit(&self.observations)?);
        }
        Ok(self.scaler.as_ref().unwrap())
    }

    /// The fitted scaler, or a state error when none was attached.
    pub fn require_scaler(&self) -> Result<&Scaler> {
        self.scaler
            .as_ref()
            .ok_or_else(|| Error::validation("dataset has no fitted scaler"))
    }
}
