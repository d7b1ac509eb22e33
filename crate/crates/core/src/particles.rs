//! Posterior draws carried between days as the sequential prior's support.

use routepref_nuts::SampleChain;

use crate::choice::{ParameterMatrix, PARAM_DIM};
use crate::error::{Error, Result};

/// A set of posterior draws (one row per particle) labeled with the day they
/// were produced for. "Today's posterior is tomorrow's prior."
///
/// The row dimension is generic so the kernel-density machinery can be
/// exercised in low dimensions; model-facing call sites require
/// [`PARAM_DIM`]-dimensional particles.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    particles: Vec<Vec<f64>>,
    pub day: i64,
}

impl ParticleSet {
    pub fn new(particles: Vec<Vec<f64>>, day: i64) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::validation("particle set must be nonempty"));
        }
        let dim = particles[0].len();
        if dim == 0 {
            return Err(Error::validation("particles must have dimension >= 1"));
        }
        for (i, p) in particles.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::validation(format!(
                    "particle {i} has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("particle {i} has non-finite entries")));
            }
        }
        Ok(Self { particles, day })
    }

    pub fn from_chain(chain: &SampleChain, day: i64) -> Result<Self> {
        Self::new(chain.draws.clone(), day)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.particles
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.particles[i]
    }

    pub fn relabeled(mut self, day: i64) -> Self {
        self.day = day;
        self
    }

    pub fn component_mean(&self, j: usize) -> f64 {
        self.particles.iter().map(|p| p[j]).sum::<f64>() / self.len() as f64
    }

    /// Population variance (divide by n) of component `j`.
    pub fn component_population_variance(&self, j: usize) -> f64 {
        let mean = self.component_mean(j);
        self.particles
            .iter()
            .map(|p| (p[j] - mean).powi(2))
            .sum::<f64>()
            / self.len() as f64
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        (0..self.dim()).map(|j| self.component_mean(j)).collect()
    }

    /// Posterior mean as a [`ParameterMatrix`]; requires `dim == PARAM_DIM`.
    pub fn mean_parameters(&self) -> Result<ParameterMatrix> {
        if self.dim() != PARAM_DIM {
            return Err(Error::validation(format!(
                "particles have dimension {}, expected {PARAM_DIM}",
                self.dim()
            )));
        }
        ParameterMatrix::from_flat(&self.posterior_mean())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape() {
        assert!(ParticleSet::new(vec![], 0).is_err());
        assert!(ParticleSet::new(vec![vec![1.0, 2.0], vec![3.0]], 0).is_err());
        assert!(ParticleSet::new(vec![vec![f64::NAN]], 0).is_err());
        let p = ParticleSet::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]], 5).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.dim(), 2);
        assert_eq!(p.day, 5);
    }

    #[test]
    fn moments() {
        let p = ParticleSet::new(vec![vec![0.0], vec![2.0]], 0).unwrap();
        assert_eq!(p.component_mean(0), 1.0);
        assert_eq!(p.component_population_variance(0), 1.0);
    }
}
