//! User/context features and their encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Length of the encoded feature vector: one-hot age group (3) + ses +
/// weather + slack + disability.
pub const FEATURE_DIM: usize = 7;

/// Age bracket of a user; brackets carry different economic behavior
/// (transit discounts, tariffs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Young,
    Active,
    Retired,
}

impl AgeGroup {
    /// Bracket for an age in years: `< 25` young, `25..=65` active (both
    /// boundaries inclusive), `> 65` retired.
    pub fn from_age(age: i32) -> Result<Self> {
        if age < 0 {
            return Err(Error::validation(format!("age must be >= 0, got {age}")));
        }
        Ok(if age < 25 {
            AgeGroup::Young
        } else if age <= 65 {
            AgeGroup::Active
        } else {
            AgeGroup::Retired
        })
    }

    fn one_hot(self) -> [f64; 3] {
        match self {
            AgeGroup::Young => [1.0, 0.0, 0.0],
            AgeGroup::Active => [0.0, 1.0, 0.0],
            AgeGroup::Retired => [0.0, 0.0, 1.0],
        }
    }
}

/// Raw registration/trip-request variables, before encoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawUserContext {
    /// Age in years.
    pub age: i32,
    /// Socio-economic index (unnormalized; caller-defined scale).
    pub ses: f64,
    /// Whether rain/adverse weather is forecast at travel time.
    pub rain: bool,
    /// Time available to destination in minutes (urgency proxy).
    pub slack: f64,
    /// Disability level: 0 none, 1 moderate, 2 severe.
    pub disability: u8,
}

/// Encoded feature vector `z = (z11, z12, z13, z2, z3, z4, z5)`.
///
/// Invariants: the first three entries are a one-hot age group, `z3 ∈ {0,1}`
/// and `z5 ∈ {0,1,2}`. `z2` (socio-economic) and `z4` (slack) are arbitrary
/// reals; any normalization of those is up to the data producer.
///
/// Serializes as the record form used throughout the file formats:
/// `{"age_group":"young","ses":0.5,"rain":1,"slack":0.2,"disability":0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FeatureRecord", into = "FeatureRecord")]
pub struct FeatureVector {
    z: [f64; FEATURE_DIM],
}

/// Wire form of a [`FeatureVector`].
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub age_group: AgeGroup,
    pub ses: f64,
    pub rain: u8,
    pub slack: f64,
    pub disability: u8,
}

impl TryFrom<FeatureRecord> for FeatureVector {
    type Error = Error;

    fn try_from(r: FeatureRecord) -> Result<Self> {
        if r.rain > 1 {
            return Err(Error::validation(format!(
                "rain must be 0 or 1, got {}",
                r.rain
            )));
        }
        FeatureVector::from_parts(r.age_group, r.ses, r.rain == 1, r.slack, r.disability)
    }
}

impl From<FeatureVector> for FeatureRecord {
    fn from(z: FeatureVector) -> Self {
        Self {
            age_group: z.age_group(),
            ses: z.ses(),
            rain: if z.rain() { 1 } else { 0 },
            slack: z.slack(),
            disability: z.disability(),
        }
    }
}

impl FeatureVector {
    pub fn new(z: [f64; FEATURE_DIM]) -> Result<Self> {
        let one_hot_ok = z[..3].iter().all(|&v| v == 0.0 || v == 1.0)
            && (z[0] + z[1] + z[2] - 1.0).abs() == 0.0;
        if !one_hot_ok {
            return Err(Error::validation(format!(
                "age-group entries must be one-hot, got ({}, {}, {})",
                z[0], z[1], z[2]
            )));
        }
        if z[4] != 0.0 && z[4] != 1.0 {
            return Err(Error::validation(format!(
                "weather indicator must be 0 or 1, got {}",
                z[4]
            )));
        }
        if z[6] != 0.0 && z[6] != 1.0 && z[6] != 2.0 {
            return Err(Error::validation(format!(
                "disability level must be 0, 1 or 2, got {}",
                z[6]
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature vector entries must be finite"));
        }
        Ok(Self { z })
    }

    pub fn from_parts(
        age_group: AgeGroup,
        ses: f64,
        rain: bool,
        slack: f64,
        disability: u8,
    ) -> Result<Self> {
        if disability > 2 {
            return Err(Error::validation(format!(
                "disability level must be 0, 1 or 2, got {disability}"
            )));
        }
        let one_hot = age_group.one_hot();
        Self::new([
            one_hot[0],
            one_hot[1],
            one_hot[2],
            ses,
            if rain { 1.0 } else { 0.0 },
            slack,
            disability as f64,
        ])
    }

    pub fn as_array(&self) -> &[f64; FEATURE_DIM] {
        &self.z
    }

    pub fn age_group(&self) -> AgeGroup {
        if self.z[0] == 1.0 {
            AgeGroup::Young
        } else if self.z[1] == 1.0 {
            AgeGroup::Active
        } else {
            AgeGroup::Retired
        }
    }

    pub fn ses(&self) -> f64 {
        self.z[3]
    }

    pub fn rain(&self) -> bool {
        self.z[4] == 1.0
    }

    pub fn slack(&self) -> f64 {
        self.z[5]
    }

    pub fn disability(&self) -> u8 {
        self.z[6] as u8
    }
}

/// Encodes raw user/context variables into the model's feature vector.
pub fn encode_features(raw: &RawUserContext) -> Result<FeatureVector> {
    let group = AgeGroup::from_age(raw.age)?;
    FeatureVector::from_parts(group, raw.ses, raw.rain, raw.slack, raw.disability)
}
