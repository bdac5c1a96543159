use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TractRecord;
use crate::{Error, Result};

/// A demographic variable that can enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Feature {
    Poverty,
    Academic,
    Black,
    White,
    Asian,
    Other,
    Male,
    AgeUnder25,
    Age25To44,
    Age45To64,
    Age65Plus,
}

impl Feature {
    pub const ALL: [Feature; 11] = [
        Feature::Poverty,
        Feature::Academic,
        Feature::Black,
        Feature::White,
        Feature::Asian,
        Feature::Other,
        Feature::Male,
        Feature::AgeUnder25,
        Feature::Age25To44,
        Feature::Age45To64,
        Feature::Age65Plus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Poverty => "poverty",
            Feature::Academic => "academic",
            Feature::Black => "black",
            Feature::White => "white",
            Feature::Asian => "asian",
            Feature::Other => "other",
            Feature::Male => "male",
            Feature::AgeUnder25 => "age_under_25",
            Feature::Age25To44 => "age_25_44",
            Feature::Age45To64 => "age_45_64",
            Feature::Age65Plus => "age_65_plus",
        }
    }

    pub fn value(self, tract: &TractRecord) -> Option<f64> {
        match self {
            Feature::Poverty => tract.poverty_rate,
            Feature::Academic => tract.pct_academic,
            Feature::Black => tract.pct_black,
            Feature::White => tract.pct_white,
            Feature::Asian => tract.pct_asian,
            Feature::Other => tract.pct_other,
            Feature::Male => tract.pct_male,
            Feature::AgeUnder25 => tract.age_under_25,
            Feature::Age25To44 => tract.age_25_44,
            Feature::Age45To64 => tract.age_45_64,
            Feature::Age65Plus => tract.age_65_plus,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature name {s:?}")))
    }
}

impl TryFrom<String> for Feature {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Feature> for String {
    fn from(f: Feature) -> String {
        f.name().to_string()
    }
}

/// Ordered list of features; the same spec must be used for training and
/// prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSpec(Vec<Feature>);

impl FeatureSpec {
    pub fn new(features: Vec<Feature>) -> Self {
        Self(features)
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        names
            .iter()
            .map(|n| n.as_ref().parse())
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn features(&self) -> &[Feature] {
        &self.0
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|f| f.name().to_string()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn position(&self, feature: Feature) -> Option<usize> {
        self.0.iter().position(|&f| f == feature)
    }

    /// Numeric vector for `tract` in spec order.
    pub fn vector(&self, tract: &TractRecord) -> Result<Vec<f64>> {
        self.0
            .iter()
            .map(|&f| {
                f.value(tract).ok_or_else(|| {
                    Error::Data(format!(
                        "tract {} has no value for feature {f}",
                        tract.tract_geoid
                    ))
                })
            })
            .collect()
    }
}

impl Default for FeatureSpec {
    /// Poverty, education, three ethnicity shares, four age buckets and sex.
    /// `other` is left out because it is the residual of the three named
    /// ethnicity shares; it can be added explicitly.
    fn default() -> Self {
        Self(vec![
            Feature::Poverty,
            Feature::Academic,
            Feature::Black,
            Feature::White,
            Feature::Asian,
            Feature::AgeUnder25,
            Feature::Age25To44,
            Feature::Age45To64,
            Feature::Age65Plus,
            Feature::Male,
        ])
    }
}
