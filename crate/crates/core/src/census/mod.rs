//! Tract-level demographics from ACS subject tables.

mod acs;
mod features;
mod fetch;

pub use acs::{load_acs, AcsLoad, AcsPaths, AcsTable, CityResolver, MissingTract, VariableMap, VariableSource};
pub use features::{Feature, FeatureSpec};
pub use fetch::{fetch_acs, FetchSpec};

use serde::{Deserialize, Serialize};

/// Slack allowed on the four ethnicity shares summing to one.
pub const ETHNICITY_SUM_SLACK: f64 = 0.02;

/// Demographics of one census tract.
///
/// Missing ACS values are `None`, never zero. Ethnicity and education shares
/// are relative to the population aged 25 and over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractRecord {
    pub tract_geoid: String,
    pub city_id: String,
    pub population: Option<u64>,
    pub pop_25plus: Option<u64>,
    pub poverty_rate: Option<f64>,
    pub pct_black: Option<f64>,
    pub pct_white: Option<f64>,
    pub pct_asian: Option<f64>,
    pub pct_other: Option<f64>,
    pub pct_academic: Option<f64>,
    pub pct_male: Option<f64>,
    pub age_under_25: Option<f64>,
    pub age_25_44: Option<f64>,
    pub age_45_64: Option<f64>,
    pub age_65_plus: Option<f64>,
}

impl TractRecord {
    /// Record with every demographic value absent.
    pub fn empty(tract_geoid: impl Into<String>, city_id: impl Into<String>) -> Self {
        Self {
            tract_geoid: tract_geoid.into(),
            city_id: city_id.into(),
            population: None,
            pop_25plus: None,
            poverty_rate: None,
            pct_black: None,
            pct_white: None,
            pct_asian: None,
            pct_other: None,
            pct_academic: None,
            pct_male: None,
            age_under_25: None,
            age_25_44: None,
            age_45_64: None,
            age_65_plus: None,
        }
    }

    pub fn age_shares(&self) -> [Option<f64>; 4] {
        [
            self.age_under_25,
            self.age_25_44,
            self.age_45_64,
            self.age_65_plus,
        ]
    }

    /// Sets `pct_other` to the clamped residual of the three named groups.
    pub fn derive_other(&mut self) {
        self.pct_other = match (self.pct_black, self.pct_white, self.pct_asian) {
            (Some(b), Some(w), Some(a)) => Some((1.0 - (b + w + a)).clamp(0.0, 1.0)),
            _ => None,
        };
    }

    fn fractions(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        [
            self.poverty_rate,
            self.pct_black,
            self.pct_white,
            self.pct_asian,
            self.pct_other,
            self.pct_academic,
            self.pct_male,
        ]
        .into_iter()
        .chain(self.age_shares())
    }

    fn is_complete(&self) -> bool {
        self.population.is_some()
            && self.pop_25plus.is_some()
            && self.fractions().all(|f| f.is_some_and(|v| v.is_finite()))
    }

    fn fractions_in_range(&self) -> bool {
        self.fractions()
            .flatten()
            .all(|v| (0.0..=1.0).contains(&v))
    }

    fn ethnicity_consistent(&self) -> bool {
        match (self.pct_black, self.pct_white, self.pct_asian, self.pct_other) {
            (Some(b), Some(w), Some(a), Some(o)) => {
                (b + w + a + o - 1.0).abs() <= ETHNICITY_SUM_SLACK
            }
            _ => false,
        }
    }
}

/// Why a tract was dropped by [`filter_tracts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TractExclusion {
    MissingField,
    FractionOutOfRange,
    InconsistentEthnicity,
    LowPopulation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TractTally {
    pub input: usize,
    pub retained: usize,
    pub missing_field: usize,
    pub fraction_out_of_range: usize,
    pub inconsistent_ethnicity: usize,
    pub low_population: usize,
}

impl TractTally {
    fn bump(&mut self, reason: TractExclusion) {
        match reason {
            TractExclusion::MissingField => self.missing_field += 1,
            TractExclusion::FractionOutOfRange => self.fraction_out_of_range += 1,
            TractExclusion::InconsistentEthnicity => self.inconsistent_ethnicity += 1,
            TractExclusion::LowPopulation => self.low_population += 1,
        }
    }
}

/// First exclusion reason that applies to `record`, if any.
pub fn tract_exclusion(record: &TractRecord, min_population: u64) -> Option<TractExclusion> {
    if !record.is_complete() {
        Some(TractExclusion::MissingField)
    } else if !record.fractions_in_range() {
        Some(TractExclusion::FractionOutOfRange)
    } else if !record.ethnicity_consistent() {
        Some(TractExclusion::InconsistentEthnicity)
    } else if record.population.unwrap_or(0) < min_population {
        Some(TractExclusion::LowPopulation)
    } else {
        None
    }
}

/// Keeps complete, internally consistent tracts with at least
/// `min_population` inhabitants.
pub fn filter_tracts(records: Vec<TractRecord>, min_population: u64) -> (Vec<TractRecord>, TractTally) {
    let mut tally = TractTally {
        input: records.len(),
        ..Default::default()
    };
    let retained: Vec<_> = records
        .into_iter()
        .filter(|r| match tract_exclusion(r, min_population) {
            Some(reason) => {
                tally.bump(reason);
                false
            }
            None => true,
        })
        .collect();
    tally.retained = retained.len();
    (retained, tally)
}

#[cfg(test)]
pub(crate) fn complete_record(geoid: &str, population: u64) -> TractRecord {
    TractRecord {
        tract_geoid: geoid.to_string(),
        city_id: "test".into(),
        population: Some(population),
        pop_25plus: Some(population * 6 / 10),
        poverty_rate: Some(0.12),
        pct_black: Some(0.2),
        pct_white: Some(0.5),
        pct_asian: Some(0.1),
        pct_other: Some(0.2),
        pct_academic: Some(0.35),
        pct_male: Some(0.49),
        age_under_25: Some(0.3),
        age_25_44: Some(0.3),
        age_45_64: Some(0.25),
        age_65_plus: Some(0.15),
    }
}
