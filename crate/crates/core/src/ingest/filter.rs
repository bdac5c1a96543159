use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::profile::UserProfile;
use crate::census::{tract_exclusion, TractExclusion, TractRecord};

/// User-level inclusion thresholds. Ping bounds are exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserFilter {
    pub min_pings_exclusive: u64,
    pub max_pings_exclusive: u64,
    pub min_tract_population: u64,
}

impl Default for UserFilter {
    fn default() -> Self {
        Self {
            min_pings_exclusive: 30,
            max_pings_exclusive: 100_000,
            min_tract_population: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserExclusion {
    TooFewPings,
    TooManyPings,
    NoHome,
    NoAcsData,
    LowPopulation,
}

/// Counts per exclusion reason. Every excluded user is in exactly one bucket.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTally {
    pub input: usize,
    pub retained: usize,
    pub too_few_pings: usize,
    pub too_many_pings: usize,
    pub no_home: usize,
    pub no_acs_data: usize,
    pub low_population: usize,
}

impl UserTally {
    pub fn excluded(&self) -> usize {
        self.too_few_pings + self.too_many_pings + self.no_home + self.no_acs_data + self.low_population
    }

    fn bump(&mut self, reason: UserExclusion) {
        match reason {
            UserExclusion::TooFewPings => self.too_few_pings += 1,
            UserExclusion::TooManyPings => self.too_many_pings += 1,
            UserExclusion::NoHome => self.no_home += 1,
            UserExclusion::NoAcsData => self.no_acs_data += 1,
            UserExclusion::LowPopulation => self.low_population += 1,
        }
    }
}

impl UserFilter {
    /// First reason `profile` is excluded, if any. `tracts` holds the ACS
    /// records keyed by tract GEOID; a tract with incomplete data counts as
    /// having no ACS data.
    pub fn exclusion(
        &self,
        profile: &UserProfile,
        tracts: &BTreeMap<&str, &TractRecord>,
    ) -> Option<UserExclusion> {
        if profile.ping_count <= self.min_pings_exclusive {
            return Some(UserExclusion::TooFewPings);
        }
        if profile.ping_count >= self.max_pings_exclusive {
            return Some(UserExclusion::TooManyPings);
        }
        let Some(tract) = profile.home_tract.as_deref() else {
            return Some(UserExclusion::NoHome);
        };
        let Some(record) = tracts.get(tract) else {
            return Some(UserExclusion::NoAcsData);
        };
        match tract_exclusion(record, self.min_tract_population) {
            None => None,
            Some(TractExclusion::LowPopulation) => Some(UserExclusion::LowPopulation),
            Some(_) => Some(UserExclusion::NoAcsData),
        }
    }
}

/// Keeps users within the ping bounds whose home tract has complete ACS data
/// and enough inhabitants.
pub fn filter_users(
    profiles: Vec<UserProfile>,
    tracts: &[TractRecord],
    filter: &UserFilter,
) -> (Vec<UserProfile>, UserTally) {
    let by_geoid: BTreeMap<&str, &TractRecord> =
        tracts.iter().map(|t| (t.tract_geoid.as_str(), t)).collect();
    let mut tally = UserTally {
        input: profiles.len(),
        ..Default::default()
    };
    let retained: Vec<_> = profiles
        .into_iter()
        .filter(|p| match filter.exclusion(p, &by_geoid) {
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
mod tests {
    use super::*;
    use crate::census::complete_record;

    fn tracts() -> Vec<TractRecord> {
        vec![
            complete_record("36047000100", 600),
            complete_record("36047000200", 499),
            TractRecord::empty("36047000300", "test"),
        ]
    }

    fn user(count: u64, bg: Option<&str>) -> UserProfile {
        UserProfile::new(format!("u{count}"), count, bg)
    }

    #[test]
    fn strict_ping_bounds() {
        let f = UserFilter::default();
        let t = tracts();
        let home = Some("360470001001");
        let (kept, tally) = filter_users(
            vec![user(30, home), user(31, home), user(99_999, home), user(100_000, home)],
            &t,
            &f,
        );
        let kept: Vec<u64> = kept.iter().map(|p| p.ping_count).collect();
        assert_eq!(kept, vec![31, 99_999]);
        assert_eq!(tally.too_few_pings, 1);
        assert_eq!(tally.too_many_pings, 1);
    }

    #[test]
    fn tract_based_exclusions() {
        let f = UserFilter::default();
        let (kept, tally) = filter_users(
            vec![
                user(50, None),
                user(51, Some("360470002001")),
                user(52, Some("360470003001")),
                user(53, Some("360479999001")),
                user(54, Some("360470001002")),
            ],
            &tracts(),
            &f,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(tally.no_home, 1);
        assert_eq!(tally.low_population, 1);
        assert_eq!(tally.no_acs_data, 2);
        assert_eq!(tally.input, tally.retained + tally.excluded());
    }

    #[test]
    fn two_and_a_quarter_percent_cohort() {
        // 4,000 users of which 90 fail some filter: 2.25 %.
        let t = tracts();
        let mut profiles = Vec::new();
        for i in 0..4000u64 {
            let (count, bg) = match i % 400 {
                0..=2 => (20, Some("360470001001")),
                3..=4 => (40, Some("360470002001")),
                5..=6 => (40, None),
                7..=8 => (40, Some("360470003001")),
                _ => (40 + i % 7, Some("360470001001")),
            };
            profiles.push(UserProfile::new(format!("u{i:04}"), count, bg));
        }
        let (kept, tally) = filter_users(profiles, &t, &UserFilter::default());
        assert_eq!(tally.excluded(), 90);
        assert_eq!(kept.len(), 3910);
        assert!((tally.excluded() as f64 / tally.input as f64 - 0.0225).abs() < 1e-12);
    }
}
