use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Local-time interval treated as night. Wraps past midnight when
/// `start_hour > end_hour`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NightWindow {
    pub start_hour: f64,
    pub end_hour: f64,
}

impl Default for NightWindow {
    fn default() -> Self {
        Self {
            start_hour: 22.0,
            end_hour: 6.0,
        }
    }
}

impl NightWindow {
    /// Whether `timestamp` (UTC seconds) falls inside the window in the local
    /// time `tz_offset_hours` away from UTC. No daylight-saving adjustment.
    pub fn contains(&self, timestamp: i64, tz_offset_hours: f64) -> bool {
        let offset = (tz_offset_hours * 3600.0).round() as i64;
        let second = (timestamp + offset).rem_euclid(86_400) as f64;
        let start = self.start_hour * 3600.0;
        let end = self.end_hour * 3600.0;
        if start <= end {
            (start..end).contains(&second)
        } else {
            second >= start || second < end
        }
    }
}

/// Outcome of home inference for one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomeInference<K> {
    pub home: Option<K>,
    /// Night pings that fell inside some region.
    pub night_pings: u64,
    /// Home was taken from all pings because there were no located night pings.
    pub fallback: bool,
}

fn most_frequent<K: Ord + Clone>(counts: &BTreeMap<K, u64>) -> Option<K> {
    // BTreeMap iterates keys ascending, so keeping the first maximum breaks
    // ties toward the smallest key.
    let mut best: Option<(&K, u64)> = None;
    for (k, &c) in counts {
        if best.map_or(true, |(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k.clone())
}

/// Most frequent night-time region of one user.
///
/// `pings` yields `(timestamp, region)` where `region` is `None` outside
/// every polygon. Ties go to the smallest key. Without located night pings
/// the most frequent region over all pings is used and flagged as fallback.
/// The result does not depend on ping order.
pub fn infer_home<K, I>(pings: I, night: &NightWindow, tz_offset_hours: f64) -> HomeInference<K>
where
    K: Ord + Clone,
    I: IntoIterator<Item = (i64, Option<K>)>,
{
    let mut night_counts: BTreeMap<K, u64> = BTreeMap::new();
    let mut all_counts: BTreeMap<K, u64> = BTreeMap::new();
    for (ts, region) in pings {
        let Some(region) = region else { continue };
        if night.contains(ts, tz_offset_hours) {
            *night_counts.entry(region.clone()).or_default() += 1;
        }
        *all_counts.entry(region).or_default() += 1;
    }
    let night_pings = night_counts.values().sum();
    if night_pings > 0 {
        HomeInference {
            home: most_frequent(&night_counts),
            night_pings,
            fallback: false,
        }
    } else {
        let home = most_frequent(&all_counts);
        HomeInference {
            fallback: home.is_some(),
            home,
            night_pings: 0,
        }
    }
}
