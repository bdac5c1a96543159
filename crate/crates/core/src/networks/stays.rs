use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ingest::LocatedPing;

const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Great-circle distance in metres.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

fn dist(a: &LocatedPing, b: &LocatedPing) -> f64 {
    haversine_m(a.lat, a.lon, b.lat, b.lon)
}

/// Stop model parameters, reported with every network artifact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayParams {
    pub radius_m: f64,
    pub dwell_s: i64,
}

impl Default for StayParams {
    fn default() -> Self {
        Self {
            radius_m: 200.0,
            dwell_s: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stay {
    pub user_id: Arc<str>,
    pub region: Arc<str>,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub user_id: Arc<str>,
    pub origin: Arc<str>,
    pub destination: Arc<str>,
    pub departure: i64,
}

/// Index of the ping minimising the summed distance to the rest of the run;
/// the earliest such ping on ties.
fn medoid(run: &[LocatedPing]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, p) in run.iter().enumerate() {
        let total: f64 = run.iter().map(|q| dist(p, q)).sum();
        if total < best.1 {
            best = (k, total);
        }
    }
    best.0
}

/// Greedy stay-point detection over one user's time-sorted pings.
///
/// From the current anchor ping the run extends while pings stay within
/// `radius_m` of the anchor. A run spanning at least `dwell_s` becomes a
/// stay labelled by the region of its medoid ping (runs whose medoid lies
/// outside every region are dropped) and scanning resumes after it;
/// otherwise the anchor advances by one ping.
///
/// `label` maps a region index to the node label (tract or block group).
pub fn detect_stays<F>(user_id: &Arc<str>, pings: &[LocatedPing], params: &StayParams, label: F) -> Vec<Stay>
where
    F: Fn(u32) -> Arc<str>,
{
    let mut stays = Vec::new();
    let n = pings.len();
    let mut i = 0;
    while i < n {
        let anchor = &pings[i];
        let mut j = i + 1;
        while j < n && dist(anchor, &pings[j]) <= params.radius_m {
            j += 1;
        }
        let run = &pings[i..j];
        if run[run.len() - 1].timestamp - anchor.timestamp >= params.dwell_s {
            if let Some(region) = run[medoid(run)].region {
                stays.push(Stay {
                    user_id: user_id.clone(),
                    region: label(region),
                    start: anchor.timestamp,
                    end: run[run.len() - 1].timestamp,
                });
            }
            i = j;
        } else {
            i += 1;
        }
    }
    stays
}

/// One trip per consecutive pair of stays, departing when the first ends.
pub fn extract_trips(stays: &[Stay]) -> Vec<Trip> {
    stays
        .windows(2)
        .map(|w| Trip {
            user_id: w[0].user_id.clone(),
            origin: w[0].region.clone(),
            destination: w[1].region.clone(),
            departure: w[0].end,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ping(t: i64, lat: f64, lon: f64) -> LocatedPing {
        LocatedPing {
            timestamp: t,
            lat,
            lon,
            region: Some(0),
        }
    }

    fn label(_: u32) -> Arc<str> {
        Arc::from("36047000100")
    }

    #[test]
    fn haversine_reference() {
        // one degree of latitude
        let d = haversine_m(0.0, 0.0, 1.0, 0.0);
        assert!((d - 111_195.08).abs() < 1.0);
    }

    #[test]
    fn one_location_fifteen_minutes() {
        let user: Arc<str> = Arc::from("u");
        let pings: Vec<_> = (0..5).map(|k| ping(k * 225, 40.7, -74.0)).collect();
        let stays = detect_stays(&user, &pings, &StayParams::default(), label);
        assert_eq!(stays.len(), 1);
        assert_eq!((stays[0].start, stays[0].end), (0, 900));
    }

    #[test]
    fn far_apart_quick_pings() {
        let user: Arc<str> = Arc::from("u");
        let pings = vec![ping(0, 40.70, -74.0), ping(60, 40.745, -74.0)];
        assert!(detect_stays(&user, &pings, &StayParams::default(), label).is_empty());
    }

    #[test]
    fn trips_between_consecutive_stays() {
        let user: Arc<str> = Arc::from("u");
        let s = |r: &str, a, b| Stay {
            user_id: user.clone(),
            region: Arc::from(r),
            start: a,
            end: b,
        };
        let stays = vec![s("A", 0, 10), s("B", 20, 30), s("A", 40, 50)];
        let trips = extract_trips(&stays);
        assert_eq!(trips.len(), 2);
        assert_eq!(&*trips[1].origin, "B");
        assert_eq!(trips[0].departure, 10);
        assert!(extract_trips(&stays[..1]).is_empty());
    }

    /// Greedy segmentation found by testing every candidate run end
    /// explicitly, in O(n²) per anchor.
    fn windowed_oracle(pings: &[LocatedPing], params: &StayParams) -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < pings.len() {
            let mut end = i;
            for j in i..pings.len() {
                if (i..=j).all(|k| dist(&pings[i], &pings[k]) <= params.radius_m) {
                    end = j;
                } else {
                    break;
                }
            }
            if pings[end].timestamp - pings[i].timestamp >= params.dwell_s {
                out.push((pings[i].timestamp, pings[end].timestamp));
                i = end + 1;
            } else {
                i += 1;
            }
        }
        out
    }

    #[test]
    fn random_walks_match_windowed_oracle() {
        let user: Arc<str> = Arc::from("u");
        let params = StayParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mut t = 0;
            let (mut lat, mut lon) = (40.7, -74.0);
            let mut pings = Vec::new();
            for _ in 0..rng.gen_range(1..80) {
                t += rng.gen_range(10..400);
                if rng.gen_bool(0.2) {
                    lat += rng.gen_range(-0.01..0.01);
                    lon += rng.gen_range(-0.01..0.01);
                }
                pings.push(ping(t, lat + rng.gen_range(-0.0005..0.0005), lon));
            }
            let got: Vec<_> = detect_stays(&user, &pings, &params, label)
                .into_iter()
                .map(|s| (s.start, s.end))
                .collect();
            assert_eq!(got, windowed_oracle(&pings, &params));
        }
    }
}
