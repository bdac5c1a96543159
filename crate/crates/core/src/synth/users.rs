use std::collections::BTreeMap;

use rand::distributions::WeightedIndex;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Coefficient, SynthCity, SynthConfig, METRES_PER_DEGREE};
use crate::census::TractRecord;
use crate::ingest::PingRecord;
use crate::model::derive_seed;
use crate::stats::median;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub home_block_group: String,
    /// Expected pings per day.
    pub lambda: f64,
    pub realized_count: u64,
    /// Observable trips (consecutive stays) in the generated trace.
    pub trips: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractTruth {
    pub record: TractRecord,
    pub users: usize,
    /// Planted log-rate offset, noise excluded.
    pub log_effect: f64,
    /// Median expected study-period count over residents.
    pub median_expected: Option<f64>,
    /// Planted per-feature effect in percent relative to the median tract.
    pub planted_percent: BTreeMap<String, f64>,
}

/// Observable trips between two block groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdCount {
    pub origin: String,
    pub destination: String,
    pub trips: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub config: SynthConfig,
    pub coefficients: Vec<Coefficient>,
    /// Gini of the expected daily rates λ.
    pub gini_expected: f64,
    /// Gini of the realized per-user ping counts.
    pub gini_realized: f64,
    pub total_pings: u64,
    pub tracts: Vec<TractTruth>,
    pub users: Vec<UserTruth>,
    /// Block-group OD counts, sorted by (origin, destination).
    pub trips: Vec<OdCount>,
}

/// Gini of non-negative reals, `Σ (2i − n − 1) x₍ᵢ₎ / (n Σx)`; 0 when all are 0.
pub(crate) fn gini_of(values: &[f64]) -> f64 {
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let total: f64 = xs.iter().sum();
    if xs.is_empty() || total <= 0.0 {
        return 0.0;
    }
    let weighted: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    weighted / (n * total)
}

const USERS_PER_TRACT_STREAM: u64 = 1;
const USER_STREAM: u64 = 1 << 32;

const NIGHT_END: u32 = 6 * 3600;
const NIGHT_START: u32 = 22 * 3600;

struct Generated {
    pings: Vec<PingRecord>,
    truth: UserTruth,
    od: BTreeMap<(u32, u32), u64>,
}

struct Context<'c> {
    city: &'c SynthCity,
    gravity: Vec<WeightedIndex<f64>>,
}

fn distance_m(a: (f64, f64), b: (f64, f64)) -> f64 {
    let mean_lat = ((a.0 + b.0) / 2.0).to_radians();
    let dy = (a.0 - b.0) * METRES_PER_DEGREE;
    let dx = (a.1 - b.1) * METRES_PER_DEGREE * mean_lat.cos();
    dy.hypot(dx)
}

/// Destination law from each block group: population over distance (km,
/// floored at 250 m) to the gravity exponent; the origin itself excluded.
fn gravity_tables(city: &SynthCity) -> Vec<WeightedIndex<f64>> {
    let bgs = &city.block_groups;
    let gamma = city.config.gravity_exponent;
    (0..bgs.len())
        .into_par_iter()
        .map(|h| {
            let origin = bgs[h].centre();
            let weights = bgs.iter().enumerate().map(|(j, b)| {
                if j == h {
                    0.0
                } else {
                    let km = (distance_m(origin, b.centre()) / 1000.0).max(0.25);
                    b.population.max(1) as f64 / km.powf(gamma)
                }
            });
            WeightedIndex::new(weights).expect("a grid has at least two block groups")
        })
        .collect()
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl Context<'_> {
    fn jittered(&self, rng: &mut ChaCha8Rng, bg: usize) -> (f64, f64) {
        let (lat, lon) = self.city.block_groups[bg].centre();
        let r = self.city.config.jitter_m * rng.gen::<f64>().sqrt();
        let theta = rng.gen::<f64>() * std::f64::consts::TAU;
        let dlat = r * theta.cos() / METRES_PER_DEGREE;
        let dlon = r * theta.sin() / (METRES_PER_DEGREE * lat.to_radians().cos());
        (round6(lat + dlat), round6(lon + dlon))
    }

    fn user(&self, index: usize, tract: usize) -> Generated {
        let cfg = &self.city.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, USER_STREAM + index as u64));
        let user_id = format!("{}-{index:06}", cfg.city);
        let home = 2 * tract + rng.gen_range(0..2);
        let noise = if cfg.sigma > 0.0 {
            Normal::new(0.0, cfg.sigma).expect("finite sigma").sample(&mut rng)
        } else {
            0.0
        };
        let lambda = cfg.base_rate * (self.city.log_effect(tract) + noise).exp();
        let poisson = Poisson::new(lambda).expect("positive rate");
        let offset = (cfg.tz_offset_hours * 3600.0).round() as i64;

        let mut pings = Vec::new();
        let mut anchors: Vec<(i64, u32)> = Vec::new();
        for day in 0..cfg.days as i64 {
            let n = (poisson.sample(&mut rng) as usize).min(86_400);
            let depart: u32 = rng.gen_range(7 * 3600..9 * 3600);
            let back: u32 = rng.gen_range(17 * 3600..21 * 3600);
            let visits = rng.gen_range(cfg.visits_per_day.min..=cfg.visits_per_day.max) as usize;
            let stops: Vec<usize> = (0..visits).map(|_| self.gravity[home].sample(&mut rng)).collect();
            let away = self.gravity[home].sample(&mut rng);
            let mut seconds: Vec<u32> = sample(&mut rng, 86_400, n).into_iter().map(|s| s as u32).collect();
            seconds.sort_unstable();
            for s in seconds {
                let bg = if s < NIGHT_END || s >= NIGHT_START {
                    if rng.gen_bool(cfg.p_home) {
                        home
                    } else {
                        away
                    }
                } else if s < depart || s >= back {
                    home
                } else {
                    stops[((s - depart) as usize * visits) / (back - depart) as usize]
                };
                let (lat, lon) = self.jittered(&mut rng, bg);
                let ts = cfg.start_local + day * 86_400 + s as i64 - offset;
                pings.push(PingRecord::new(user_id.clone(), ts, lat, lon));
                anchors.push((ts, bg as u32));
            }
        }

        let od = observable_trips(&anchors, cfg.dwell_s);
        Generated {
            truth: UserTruth {
                user_id,
                home_block_group: self.city.block_groups[home].geoid.clone(),
                lambda,
                realized_count: pings.len() as u64,
                trips: od.values().sum(),
            },
            pings,
            od,
        }
    }
}

/// Stays are maximal runs of consecutive pings at one anchor spanning at
/// least `dwell_s`; every consecutive pair of stays is one trip.
fn observable_trips(anchors: &[(i64, u32)], dwell_s: i64) -> BTreeMap<(u32, u32), u64> {
    let mut stays = Vec::new();
    let mut i = 0;
    while i < anchors.len() {
        let mut j = i;
        while j + 1 < anchors.len() && anchors[j + 1].1 == anchors[i].1 {
            j += 1;
        }
        if anchors[j].0 - anchors[i].0 >= dwell_s {
            stays.push(anchors[i].1);
        }
        i = j + 1;
    }
    let mut od = BTreeMap::new();
    for w in stays.windows(2) {
        *od.entry((w[0], w[1])).or_default() += 1;
    }
    od
}

/// Generates every user's trace. Users are numbered tract by tract, each
/// from its own seeded stream, so the output does not depend on thread
/// scheduling. Pings come back sorted by user, then time.
pub fn gen_users_and_pings(city: &SynthCity) -> Result<(Vec<PingRecord>, GroundTruthManifest)> {
    let cfg = &city.config;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, USERS_PER_TRACT_STREAM));
    let homes: Vec<usize> = (0..city.tracts.len())
        .flat_map(|k| {
            let n = rng.gen_range(cfg.users_per_tract.min..=cfg.users_per_tract.max) as usize;
            std::iter::repeat(k).take(n)
        })
        .collect();
    let ctx = Context {
        city,
        gravity: gravity_tables(city),
    };
    let generated: Vec<Generated> = homes.par_iter().enumerate().map(|(i, &k)| ctx.user(i, k)).collect();

    let mut pings = Vec::with_capacity(generated.iter().map(|g| g.pings.len()).sum());
    let mut users = Vec::with_capacity(generated.len());
    let mut od: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for g in generated {
        pings.extend(g.pings);
        users.push(g.truth);
        for (k, v) in g.od {
            *od.entry(k).or_default() += v;
        }
    }

    let days = cfg.days as f64;
    let tracts = (0..city.tracts.len())
        .map(|k| {
            let expected: Vec<f64> = users
                .iter()
                .zip(&homes)
                .filter(|(_, &h)| h == k)
                .map(|(u, _)| u.lambda * days)
                .collect();
            TractTruth {
                record: city.tracts[k].clone(),
                users: expected.len(),
                log_effect: city.log_effect(k),
                median_expected: median(&expected),
                planted_percent: city
                    .coefficients
                    .iter()
                    .map(|c| (c.feature.name().to_string(), city.planted_percent(k, c.feature)))
                    .collect(),
            }
        })
        .collect();
    let bg = |i: u32| city.block_groups[i as usize].geoid.clone();
    let mut trips: Vec<OdCount> = od
        .into_iter()
        .map(|((o, d), n)| OdCount {
            origin: bg(o),
            destination: bg(d),
            trips: n,
        })
        .collect();
    trips.sort_by(|a, b| (&a.origin, &a.destination).cmp(&(&b.origin, &b.destination)));

    let lambdas: Vec<f64> = users.iter().map(|u| u.lambda).collect();
    let realized: Vec<f64> = users.iter().map(|u| u.realized_count as f64).collect();
    let manifest = GroundTruthManifest {
        config: cfg.clone(),
        coefficients: city.coefficients.clone(),
        gini_expected: gini_of(&lambdas),
        gini_realized: gini_of(&realized),
        total_pings: pings.len() as u64,
        tracts,
        users,
        trips,
    };
    Ok((pings, manifest))
}
