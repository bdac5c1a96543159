//! Synthetic grid cities with planted demographic effects on data
//! production, used as ground truth for the rest of the pipeline.
//!
//! Tracts are square cells of a regular grid; each tract holds two block
//! groups (its west and east halves). Expected daily production of a user
//! is log-linear in the home tract's features:
//! `λ = base_rate · exp(Σ β_f (x_f − median_f) + ε)`, `ε ~ N(0, σ)`.

mod emit;
mod users;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

pub use emit::{boundaries_geojson, emit_fixture, write_acs_tables, FixturePaths, SynthFixture};
pub use users::{gen_users_and_pings, GroundTruthManifest, OdCount, TractTruth, UserTruth};

use crate::census::{Feature, TractRecord};
use crate::ingest::{Region, RegionIndex, StudyWindow};
use crate::model::derive_seed;
use crate::stats::median;
use crate::{Error, Result};

/// Planted effect: tracts at the feature's maximum produce
/// `percent_at_max` percent more (or less) than tracts at its median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSpec {
    pub feature: Feature,
    pub percent_at_max: f64,
}

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: u32,
    pub max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub city: String,
    /// 5-digit state+county FIPS prefix of every GEOID.
    pub county: String,
    pub n_tracts: usize,
    pub users_per_tract: CountRange,
    pub days: u32,
    /// Local midnight starting the study, in epoch seconds as if local were UTC.
    pub start_local: i64,
    pub tz_offset_hours: f64,
    /// Median expected pings per day.
    pub base_rate: f64,
    pub effects: Vec<EffectSpec>,
    /// Standard deviation of the per-user log-rate noise.
    pub sigma: f64,
    /// Probability that a night ping is at home.
    pub p_home: f64,
    pub gravity_exponent: f64,
    pub visits_per_day: CountRange,
    /// Jitter radius around a location anchor, metres.
    pub jitter_m: f64,
    /// Minimum dwell of an observable stay, seconds (matches the stay detector).
    pub dwell_s: i64,
    /// South-west corner of the grid.
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Tract cell size in degrees.
    pub cell_lat: f64,
    pub cell_lon: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            city: "synth".into(),
            county: "99001".into(),
            n_tracts: 120,
            users_per_tract: CountRange { min: 25, max: 45 },
            days: 30,
            start_local: 1_554_076_800, // 2019-04-01T00:00
            tz_offset_hours: -5.0,
            base_rate: 3.0,
            effects: vec![
                EffectSpec { feature: Feature::Poverty, percent_at_max: -10.0 },
                EffectSpec { feature: Feature::Academic, percent_at_max: 20.0 },
            ],
            sigma: 0.8,
            p_home: 0.7,
            gravity_exponent: 2.0,
            visits_per_day: CountRange { min: 1, max: 3 },
            jitter_m: 50.0,
            dwell_s: 600,
            origin_lat: 40.60,
            origin_lon: -74.05,
            cell_lat: 0.01,
            cell_lon: 0.013,
            seed: 1729,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("synth.{field}: {why}")));
        if self.county.len() != 5 || !self.county.bytes().all(|b| b.is_ascii_digit()) {
            return bad("county", "must be a 5-digit FIPS code");
        }
        if self.n_tracts == 0 || self.n_tracts > 9999 {
            return bad("n_tracts", "must be in 1..=9999");
        }
        for (name, r) in [("users_per_tract", self.users_per_tract), ("visits_per_day", self.visits_per_day)] {
            if r.min > r.max {
                return bad(name, "min exceeds max");
            }
        }
        if self.visits_per_day.min == 0 {
            return bad("visits_per_day", "min must be at least 1");
        }
        if self.days == 0 {
            return bad("days", "must be positive");
        }
        if !(self.base_rate > 0.0) {
            return bad("base_rate", "must be positive");
        }
        if !(self.sigma >= 0.0) {
            return bad("sigma", "must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.p_home) {
            return bad("p_home", "must be a probability");
        }
        if !(self.jitter_m >= 0.0) || !(self.gravity_exponent >= 0.0) {
            return bad("jitter_m", "jitter and gravity exponent must be non-negative");
        }
        if self.effects.iter().any(|e| !(e.percent_at_max > -100.0)) {
            return bad("effects", "percent_at_max must exceed -100");
        }
        // Anchors of adjacent block groups must stay distinguishable by a
        // 200 m stay radius after jitter.
        let bg_width_m = self.cell_lon / 2.0 * METRES_PER_DEGREE * self.origin_lat.to_radians().cos();
        let bg_height_m = self.cell_lat * METRES_PER_DEGREE;
        if bg_width_m.min(bg_height_m) < 2.0 * self.jitter_m + 300.0 {
            return bad("cell_lon", "block groups too small for the jitter radius");
        }
        Ok(())
    }

    pub fn study_window(&self) -> StudyWindow {
        let start = self.start_local - (self.tz_offset_hours * 3600.0).round() as i64;
        StudyWindow {
            start,
            end: start + self.days as i64 * 86_400,
        }
    }
}

pub(crate) const METRES_PER_DEGREE: f64 = 111_320.0;

/// One block group cell of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockGroupCell {
    pub geoid: String,
    /// Index of the owning tract in [`SynthCity::tracts`].
    pub tract: usize,
    pub west: f64,
    pub south: f64,
    pub east: f64,
    pub north: f64,
    pub population: u64,
}

impl BlockGroupCell {
    pub fn centre(&self) -> (f64, f64) {
        ((self.south + self.north) / 2.0, (self.west + self.east) / 2.0)
    }
}

/// Integer counts behind one tract's ACS rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractCounts {
    pub population: u64,
    pub male: u64,
    /// `S0101_C01_002E ..= S0101_C01_019E`
    pub age_rows: Vec<u64>,
    pub pop_25plus: u64,
    pub white: u64,
    pub black: u64,
    pub asian: u64,
    /// Percent with one decimal.
    pub poverty_percent: f64,
    pub academic_percent: f64,
}

/// Planted log-rate coefficient of one feature, centred at its median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub feature: Feature,
    pub beta: f64,
    pub centre: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCity {
    pub config: SynthConfig,
    pub tracts: Vec<TractRecord>,
    pub counts: Vec<TractCounts>,
    pub block_groups: Vec<BlockGroupCell>,
    pub coefficients: Vec<Coefficient>,
}

/// Rows of S0101 summed into each age bucket.
pub(crate) const AGE_BUCKET_ROWS: [usize; 4] = [5, 4, 4, 5];

fn shares(rng: &mut ChaCha8Rng, alphas: &[f64]) -> Vec<f64> {
    let draws: Vec<f64> = alphas
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive shape").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|d| d / total).collect()
}

fn draw_counts(rng: &mut ChaCha8Rng) -> TractCounts {
    let population: u64 = rng.gen_range(800..=6000);
    let pop_25plus = (population as f64 * rng.gen_range(0.55..0.75)).round() as u64;
    let male = (population as f64 * rng.gen_range(0.45..0.55)).round() as u64;

    let age = shares(rng, &[4.0, 4.0, 3.5, 2.5]);
    let mut buckets = [0u64; 4];
    for b in 0..3 {
        buckets[b] = (age[b] * population as f64).floor() as u64;
    }
    buckets[3] = population - buckets[..3].iter().sum::<u64>();
    let mut age_rows = Vec::with_capacity(18);
    for (total, rows) in buckets.iter().zip(AGE_BUCKET_ROWS) {
        let rows = rows as u64;
        for r in 0..rows {
            age_rows.push(total / rows + u64::from(r < total % rows));
        }
    }

    let eth = shares(rng, &[3.0, 2.0, 1.0, 1.0]);
    let count = |s: f64| (s * pop_25plus as f64).floor() as u64;
    let round1 = |v: f64| (v * 10.0).round() / 10.0;
    TractCounts {
        population,
        male,
        age_rows,
        pop_25plus,
        white: count(eth[0]),
        black: count(eth[1]),
        asian: count(eth[2]),
        poverty_percent: round1(rng.gen_range(2.0..45.0)),
        academic_percent: round1(rng.gen_range(5.0..70.0)),
    }
}

/// The tract record the census loader derives from `counts` under the
/// default variable map.
pub fn record_from_counts(geoid: &str, city: &str, c: &TractCounts) -> TractRecord {
    let pop = c.population as f64;
    let ratio = |n: u64, d: u64| 1.0 * n as f64 / d as f64;
    let mut bucket = [0.0; 4];
    let mut row = 0;
    for (b, rows) in AGE_BUCKET_ROWS.iter().enumerate() {
        let mut sum = 0.0;
        for _ in 0..*rows {
            sum += c.age_rows[row] as f64;
            row += 1;
        }
        bucket[b] = 1.0 * sum / pop;
    }
    let mut record = TractRecord {
        tract_geoid: geoid.to_string(),
        city_id: city.to_string(),
        population: Some(c.population),
        pop_25plus: Some(c.pop_25plus),
        poverty_rate: Some(0.01 * c.poverty_percent / 1.0),
        pct_black: Some(ratio(c.black, c.pop_25plus)),
        pct_white: Some(ratio(c.white, c.pop_25plus)),
        pct_asian: Some(ratio(c.asian, c.pop_25plus)),
        pct_other: None,
        pct_academic: Some(0.01 * c.academic_percent / 1.0),
        pct_male: Some(ratio(c.male, c.population)),
        age_under_25: Some(bucket[0]),
        age_25_44: Some(bucket[1]),
        age_45_64: Some(bucket[2]),
        age_65_plus: Some(bucket[3]),
    };
    record.derive_other();
    record
}

/// Tract GEOID of grid cell `k`.
pub fn tract_geoid(county: &str, k: usize) -> String {
    format!("{county}{:04}00", k + 1)
}

/// Draws the grid, tract demographics and planted coefficients.
pub fn gen_city(config: &SynthConfig) -> Result<SynthCity> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
    let cols = (config.n_tracts as f64).sqrt().ceil() as usize;
    let mut tracts = Vec::with_capacity(config.n_tracts);
    let mut counts = Vec::with_capacity(config.n_tracts);
    let mut block_groups = Vec::with_capacity(2 * config.n_tracts);
    for k in 0..config.n_tracts {
        let c = draw_counts(&mut rng);
        let geoid = tract_geoid(&config.county, k);
        let (row, col) = (k / cols, k % cols);
        let south = config.origin_lat + row as f64 * config.cell_lat;
        let west = config.origin_lon + col as f64 * config.cell_lon;
        let mid = west + config.cell_lon / 2.0;
        let halves = [(west, mid, c.population / 2), (mid, west + config.cell_lon, c.population - c.population / 2)];
        for (b, (w, e, pop)) in halves.into_iter().enumerate() {
            block_groups.push(BlockGroupCell {
                geoid: format!("{geoid}{}", b + 1),
                tract: k,
                west: w,
                south,
                east: e,
                north: south + config.cell_lat,
                population: pop,
            });
        }
        tracts.push(record_from_counts(&geoid, &config.city, &c));
        counts.push(c);
    }

    let coefficients = config
        .effects
        .iter()
        .map(|e| {
            let values: Vec<f64> = tracts.iter().filter_map(|t| e.feature.value(t)).collect();
            let centre = median(&values).unwrap_or(0.0);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let beta = if max > centre {
                (1.0 + e.percent_at_max / 100.0).ln() / (max - centre)
            } else {
                0.0
            };
            Coefficient {
                feature: e.feature,
                beta,
                centre,
                max,
            }
        })
        .collect();

    Ok(SynthCity {
        config: config.clone(),
        tracts,
        counts,
        block_groups,
        coefficients,
    })
}

impl SynthCity {
    /// Planted log-rate offset of tract `k` (noise excluded).
    pub fn log_effect(&self, k: usize) -> f64 {
        self.coefficients
            .iter()
            .map(|c| c.beta * (c.feature.value(&self.tracts[k]).unwrap_or(c.centre) - c.centre))
            .sum()
    }

    /// Planted effect of one feature on tract `k`, in percent relative to a
    /// tract at the feature's median.
    pub fn planted_percent(&self, k: usize, feature: Feature) -> f64 {
        self.coefficients
            .iter()
            .find(|c| c.feature == feature)
            .map_or(0.0, |c| {
                let x = feature.value(&self.tracts[k]).unwrap_or(c.centre);
                100.0 * ((c.beta * (x - c.centre)).exp() - 1.0)
            })
    }

    /// Block-group polygons of the grid.
    pub fn region_index(&self) -> Result<RegionIndex> {
        RegionIndex::new(
            self.block_groups
                .iter()
                .map(|b| Region::rectangle(b.geoid.clone(), b.west, b.south, b.east, b.north))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::census::{filter_tracts, tract_exclusion};

    fn small() -> SynthConfig {
        SynthConfig {
            n_tracts: 30,
            ..Default::default()
        }
    }

    #[test]
    fn valid_tracts_and_determinism() {
        let city = gen_city(&small()).unwrap();
        assert_eq!(city.tracts.len(), 30);
        assert_eq!(city.block_groups.len(), 60);
        for t in &city.tracts {
            assert_eq!(tract_exclusion(t, 500), None, "{t:?}");
            let eth = t.pct_white.unwrap() + t.pct_black.unwrap() + t.pct_asian.unwrap() + t.pct_other.unwrap();
            assert!((eth - 1.0).abs() <= 1e-9);
            let ages: f64 = t.age_shares().iter().map(|a| a.unwrap()).sum();
            assert!((ages - 1.0).abs() <= 1e-9);
        }
        let (kept, _) = filter_tracts(city.tracts.clone(), 500);
        assert_eq!(kept.len(), 30);
        assert_eq!(gen_city(&small()).unwrap(), city);
    }

    #[test]
    fn planted_effect_at_max() {
        let city = gen_city(&small()).unwrap();
        let k = (0..30)
            .max_by(|&a, &b| city.tracts[a].poverty_rate.unwrap().total_cmp(&city.tracts[b].poverty_rate.unwrap()))
            .unwrap();
        assert!((city.planted_percent(k, Feature::Poverty) + 10.0).abs() < 1e-9);
    }

    #[test]
    fn positive_beta_is_monotone() {
        let city = gen_city(&small()).unwrap();
        let c = city.coefficients.iter().find(|c| c.feature == Feature::Academic).unwrap();
        assert!(c.beta > 0.0);
        let mut k: Vec<usize> = (0..30).collect();
        k.sort_by(|&a, &b| city.tracts[a].pct_academic.unwrap().total_cmp(&city.tracts[b].pct_academic.unwrap()));
        let pct: Vec<f64> = k.iter().map(|&i| city.planted_percent(i, Feature::Academic)).collect();
        assert!(pct.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cells_tile_without_overlap() {
        let city = gen_city(&small()).unwrap();
        let index = city.region_index().unwrap();
        for b in &city.block_groups {
            let (lat, lon) = b.centre();
            let hits: Vec<&str> = index.regions().iter().filter(|r| r.contains(lat, lon)).map(|r| r.id.as_str()).collect();
            assert_eq!(hits, vec![b.geoid.as_str()]);
        }
        // shared corner belongs to exactly one cell
        let b = &city.block_groups[1];
        let hits = index.regions().iter().filter(|r| r.contains(b.south, b.west)).count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SynthConfig { p_home: 1.5, ..small() };
        assert!(matches!(gen_city(&bad), Err(Error::Config(m)) if m.contains("p_home")));
        let bad = SynthConfig { sigma: -1.0, ..small() };
        assert!(matches!(gen_city(&bad), Err(Error::Config(_))));
    }
}
