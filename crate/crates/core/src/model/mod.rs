//! Demographic model of median tract data production.

mod cv;
mod forest;
mod generalize;
mod tree;

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cv::{nested_cv, stratified_folds, CvConfig, CvReport, FoldTrace, InnerSplit};
pub use forest::{fit_forest, ForestModel};
pub use generalize::{city_matrix, fit_cities, leave_one_out, CityFit, CitySamples, LeaveOneOutScore, ScoreMatrix};
pub use tree::{fit_tree, RegressionTree, Split, TreeNode};

use crate::census::{FeatureSpec, TractRecord};
use crate::ingest::UserProfile;
use crate::stats::{median, pearson};
use crate::Result;

/// One tract's features and median per-user production.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractSample {
    pub tract_geoid: String,
    pub city_id: String,
    pub features: Vec<f64>,
    pub target: f64,
}

/// Borrowed feature rows plus targets.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    pub features: Vec<&'a [f64]>,
    pub targets: Vec<f64>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(rows: &'a [Vec<f64>], targets: Vec<f64>) -> Self {
        Self {
            features: rows.iter().map(Vec::as_slice).collect(),
            targets,
        }
    }

    pub fn from_samples<'s: 'a>(samples: impl IntoIterator<Item = &'s TractSample>) -> Self {
        let (features, targets) = samples
            .into_iter()
            .map(|s| (s.features.as_slice(), s.target))
            .unzip();
        Self { features, targets }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.first().map_or(0, |r| r.len())
    }
}

/// Number of candidate features drawn at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    /// `⌈d/3⌉`
    Third,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::All => d,
            MaxFeatures::Third => d.div_ceil(3),
            MaxFeatures::Count(k) => k,
        }
        .clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub n_trees: usize,
    /// `None` grows until the other stopping rules apply.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    #[serde(default = "yes")]
    pub bootstrap: bool,
}

fn yes() -> bool {
    true
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 5,
            max_features: MaxFeatures::Third,
            bootstrap: true,
        }
    }
}

impl Hyperparameters {
    /// Ordering key where smaller means a simpler model: shallower, fewer
    /// candidate features, fewer trees, larger leaves.
    pub fn complexity(&self, n_features: usize) -> (usize, usize, usize, std::cmp::Reverse<usize>) {
        (
            self.max_depth.unwrap_or(usize::MAX),
            self.max_features.resolve(n_features),
            self.n_trees,
            std::cmp::Reverse(self.min_leaf),
        )
    }

    /// Default search grid: 100 trees; depth 4, 8 or unlimited; minimum leaf
    /// 2, 5 or 10; `⌈d/3⌉` or all features per split.
    pub fn default_grid() -> Vec<Hyperparameters> {
        let mut grid = Vec::new();
        for max_depth in [Some(4), Some(8), None] {
            for min_leaf in [2, 5, 10] {
                for max_features in [MaxFeatures::Third, MaxFeatures::All] {
                    grid.push(Hyperparameters {
                        n_trees: 100,
                        max_depth,
                        min_leaf,
                        max_features,
                        bootstrap: true,
                    });
                }
            }
        }
        grid
    }
}

/// Independent 64-bit seed for sub-task `counter` of a run seeded with
/// `master`: the first output of ChaCha8 stream `counter`.
pub fn derive_seed(master: u64, counter: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(counter);
    rng.next_u64()
}

/// Coefficient of determination after the best affine map of the
/// predictions, i.e. the squared Pearson correlation. Zero when either side
/// has no variance.
pub fn score_r2_linear(predicted: &[f64], observed: &[f64]) -> f64 {
    pearson(predicted, observed).map_or(0.0, |r| r * r)
}

/// Tracts dropped while computing median production.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedianTally {
    pub tracts_with_users: usize,
    pub retained: usize,
    pub too_few_users: Vec<String>,
    pub no_tract_record: Vec<String>,
}

/// Median per-user ping count of each home tract, for tracts with at least
/// `min_users` retained residents.
pub fn median_production(profiles: &[UserProfile], min_users: usize) -> (BTreeMap<String, f64>, Vec<String>) {
    let mut by_tract: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for p in profiles {
        if let Some(t) = &p.home_tract {
            by_tract.entry(t).or_default().push(p.ping_count as f64);
        }
    }
    let mut medians = BTreeMap::new();
    let mut dropped = Vec::new();
    for (tract, counts) in by_tract {
        match median(&counts) {
            Some(m) if counts.len() >= min_users => {
                medians.insert(tract.to_string(), m);
            }
            _ => dropped.push(tract.to_string()),
        }
    }
    (medians, dropped)
}

/// Joins median production with tract features into model samples, sorted
/// by GEOID.
pub fn build_samples(
    profiles: &[UserProfile],
    tracts: &[TractRecord],
    spec: &FeatureSpec,
    min_users: usize,
) -> Result<(Vec<TractSample>, MedianTally)> {
    let (medians, too_few) = median_production(profiles, min_users);
    let records: BTreeMap<&str, &TractRecord> = tracts.iter().map(|t| (t.tract_geoid.as_str(), t)).collect();
    let mut tally = MedianTally {
        tracts_with_users: medians.len() + too_few.len(),
        too_few_users: too_few,
        ..Default::default()
    };
    let mut samples = Vec::new();
    for (tract, target) in medians {
        let Some(record) = records.get(tract.as_str()) else {
            tally.no_tract_record.push(tract);
            continue;
        };
        samples.push(TractSample {
            features: spec.vector(record)?,
            city_id: record.city_id.clone(),
            tract_geoid: tract,
            target,
        });
    }
    tally.retained = samples.len();
    Ok((samples, tally))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(id: &str, count: u64, bg: &str) -> UserProfile {
        UserProfile::new(id, count, Some(bg))
    }

    #[test]
    fn median_rules_and_min_users() {
        let profiles = vec![
            user("a", 40, "360470001001"),
            user("b", 50, "360470001002"),
            user("c", 90, "360470001001"),
            user("d", 40, "360470002001"),
            user("e", 60, "360470002001"),
            user("f", 70, "360470003001"),
        ];
        let (m, dropped) = median_production(&profiles, 2);
        assert_eq!(m["36047000100"], 50.0);
        assert_eq!(m["36047000200"], 50.0);
        assert_eq!(dropped, vec!["36047000300".to_string()]);
    }

    #[test]
    fn median_resists_outlier() {
        let base = [40.0, 50.0, 90.0];
        let mut with = base.to_vec();
        with.push(99_999.0);
        let shift_median = median(&with).unwrap() - median(&base).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let shift_mean = mean(&with) - mean(&base);
        assert_eq!(median(&with), Some(70.0));
        assert!(shift_median <= 40.0 && shift_mean > 20_000.0);
    }

    #[test]
    fn r2_linear_basics() {
        let obs = [1.0, 4.0, 2.0, 8.0, 5.0];
        assert!((score_r2_linear(&obs, &obs) - 1.0).abs() < 1e-12);
        let affine: Vec<f64> = obs.iter().map(|v| 2.0 * v + 7.0).collect();
        assert!((score_r2_linear(&affine, &obs) - 1.0).abs() < 1e-12);
        assert_eq!(score_r2_linear(&[3.0; 5], &obs), 0.0);
    }

    #[test]
    fn r2_matches_ols_oracle() {
        // OLS of observed on predicted with intercept, then 1 − SSres/SStot.
        let pred = [2.1, 3.9, 5.2, 4.4, 8.8, 1.0, 6.3];
        let obs = [1.8, 4.2, 4.9, 5.1, 8.1, 1.7, 5.5];
        let n = pred.len() as f64;
        let (mx, my) = (pred.iter().sum::<f64>() / n, obs.iter().sum::<f64>() / n);
        let sxy: f64 = pred.iter().zip(&obs).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pred.iter().map(|x| (x - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = pred.iter().zip(&obs).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let ss_tot: f64 = obs.iter().map(|y| (y - my).powi(2)).sum();
        let oracle = 1.0 - ss_res / ss_tot;
        assert!((score_r2_linear(&pred, &obs) - oracle).abs() < 1e-9);
    }

    #[test]
    fn grid_and_features() {
        assert_eq!(Hyperparameters::default_grid().len(), 18);
        assert_eq!(MaxFeatures::Third.resolve(10), 4);
        assert_eq!(MaxFeatures::All.resolve(10), 10);
        assert_eq!(MaxFeatures::Count(50).resolve(10), 10);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1729, 0), derive_seed(1729, 1));
        assert_eq!(derive_seed(1729, 3), derive_seed(1729, 3));
    }
}
