//! Nested K-fold cross-validation.
//!
//! The outer folds estimate generalization; inside each outer-train split an
//! inner K-fold grid search picks the hyperparameters. Every index set handed
//! to a fit or score call is recorded in [`FoldTrace`] so that fold hygiene
//! can be checked after the fact.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{fit_forest, ForestModel};
use super::{derive_seed, score_r2_linear, Hyperparameters, TrainingSet, TractSample};
use crate::stats::{mean, std_dev};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k_outer: usize,
    pub k_inner: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k_outer: 10,
            k_inner: 3,
            seed: 1729,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sample indices used by one outer fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldTrace {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub inner: Vec<InnerSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub outer_scores: Vec<f64>,
    pub chosen: Vec<Hyperparameters>,
    pub mean_r2: f64,
    pub std_r2: f64,
    pub final_hyperparameters: Hyperparameters,
    #[serde(skip)]
    pub trace: Vec<FoldTrace>,
}

/// Splits `items` (given by their stratum label) into `k` folds of
/// positions. Each stratum is shuffled with the seeded RNG and dealt
/// round-robin with a counter that carries across strata, so every fold
/// gets a near-equal share of every stratum.
pub fn stratified_folds(strata: &[&str], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut by_stratum: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        by_stratum.entry(s).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut counter = 0;
    for (_, mut members) in by_stratum {
        members.shuffle(&mut rng);
        for m in members {
            folds[counter % k].push(m);
            counter += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

fn complement(n: usize, excluded: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in excluded {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

const OUTER_PLAN: u64 = 0;
const INNER_PLAN: u64 = 1 << 32;
const INNER_FIT: u64 = 2 << 32;
const OUTER_FIT: u64 = 3 << 32;
const FINAL_FIT: u64 = 4 << 32;

fn fit_on(samples: &[TractSample], idx: &[usize], hp: &Hyperparameters, seed: u64) -> Result<ForestModel> {
    fit_forest(&TrainingSet::from_samples(idx.iter().map(|&i| &samples[i])), hp, seed)
}

fn score_on(model: &ForestModel, samples: &[TractSample], idx: &[usize]) -> f64 {
    let predicted: Vec<f64> = idx.iter().map(|&i| model.predict(&samples[i].features)).collect();
    let observed: Vec<f64> = idx.iter().map(|&i| samples[i].target).collect();
    score_r2_linear(&predicted, &observed)
}

/// Runs nested cross-validation and fits the final model on all samples
/// with the modal chosen hyperparameters (ties go to the simplest).
///
/// Folds are stratified by `city_id`. Inner model selection maximises the
/// mean inner R²; ties go to the simplest configuration.
pub fn nested_cv(samples: &[TractSample], grid: &[Hyperparameters], cfg: &CvConfig) -> Result<(CvReport, ForestModel)> {
    if grid.is_empty() {
        return Err(Error::Config("hyperparameter grid is empty".into()));
    }
    if cfg.k_outer < 2 || cfg.k_inner < 2 {
        return Err(Error::Config("cross-validation needs at least two folds".into()));
    }
    let n = samples.len();
    let min_needed = cfg.k_outer.max(cfg.k_inner * cfg.k_outer / (cfg.k_outer - 1) + 1);
    if n < min_needed {
        return Err(Error::Data(format!(
            "{n} samples are too few for {}x{} nested cross-validation",
            cfg.k_outer, cfg.k_inner
        )));
    }
    let d = samples[0].features.len();
    let mut grid = grid.to_vec();
    grid.sort_by_key(|hp| hp.complexity(d));

    let strata: Vec<&str> = samples.iter().map(|s| s.city_id.as_str()).collect();
    let outer = stratified_folds(&strata, cfg.k_outer, derive_seed(cfg.seed, OUTER_PLAN));

    let traces: Vec<FoldTrace> = outer
        .iter()
        .enumerate()
        .map(|(o, test)| {
            let train = complement(n, test);
            let train_strata: Vec<&str> = train.iter().map(|&i| strata[i]).collect();
            let inner = stratified_folds(&train_strata, cfg.k_inner, derive_seed(cfg.seed, INNER_PLAN + o as u64))
                .into_iter()
                .map(|positions| {
                    let inner_test: Vec<usize> = positions.iter().map(|&p| train[p]).collect();
                    let keep = complement(train.len(), &positions);
                    InnerSplit {
                        train: keep.iter().map(|&p| train[p]).collect(),
                        test: inner_test,
                    }
                })
                .collect();
            FoldTrace {
                train,
                test: test.clone(),
                inner,
            }
        })
        .collect();

    let results = traces
        .par_iter()
        .enumerate()
        .map(|(o, trace)| -> Result<(Hyperparameters, f64)> {
            let inner_means = grid
                .par_iter()
                .enumerate()
                .map(|(g, hp)| -> Result<f64> {
                    let mut scores = Vec::with_capacity(trace.inner.len());
                    for (i, split) in trace.inner.iter().enumerate() {
                        let task = ((o * grid.len() + g) * trace.inner.len() + i) as u64;
                        let model = fit_on(samples, &split.train, hp, derive_seed(cfg.seed, INNER_FIT + task))?;
                        scores.push(score_on(&model, samples, &split.test));
                    }
                    Ok(mean(&scores))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut best = 0;
            for (g, &m) in inner_means.iter().enumerate() {
                if m > inner_means[best] {
                    best = g;
                }
            }
            let hp = grid[best];
            let model = fit_on(samples, &trace.train, &hp, derive_seed(cfg.seed, OUTER_FIT + o as u64))?;
            Ok((hp, score_on(&model, samples, &trace.test)))
        })
        .collect::<Result<Vec<_>>>()?;

    let chosen: Vec<Hyperparameters> = results.iter().map(|r| r.0).collect();
    let outer_scores: Vec<f64> = results.iter().map(|r| r.1).collect();
    let final_hp = *grid
        .iter()
        .max_by_key(|hp| {
            let votes = chosen.iter().filter(|c| c == hp).count();
            // earlier grid entries are simpler; prefer them on equal votes
            let simplicity = std::cmp::Reverse(grid.iter().position(|g| g == *hp));
            (votes, simplicity)
        })
        .expect("grid is non-empty");
    let all: Vec<usize> = (0..n).collect();
    let final_model = fit_on(samples, &all, &final_hp, derive_seed(cfg.seed, FINAL_FIT))?;

    Ok((
        CvReport {
            mean_r2: mean(&outer_scores),
            std_r2: std_dev(&outer_scores),
            outer_scores,
            chosen,
            final_hyperparameters: final_hp,
            trace: traces,
        },
        final_model,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaxFeatures;
    use rand::Rng;

    #[test]
    fn folds_partition_and_balance() {
        let strata: Vec<&str> = (0..103).map(|i| if i % 3 == 0 { "a" } else { "b" }).collect();
        let folds = stratified_folds(&strata, 10, 5);
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &folds {
            let a = f.iter().filter(|&&i| strata[i] == "a").count();
            assert!((3..=4).contains(&a), "fold has {a} stratum-a members");
        }
    }

    fn linear_samples(n: usize, seed: u64) -> Vec<TractSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
                TractSample {
                    tract_geoid: format!("{i:011}"),
                    city_id: "c".into(),
                    target: 100.0 + 50.0 * x[0] - 20.0 * x[1],
                    features: x,
                }
            })
            .collect()
    }

    fn small_grid() -> Vec<Hyperparameters> {
        vec![
            Hyperparameters { n_trees: 20, max_depth: Some(4), min_leaf: 2, max_features: MaxFeatures::All, bootstrap: true },
            Hyperparameters { n_trees: 20, max_depth: None, min_leaf: 2, max_features: MaxFeatures::All, bootstrap: true },
        ]
    }

    #[test]
    fn empty_grid_is_config_error() {
        assert!(matches!(
            nested_cv(&linear_samples(50, 1), &[], &CvConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            nested_cv(&linear_samples(8, 1), &small_grid(), &CvConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn noiseless_linear_signal() {
        let samples = linear_samples(200, 2);
        let (report, _) = nested_cv(&samples, &small_grid(), &CvConfig::default()).unwrap();
        assert_eq!(report.outer_scores.len(), 10);
        assert!(report.mean_r2 >= 0.95, "mean outer R² {}", report.mean_r2);
    }

    #[test]
    fn duplicated_sample_never_straddles_a_split() {
        // Folds partition indices, so a duplicated row (a new index) can sit
        // on either side, but the same index never appears on both.
        let mut samples = linear_samples(60, 3);
        samples.push(samples[0].clone());
        let (report, _) = nested_cv(&samples, &small_grid()[..1], &CvConfig::default()).unwrap();
        for fold in &report.trace {
            assert!(fold.train.iter().all(|i| !fold.test.contains(i)));
            for inner in &fold.inner {
                assert!(inner.train.iter().all(|i| !inner.test.contains(i)));
                assert!(inner.train.iter().chain(&inner.test).all(|i| !fold.test.contains(i)));
            }
        }
    }

    #[test]
    fn deterministic() {
        let samples = linear_samples(60, 4);
        let a = nested_cv(&samples, &small_grid(), &CvConfig::default()).unwrap();
        let b = nested_cv(&samples, &small_grid(), &CvConfig::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn permuted_targets_score_near_zero() {
        let mut samples = linear_samples(200, 6);
        let mut targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
        targets.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
        for (s, t) in samples.iter_mut().zip(targets) {
            s.target = t;
        }
        let (report, _) = nested_cv(&samples, &small_grid(), &CvConfig::default()).unwrap();
        assert!(report.mean_r2.abs() <= 0.1, "mean outer R² {}", report.mean_r2);
    }
}
