//! City-to-city and leave-one-city-out generalization.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::cv::{nested_cv, CvConfig, CvReport};
use super::forest::ForestModel;
use super::{score_r2_linear, Hyperparameters, TractSample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitySamples {
    pub city: String,
    pub samples: Vec<TractSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityFit {
    pub city: String,
    pub report: CvReport,
    pub model: ForestModel,
}

/// Rows are training cities, columns are test cities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub cities: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn get(&self, train: &str, test: &str) -> Option<f64> {
        let i = self.cities.iter().position(|c| c == train)?;
        let j = self.cities.iter().position(|c| c == test)?;
        Some(self.scores[i][j])
    }

    /// CSV with a `train_city` column followed by one column per test city.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["train_city".to_string()];
        header.extend(self.cities.iter().cloned());
        w.write_record(&header)?;
        for (city, row) in self.cities.iter().zip(&self.scores) {
            let mut record = vec![city.clone()];
            record.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("score matrix", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOutScore {
    pub city: String,
    /// Mean outer-CV score of the model pooled over the other cities.
    pub train_r2: f64,
    /// Score of the pooled final model on every sample of `city`.
    pub test_r2: f64,
}

fn check_cities(cities: &[CitySamples]) -> Result<()> {
    for (i, c) in cities.iter().enumerate() {
        if cities[..i].iter().any(|o| o.city == c.city) {
            return Err(Error::Config(format!("city {} listed twice", c.city)));
        }
        if c.samples.is_empty() {
            return Err(Error::Data(format!("city {} has no model samples", c.city)));
        }
    }
    Ok(())
}

fn score_model(model: &ForestModel, samples: &[TractSample]) -> f64 {
    let predicted: Vec<f64> = samples.iter().map(|s| model.predict(&s.features)).collect();
    let observed: Vec<f64> = samples.iter().map(|s| s.target).collect();
    score_r2_linear(&predicted, &observed)
}

/// Nested CV per city. Every city uses the same `cfg`, so identical sample
/// sets give identical fits regardless of the city label.
pub fn fit_cities(cities: &[CitySamples], grid: &[Hyperparameters], cfg: &CvConfig) -> Result<Vec<CityFit>> {
    check_cities(cities)?;
    cities
        .iter()
        .map(|c| {
            let (report, model) = nested_cv(&c.samples, grid, cfg)?;
            Ok(CityFit {
                city: c.city.clone(),
                report,
                model,
            })
        })
        .collect()
}

/// Diagonal cells are the city's mean outer-CV score; cell `(a, b)` scores
/// the final model of `a` on all samples of `b`. Not symmetric in general.
pub fn city_matrix(cities: &[CitySamples], fits: &[CityFit]) -> Result<ScoreMatrix> {
    check_cities(cities)?;
    if fits.len() != cities.len() || fits.iter().zip(cities).any(|(f, c)| f.city != c.city) {
        return Err(Error::Config("city fits do not line up with city samples".into()));
    }
    let scores = fits
        .iter()
        .enumerate()
        .map(|(i, fit)| {
            cities
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    if i == j {
                        fit.report.mean_r2
                    } else {
                        score_model(&fit.model, &c.samples)
                    }
                })
                .collect()
        })
        .collect();
    Ok(ScoreMatrix {
        cities: cities.iter().map(|c| c.city.clone()).collect(),
        scores,
    })
}

/// For each city, pools the others (folds stratified by city), runs nested
/// CV on the pool and scores the pooled final model on the left-out city.
pub fn leave_one_out(cities: &[CitySamples], grid: &[Hyperparameters], cfg: &CvConfig) -> Result<Vec<LeaveOneOutScore>> {
    check_cities(cities)?;
    if cities.len() < 2 {
        return Err(Error::Data("leave-one-out needs at least two cities".into()));
    }
    cities
        .iter()
        .enumerate()
        .map(|(k, target)| {
            let pool: Vec<TractSample> = cities
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != k)
                .flat_map(|(_, c)| c.samples.iter().cloned())
                .collect();
            let (report, model) = nested_cv(&pool, grid, cfg)?;
            Ok(LeaveOneOutScore {
                city: target.city.clone(),
                train_r2: report.mean_r2,
                test_r2: score_model(&model, &target.samples),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MaxFeatures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn city(name: &str, slope: f64, seed: u64) -> CitySamples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..60)
            .map(|i| {
                let x: Vec<f64> = (0..2).map(|_| rng.gen::<f64>()).collect();
                TractSample {
                    tract_geoid: format!("{seed:05}{i:06}"),
                    city_id: name.into(),
                    target: 100.0 + slope * x[0] + rng.gen_range(-1.0..1.0),
                    features: x,
                }
            })
            .collect();
        CitySamples {
            city: name.into(),
            samples,
        }
    }

    fn grid() -> Vec<Hyperparameters> {
        vec![Hyperparameters {
            n_trees: 20,
            max_depth: Some(6),
            min_leaf: 2,
            max_features: MaxFeatures::All,
            bootstrap: true,
        }]
    }

    #[test]
    fn matrix_shape_and_diagonal() {
        let cities = vec![city("a", 40.0, 1), city("b", -40.0, 2), city("c", 40.0, 3)];
        let fits = fit_cities(&cities, &grid(), &CvConfig::default()).unwrap();
        let m = city_matrix(&cities, &fits).unwrap();
        assert_eq!(m.scores.len(), 3);
        assert!(m.scores.iter().all(|r| r.len() == 3));
        for (i, f) in fits.iter().enumerate() {
            assert_eq!(m.scores[i][i], f.report.mean_r2);
        }
        assert_eq!(m.get("a", "c"), Some(score_model(&fits[0].model, &cities[2].samples)));
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("train_city,a,b,c\n"));
    }

    #[test]
    fn one_entry_per_city() {
        let cities = vec![city("a", 40.0, 1), city("b", 40.0, 2), city("c", 40.0, 3)];
        let loo = leave_one_out(&cities, &grid(), &CvConfig::default()).unwrap();
        assert_eq!(loo.iter().map(|l| l.city.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!(loo.iter().all(|l| l.test_r2 > 0.8));
    }

    #[test]
    fn duplicate_city_names_rejected() {
        let cities = vec![city("a", 1.0, 1), city("a", 1.0, 2)];
        assert!(matches!(fit_cities(&cities, &grid(), &CvConfig::default()), Err(Error::Config(_))));
    }
}
