use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, RegressionTree};
use super::{derive_seed, Hyperparameters, TrainingSet};
use crate::{Error, Result};

/// Bagged ensemble of regression trees; predicts the mean of its trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
}

impl ForestModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_all<'a, I>(&self, rows: I) -> Vec<f64>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        rows.into_iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Fits `n_trees` trees in parallel. Tree `i` uses seed
/// `derive_seed(seed, i)` both for its bootstrap draw and for its feature
/// subsets, so the model is identical for any thread schedule.
pub fn fit_forest(data: &TrainingSet<'_>, hp: &Hyperparameters, seed: u64) -> Result<ForestModel> {
    if hp.n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("cannot fit a forest on an empty sample set".into()));
    }
    let n = data.len();
    let trees = (0..hp.n_trees)
        .into_par_iter()
        .map(|i| {
            let tree_seed = derive_seed(seed, i as u64);
            let indices = if hp.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(tree_seed ^ 0x9e37_79b9_7f4a_7c15);
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(data, indices, hp, tree_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        hyperparameters: *hp,
        seed,
        n_features: data.n_features(),
        trees,
    })
}
