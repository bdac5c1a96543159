//! Exact path-dependent TreeSHAP for the forest, percent rescaling against
//! the city median tract, and feature-importance ranking.
//!
//! Conditional expectations follow the training cover of each branch, so no
//! background sample is needed: attributions are a function of the model
//! artifact and the feature vector only.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{ForestModel, RegressionTree, TractSample};
use crate::stats::median;
use crate::{Error, Result};

/// Additive explanation of one prediction: `base + Σ phi = prediction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base: f64,
    pub phi: Vec<f64>,
}

impl Attribution {
    pub fn prediction(&self) -> f64 {
        self.base + self.phi.iter().sum::<f64>()
    }
}

/// Cover-weighted mean of the leaf values.
pub fn expected_value(tree: &RegressionTree) -> f64 {
    fn walk(t: &RegressionTree, node: usize) -> f64 {
        let n = &t.nodes[node];
        match &n.split {
            None => n.value,
            Some(s) => {
                let (l, r) = (&t.nodes[s.left], &t.nodes[s.right]);
                (l.cover * walk(t, s.left) + r.cover * walk(t, s.right)) / n.cover
            }
        }
    }
    walk(tree, 0)
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: usize,
    zero: f64,
    one: f64,
    weight: f64,
}

const NO_FEATURE: usize = usize::MAX;

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: usize) {
    let l = path.len();
    path.push(PathElem {
        feature,
        zero,
        one,
        weight: if l == 0 { 1.0 } else { 0.0 },
    });
    let denom = (l + 1) as f64;
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / denom;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / denom;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let denom = (l + 1) as f64;
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let saved = path[j].weight;
            path[j].weight = next * denom / ((j + 1) as f64 * one);
            next = saved - path[j].weight * zero * (l - j) as f64 / denom;
        } else {
            path[j].weight = path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

/// Total permutation weight of the path with element `i` removed.
fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let denom = (l + 1) as f64;
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let w = next * denom / ((j + 1) as f64 * one);
            total += w;
            next = path[j].weight - w * zero * (l - j) as f64 / denom;
        } else {
            total += path[j].weight * denom / (zero * (l - j) as f64);
        }
    }
    total
}

struct Explainer<'t> {
    tree: &'t RegressionTree,
    x: &'t [f64],
    phi: Vec<f64>,
}

impl Explainer<'_> {
    fn recurse(&mut self, node: usize, mut path: Vec<PathElem>, zero: f64, one: f64, feature: usize) {
        extend(&mut path, zero, one, feature);
        let n = &self.tree.nodes[node];
        let Some(s) = &n.split else {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                self.phi[path[i].feature] += w * (path[i].one - path[i].zero) * n.value;
            }
            return;
        };
        let (hot, cold) = if self.x[s.feature] <= s.threshold {
            (s.left, s.right)
        } else {
            (s.right, s.left)
        };
        let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
        if let Some(k) = (1..path.len()).find(|&k| path[k].feature == s.feature) {
            incoming_zero = path[k].zero;
            incoming_one = path[k].one;
            unwind(&mut path, k);
        }
        let cover = n.cover;
        let (hot_cover, cold_cover) = (self.tree.nodes[hot].cover, self.tree.nodes[cold].cover);
        self.recurse(hot, path.clone(), incoming_zero * hot_cover / cover, incoming_one, s.feature);
        self.recurse(cold, path, incoming_zero * cold_cover / cover, 0.0, s.feature);
    }
}

fn check_tree(tree: &RegressionTree) -> Result<()> {
    if tree.nodes.iter().any(|n| !(n.cover > 0.0)) {
        return Err(Error::Data("tree has a node without positive cover".into()));
    }
    Ok(())
}

/// Shapley values of one tree at `x`.
pub fn tree_shap_single(tree: &RegressionTree, x: &[f64]) -> Result<Attribution> {
    if x.len() != tree.n_features {
        return Err(Error::Data(format!(
            "feature vector has {} values, tree expects {}",
            x.len(),
            tree.n_features
        )));
    }
    check_tree(tree)?;
    let mut ex = Explainer {
        tree,
        x,
        phi: vec![0.0; x.len()],
    };
    ex.recurse(0, Vec::with_capacity(tree.depth() + 2), 1.0, 1.0, NO_FEATURE);
    Ok(Attribution {
        base: expected_value(tree),
        phi: ex.phi,
    })
}

/// Forest attribution: mean of the per-tree attributions.
pub fn tree_shap(model: &ForestModel, x: &[f64]) -> Result<Attribution> {
    if x.len() != model.n_features {
        return Err(Error::Data(format!(
            "feature vector has {} values, model expects {}",
            x.len(),
            model.n_features
        )));
    }
    let mut total = Attribution {
        base: 0.0,
        phi: vec![0.0; x.len()],
    };
    for tree in &model.trees {
        let a = tree_shap_single(tree, x)?;
        total.base += a.base;
        for (t, p) in total.phi.iter_mut().zip(&a.phi) {
            *t += p;
        }
    }
    let k = model.trees.len() as f64;
    total.base /= k;
    total.phi.iter_mut().for_each(|p| *p /= k);
    Ok(total)
}

/// `100 · φ / city_median`.
pub fn rescale_percent(phi: &[f64], city_median: f64) -> Vec<f64> {
    phi.iter().map(|p| 100.0 * p / city_median).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean |φ| over the explained samples.
    pub importance: f64,
}

/// Features by descending mean |φ|; equal importances are ordered by name.
pub fn feature_importance(names: &[String], attributions: &[Attribution]) -> Vec<FeatureImportance> {
    let n = attributions.len().max(1) as f64;
    let mut ranked: Vec<FeatureImportance> = names
        .iter()
        .enumerate()
        .map(|(f, name)| FeatureImportance {
            feature: name.clone(),
            importance: attributions.iter().map(|a| a.phi[f].abs()).sum::<f64>() / n,
        })
        .collect();
    ranked.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.feature.cmp(&b.feature)));
    ranked
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAttribution {
    pub tract_geoid: String,
    pub prediction: f64,
    pub phi: Vec<f64>,
    pub percent: Vec<f64>,
}

/// Attributions for every tract of a city.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityAttribution {
    pub city: String,
    pub features: Vec<String>,
    /// Median observed tract target; the denominator of every percent.
    pub median_target: f64,
    pub base: f64,
    pub importance: Vec<FeatureImportance>,
    pub samples: Vec<SampleAttribution>,
}

/// Explains `model` on every sample, in parallel, keeping sample order.
pub fn attribute_city(city: &str, model: &ForestModel, samples: &[TractSample], names: &[String]) -> Result<CityAttribution> {
    if names.len() != model.n_features {
        return Err(Error::Config(format!(
            "{} feature names for a model with {} features",
            names.len(),
            model.n_features
        )));
    }
    let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
    let median_target = median(&targets).ok_or_else(|| Error::Data(format!("city {city} has no samples")))?;
    if median_target <= 0.0 {
        return Err(Error::Data(format!("city {city} has non-positive median target")));
    }
    let attributions = samples
        .par_iter()
        .map(|s| tree_shap(model, &s.features))
        .collect::<Result<Vec<_>>>()?;
    let base = attributions.first().map_or(0.0, |a| a.base);
    let importance = feature_importance(names, &attributions);
    let samples = samples
        .iter()
        .zip(attributions)
        .map(|(s, a)| SampleAttribution {
            tract_geoid: s.tract_geoid.clone(),
            prediction: a.prediction(),
            percent: rescale_percent(&a.phi, median_target),
            phi: a.phi,
        })
        .collect();
    Ok(CityAttribution {
        city: city.to_string(),
        features: names.to_vec(),
        median_target,
        base,
        importance,
        samples,
    })
}

/// Long-format CSV: `tract_geoid,feature,phi,percent`.
pub fn write_attribution_csv<W: Write>(sink: W, attr: &CityAttribution) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["tract_geoid", "feature", "phi", "percent"])?;
    for s in &attr.samples {
        for (f, name) in attr.features.iter().enumerate() {
            w.write_record([
                s.tract_geoid.as_str(),
                name.as_str(),
                &format!("{:.9}", s.phi[f]),
                &format!("{:.6}", s.percent[f]),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("attribution csv", e))?;
    Ok(())
}

/// Beeswarm-style plot: one row per feature in importance order, one dot
/// per tract at its percent effect, coloured from low (blue) to high (red)
/// feature value.
pub fn beeswarm_svg(attr: &CityAttribution, samples: &[TractSample]) -> String {
    const ROW: f64 = 34.0;
    const LEFT: f64 = 130.0;
    const WIDTH: f64 = 460.0;
    let rows = attr.importance.len();
    let height = ROW * rows as f64 + 50.0;
    let span = attr
        .samples
        .iter()
        .flat_map(|s| s.percent.iter().map(|p| p.abs()))
        .fold(1.0f64, f64::max);
    let to_x = |p: f64| LEFT + WIDTH / 2.0 + p / span * WIDTH / 2.0;
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" font-family="sans-serif" font-size="11">"#,
        w = LEFT + WIDTH + 20.0
    );
    let _ = write!(
        svg,
        r##"<line x1="{x:.2}" y1="10" x2="{x:.2}" y2="{y:.2}" stroke="#888"/>"##,
        x = to_x(0.0),
        y = height - 30.0
    );
    for (r, imp) in attr.importance.iter().enumerate() {
        let Some(f) = attr.features.iter().position(|n| *n == imp.feature) else { continue };
        let cy = 20.0 + ROW * r as f64;
        let _ = write!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, cy + 4.0, imp.feature);
        let values: Vec<f64> = samples.iter().map(|s| s.features[f]).collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (i, (s, v)) in attr.samples.iter().zip(&values).enumerate() {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            let (red, blue) = ((30.0 + 225.0 * t) as u8, (229.0 - 142.0 * t) as u8);
            // deterministic vertical jitter from the golden-ratio sequence
            let jitter = ((i as f64 * 0.618_033_988_75).fract() - 0.5) * ROW * 0.6;
            let _ = write!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="2" fill="#{red:02x}40{blue:02x}" fill-opacity="0.7"/>"##,
                to_x(s.percent[f]),
                cy + jitter
            );
        }
    }
    let _ = write!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">effect relative to median tract (%)</text></svg>"#,
        LEFT + WIDTH / 2.0,
        height - 10.0
    );
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyperparameters, Split, TreeNode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// v(S): expectation over the branches of features outside `subset`,
    /// weighted by training cover.
    fn conditional_value(tree: &RegressionTree, node: usize, x: &[f64], subset: u32) -> f64 {
        let n = &tree.nodes[node];
        match &n.split {
            None => n.value,
            Some(s) if subset & (1 << s.feature) != 0 => {
                let next = if x[s.feature] <= s.threshold { s.left } else { s.right };
                conditional_value(tree, next, x, subset)
            }
            Some(s) => {
                let (l, r) = (&tree.nodes[s.left], &tree.nodes[s.right]);
                (l.cover * conditional_value(tree, s.left, x, subset) + r.cover * conditional_value(tree, s.right, x, subset))
                    / n.cover
            }
        }
    }

    fn brute_force_shapley(tree: &RegressionTree, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let fact: Vec<f64> = (0..=d).scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        }).collect();
        let values: Vec<f64> = (0..1u32 << d).map(|s| conditional_value(tree, 0, x, s)).collect();
        (0..d)
            .map(|i| {
                let mut phi = 0.0;
                for s in 0..1u32 << d {
                    if s & (1 << i) != 0 {
                        continue;
                    }
                    let k = s.count_ones() as usize;
                    let w = fact[k] * fact[d - k - 1] / fact[d];
                    phi += w * (values[(s | (1 << i)) as usize] - values[s as usize]);
                }
                phi
            })
            .collect()
    }

    fn random_tree(rng: &mut ChaCha8Rng, d: usize, max_depth: usize) -> RegressionTree {
        fn build(rng: &mut ChaCha8Rng, nodes: &mut Vec<TreeNode>, d: usize, depth: usize) -> usize {
            let id = nodes.len();
            nodes.push(TreeNode { value: 0.0, cover: 0.0, split: None });
            if depth == 0 || rng.gen_bool(0.2) {
                nodes[id].value = rng.gen_range(-10.0..10.0);
                nodes[id].cover = rng.gen_range(1..30) as f64;
                return id;
            }
            let feature = rng.gen_range(0..d);
            let threshold = rng.gen::<f64>();
            let left = build(rng, nodes, d, depth - 1);
            let right = build(rng, nodes, d, depth - 1);
            let (lc, rc) = (nodes[left].cover, nodes[right].cover);
            nodes[id].cover = lc + rc;
            nodes[id].value = (lc * nodes[left].value + rc * nodes[right].value) / (lc + rc);
            nodes[id].split = Some(Split { feature, threshold, left, right });
            id
        }
        let mut nodes = Vec::new();
        build(rng, &mut nodes, d, max_depth);
        RegressionTree { n_features: d, nodes }
    }

    #[test]
    fn single_leaf() {
        let t = RegressionTree::leaf(3, 7.5, 10.0);
        let a = tree_shap_single(&t, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(a.base, 7.5);
        assert_eq!(a.phi, vec![0.0; 3]);
    }

    #[test]
    fn stump_closed_form() {
        let (a, b, p) = (4.0, 10.0, 0.3);
        let tree = RegressionTree {
            n_features: 3,
            nodes: vec![
                TreeNode { value: p * a + (1.0 - p) * b, cover: 10.0, split: Some(Split { feature: 1, threshold: 0.5, left: 1, right: 2 }) },
                TreeNode { value: a, cover: 3.0, split: None },
                TreeNode { value: b, cover: 7.0, split: None },
            ],
        };
        let att = tree_shap_single(&tree, &[0.9, 0.2, 0.9]).unwrap();
        assert!((att.phi[1] - (a - (p * a + (1.0 - p) * b))).abs() < 1e-12);
        assert_eq!(att.phi[0], 0.0);
        assert_eq!(att.phi[2], 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let d = rng.gen_range(1..=12);
            let tree = random_tree(&mut rng, d, 3);
            let x: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let fast = tree_shap_single(&tree, &x).unwrap();
            let slow = brute_force_shapley(&tree, &x);
            for (f, s) in fast.phi.iter().zip(&slow) {
                assert!((f - s).abs() <= 1e-6, "fast {f} oracle {s}");
            }
            assert!((fast.prediction() - tree.predict(&x)).abs() <= 1e-9);
        }
    }

    #[test]
    fn repeated_feature_on_path() {
        // Deep trees split the same feature repeatedly; exercise the unwind path.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let tree = random_tree(&mut rng, 2, 6);
            let x: Vec<f64> = (0..2).map(|_| rng.gen()).collect();
            let fast = tree_shap_single(&tree, &x).unwrap();
            let slow = brute_force_shapley(&tree, &x);
            for (f, s) in fast.phi.iter().zip(&slow) {
                assert!((f - s).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn oracle_symmetry_for_duplicated_features() {
        // f(x) depends on x0 and x1 symmetrically; equal inputs get equal credit.
        let leaf = |value, cover| TreeNode { value, cover, split: None };
        let tree = RegressionTree {
            n_features: 2,
            nodes: vec![
                TreeNode { value: 0.0, cover: 4.0, split: Some(Split { feature: 0, threshold: 0.5, left: 1, right: 2 }) },
                TreeNode { value: 0.0, cover: 2.0, split: Some(Split { feature: 1, threshold: 0.5, left: 3, right: 4 }) },
                TreeNode { value: 0.0, cover: 2.0, split: Some(Split { feature: 1, threshold: 0.5, left: 5, right: 6 }) },
                leaf(0.0, 1.0),
                leaf(1.0, 1.0),
                leaf(1.0, 1.0),
                leaf(2.0, 1.0),
            ],
        };
        let phi = brute_force_shapley(&tree, &[0.9, 0.9]);
        assert!((phi[0] - phi[1]).abs() <= 1e-9);
    }

    fn fitted_forest() -> (ForestModel, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..150).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| 50.0 + 20.0 * r[0] - 10.0 * r[2] + rng.gen_range(-1.0..1.0)).collect();
        let data = crate::model::TrainingSet::new(&rows, y);
        let hp = Hyperparameters { n_trees: 25, max_depth: Some(8), min_leaf: 2, ..Default::default() };
        (crate::model::fit_forest(&data, &hp, 5).unwrap(), rows)
    }

    #[test]
    fn forest_local_accuracy_and_linearity() {
        let (model, rows) = fitted_forest();
        for x in rows.iter().take(40) {
            let a = tree_shap(&model, x).unwrap();
            assert!((a.prediction() - model.predict(x)).abs() <= 1e-6);
            let mean0: f64 = model.trees.iter().map(|t| tree_shap_single(t, x).unwrap().phi[0]).sum::<f64>() / model.trees.len() as f64;
            assert!((a.phi[0] - mean0).abs() <= 1e-12);
        }
    }

    #[test]
    fn unused_feature_is_null_player() {
        let (model, rows) = fitted_forest();
        let used: std::collections::BTreeSet<usize> = model.trees.iter().flat_map(|t| t.used_features()).collect();
        for f in (0..4).filter(|f| !used.contains(f)) {
            for x in &rows {
                assert_eq!(tree_shap(&model, x).unwrap().phi[f], 0.0);
            }
        }
    }

    #[test]
    fn length_mismatch() {
        let (model, _) = fitted_forest();
        assert!(matches!(tree_shap(&model, &[0.1]), Err(Error::Data(_))));
    }

    #[test]
    fn percent_rescaling() {
        assert_eq!(rescale_percent(&[0.0, 80.0, -8.0], 80.0), vec![0.0, 100.0, -10.0]);
    }

    #[test]
    fn importance_ranking() {
        let names: Vec<String> = ["b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let atts = vec![
            Attribution { base: 0.0, phi: vec![1.0, -3.0, 0.0] },
            Attribution { base: 0.0, phi: vec![-1.0, 1.0, 0.0] },
        ];
        let ranked = feature_importance(&names, &atts);
        assert_eq!(ranked.iter().map(|r| r.feature.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert_eq!(ranked[2].importance, 0.0);
        let mut reversed = atts.clone();
        reversed.reverse();
        assert_eq!(feature_importance(&names, &reversed), ranked);
        // equal importance: ordered by name
        let tied = feature_importance(&names, &[Attribution { base: 0.0, phi: vec![1.0, 1.0, 1.0] }]);
        assert_eq!(tied.iter().map(|r| r.feature.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
    }

    #[test]
    fn city_outputs() {
        let (model, rows) = fitted_forest();
        let samples: Vec<TractSample> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| TractSample {
                tract_geoid: format!("{i:011}"),
                city_id: "c".into(),
                features: r.clone(),
                target: model.predict(r),
            })
            .collect();
        let names: Vec<String> = (0..4).map(|i| format!("f{i}")).collect();
        let attr = attribute_city("c", &model, &samples, &names).unwrap();
        assert_eq!(attr.importance[0].feature, "f0");
        let mut buf = Vec::new();
        write_attribution_csv(&mut buf, &attr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * samples.len());
        assert!(text.starts_with("tract_geoid,feature,phi,percent\n"));
        let svg = beeswarm_svg(&attr, &samples);
        assert_eq!(svg.matches("<circle").count(), 4 * samples.len());
    }
}
