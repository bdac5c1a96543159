use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

use super::stays::Trip;
use crate::stats::pearson;
use crate::{Error, Result};

/// Weighted directed trip network of one user group.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MobilityNetwork {
    /// `"q01"`..`"q20"` or `"all"`.
    pub group: String,
    /// Node label → number of distinct users visiting it.
    pub nodes: BTreeMap<Arc<str>, u64>,
    /// `(origin, destination)` → trip count.
    pub edges: BTreeMap<(Arc<str>, Arc<str>), u64>,
}

impl MobilityNetwork {
    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Unweighted in+out edge count per node. A self-loop counts twice.
    pub fn degrees(&self) -> BTreeMap<&str, u64> {
        let mut deg: BTreeMap<&str, u64> = self.nodes.keys().map(|n| (&**n, 0)).collect();
        for (o, d) in self.edges.keys() {
            *deg.entry(o).or_default() += 1;
            *deg.entry(d).or_default() += 1;
        }
        deg
    }

    fn merge(mut self, other: Self) -> Self {
        for (k, v) in other.nodes {
            *self.nodes.entry(k).or_default() += v;
        }
        for (k, v) in other.edges {
            *self.edges.entry(k).or_default() += v;
        }
        self
    }

    /// Writes the edge list as `origin,destination,weight`.
    pub fn write_edges<W: Write>(&self, sink: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["origin", "destination", "weight"])?;
        for ((o, d), w) in &self.edges {
            writer.write_record([&**o, &**d, &w.to_string()])?;
        }
        writer.flush().map_err(|e| Error::io("<edge sink>", e))
    }
}

/// Label of production group `index` (zero-based): `q01` is the top group.
pub fn group_label(index: usize) -> String {
    format!("q{:02}", index + 1)
}

/// Aggregates per-user trip lists into one network.
///
/// Edge weight is the number of trips per ordered pair; node weight is the
/// number of distinct users with a trip starting or ending at the node.
/// Aggregation runs in parallel and merges by addition, so the result does
/// not depend on scheduling.
pub fn build_network<'a, I>(group: &str, users: I, keep_self_loops: bool) -> MobilityNetwork
where
    I: IntoParallelIterator<Item = &'a [Trip]>,
{
    let mut net = users
        .into_par_iter()
        .map(|trips| {
            let mut net = MobilityNetwork::default();
            let mut visited = BTreeSet::new();
            for t in trips {
                if !keep_self_loops && t.origin == t.destination {
                    continue;
                }
                *net.edges
                    .entry((t.origin.clone(), t.destination.clone()))
                    .or_default() += 1;
                visited.insert(t.origin.clone());
                visited.insert(t.destination.clone());
            }
            net.nodes = visited.into_iter().map(|n| (n, 1)).collect();
            net
        })
        .reduce(MobilityNetwork::default, MobilityNetwork::merge);
    net.group = group.to_string();
    net
}

/// Drops edges lighter than `min_weight`. Nodes are kept unless
/// `prune_nodes` is set, so degree comparisons still see them as degree 0.
pub fn filter_min_weight(net: &MobilityNetwork, min_weight: u64, prune_nodes: bool) -> MobilityNetwork {
    let edges: BTreeMap<_, _> = net
        .edges
        .iter()
        .filter(|(_, &w)| w >= min_weight)
        .map(|(k, &w)| (k.clone(), w))
        .collect();
    let nodes = if prune_nodes {
        let used: BTreeSet<&Arc<str>> = edges.keys().flat_map(|(o, d)| [o, d]).collect();
        net.nodes
            .iter()
            .filter(|(n, _)| used.contains(n))
            .map(|(n, &w)| (n.clone(), w))
            .collect()
    } else {
        net.nodes.clone()
    };
    MobilityNetwork {
        group: net.group.clone(),
        nodes,
        edges,
    }
}

/// Noise-corrected backbone under a binomial null model.
///
/// With `k_out` the origin's out-strength, `k_in` the destination's
/// in-strength and `W` the total weight, an edge is kept when
/// `w > E + delta·√V` where `E = k_out·k_in / W` and
/// `V = E·(1 − k_out·k_in / W²)`. The node set is unchanged.
pub fn nc_backbone(net: &MobilityNetwork, delta: f64) -> MobilityNetwork {
    let total = net.total_weight() as f64;
    let mut out_strength: BTreeMap<&str, f64> = BTreeMap::new();
    let mut in_strength: BTreeMap<&str, f64> = BTreeMap::new();
    for ((o, d), &w) in &net.edges {
        *out_strength.entry(o).or_default() += w as f64;
        *in_strength.entry(d).or_default() += w as f64;
    }
    let edges = net
        .edges
        .iter()
        .filter(|((o, d), &w)| {
            let product = out_strength[&**o] * in_strength[&**d];
            let expected = product / total;
            let variance = (expected * (1.0 - product / (total * total))).max(0.0);
            w as f64 > expected + delta * variance.sqrt()
        })
        .map(|(k, &w)| (k.clone(), w))
        .collect();
    MobilityNetwork {
        group: net.group.clone(),
        nodes: net.nodes.clone(),
        edges,
    }
}

/// Pearson correlation of per-node degree over `universe`; nodes missing
/// from a network have degree 0.
pub fn degree_correlation<'a, U>(a: &MobilityNetwork, b: &MobilityNetwork, universe: U) -> Result<f64>
where
    U: IntoIterator<Item = &'a str>,
{
    let (da, db) = (a.degrees(), b.degrees());
    let (xs, ys): (Vec<f64>, Vec<f64>) = universe
        .into_iter()
        .map(|n| {
            (
                da.get(n).copied().unwrap_or(0) as f64,
                db.get(n).copied().unwrap_or(0) as f64,
            )
        })
        .unzip();
    pearson(&xs, &ys)
}

/// Pearson correlation of edge weights over the union of both edge sets;
/// an edge missing from one network has weight 0 there.
pub fn edge_weight_correlation(a: &MobilityNetwork, b: &MobilityNetwork) -> Result<f64> {
    let keys: BTreeSet<_> = a.edges.keys().chain(b.edges.keys()).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = keys
        .into_iter()
        .map(|k| {
            (
                a.edges.get(k).copied().unwrap_or(0) as f64,
                b.edges.get(k).copied().unwrap_or(0) as f64,
            )
        })
        .unzip();
    pearson(&xs, &ys)
}
