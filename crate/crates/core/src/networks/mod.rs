//! Production-group mobility networks.
//!
//! Users are split into equally sized groups by data production, each
//! group's trips are aggregated into a tract-to-tract network, and the
//! networks are cleaned (minimum weight, noise-corrected backbone) and
//! compared against the top-producing group.

mod graph;
mod stays;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use graph::{
    build_network, degree_correlation, edge_weight_correlation, filter_min_weight, group_label, nc_backbone,
    MobilityNetwork,
};
pub use stays::{detect_stays, extract_trips, haversine_m, Stay, StayParams, Trip};

use crate::ingest::{tract_of, RegionIndex, UserPings, UserProfile};
use crate::{Error, Result};

/// Users split into production groups; `groups[0]` holds the top producers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupAssignment {
    pub groups: Vec<Vec<String>>,
}

impl GroupAssignment {
    pub fn group_of(&self) -> HashMap<&str, usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, users)| users.iter().map(move |u| (u.as_str(), g)))
            .collect()
    }
}

/// Sorts users by ping count (descending, ties by user id) and cuts them into
/// `group_count` contiguous groups whose sizes differ by at most one. The
/// leading groups absorb the remainder.
pub fn partition_groups(profiles: &[UserProfile], group_count: usize) -> Result<GroupAssignment> {
    if group_count == 0 {
        return Err(Error::Config("group count must be positive".into()));
    }
    if profiles.len() < group_count {
        return Err(Error::Data(format!(
            "{} users cannot fill {group_count} groups",
            profiles.len()
        )));
    }
    let mut order: Vec<&UserProfile> = profiles.iter().collect();
    order.sort_by(|a, b| b.ping_count.cmp(&a.ping_count).then_with(|| a.user_id.cmp(&b.user_id)));
    let base = order.len() / group_count;
    let extra = order.len() % group_count;
    let mut groups = Vec::with_capacity(group_count);
    let mut rest = order.as_slice();
    for g in 0..group_count {
        let size = base + usize::from(g < extra);
        let (head, tail) = rest.split_at(size);
        groups.push(head.iter().map(|p| p.user_id.clone()).collect());
        rest = tail;
    }
    Ok(GroupAssignment { groups })
}

/// Spatial level of network nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeLevel {
    #[default]
    Tract,
    BlockGroup,
}

impl NodeLevel {
    pub fn label<'a>(&self, block_group: &'a str) -> &'a str {
        match self {
            NodeLevel::Tract => tract_of(block_group),
            NodeLevel::BlockGroup => block_group,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub stay: StayParams,
    pub level: NodeLevel,
    pub keep_self_loops: bool,
    pub group_count: usize,
    pub min_edge_weight: u64,
    pub backbone_delta: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            stay: StayParams::default(),
            level: NodeLevel::Tract,
            keep_self_loops: true,
            group_count: 20,
            min_edge_weight: 2,
            backbone_delta: 1.0,
        }
    }
}

/// Correlations of one group's cleaned network with the top group's.
/// `None` where the statistic is undefined (zero variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelation {
    pub group: String,
    pub degree_r: Option<f64>,
    pub edge_weight_r: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NetworkAnalysis {
    /// Raw per-group networks, `q01` first.
    pub groups: Vec<MobilityNetwork>,
    pub all: MobilityNetwork,
    /// Per-group networks after the weight filter and backbone.
    pub cleaned: Vec<MobilityNetwork>,
    pub cleaned_all: MobilityNetwork,
    pub correlations: Vec<GroupCorrelation>,
    /// Node universe used for degree correlations.
    pub universe: Vec<Arc<str>>,
}

/// Node labels of every region in `index` whose GEOID satisfies `keep`.
pub fn node_universe<F>(index: &RegionIndex, level: NodeLevel, keep: F) -> Vec<Arc<str>>
where
    F: Fn(&str) -> bool,
{
    let mut labels: Vec<Arc<str>> = index
        .regions()
        .iter()
        .filter(|r| keep(&r.id))
        .map(|r| Arc::from(level.label(&r.id)))
        .collect();
    labels.dedup();
    labels
}

/// Trips of each user, in input order.
pub fn user_trips(users: &[&UserPings], index: &RegionIndex, params: &NetworkParams) -> Vec<Vec<Trip>> {
    let labels: Vec<Arc<str>> = index
        .regions()
        .iter()
        .map(|r| Arc::from(params.level.label(&r.id)))
        .collect();
    users
        .par_iter()
        .map(|u| {
            let id: Arc<str> = Arc::from(u.user_id.as_str());
            let stays = detect_stays(&id, &u.pings, &params.stay, |r| labels[r as usize].clone());
            extract_trips(&stays)
        })
        .collect()
}

/// Full group-network comparison for one city.
///
/// `users` must cover every profile in `profiles`; users without a profile
/// are ignored.
pub fn analyze(
    users: &[UserPings],
    profiles: &[UserProfile],
    index: &RegionIndex,
    universe: Vec<Arc<str>>,
    params: &NetworkParams,
) -> Result<NetworkAnalysis> {
    let assignment = partition_groups(profiles, params.group_count)?;
    let group_of = assignment.group_of();
    let members: Vec<&UserPings> = users
        .iter()
        .filter(|u| group_of.contains_key(u.user_id.as_str()))
        .collect();
    let trips = user_trips(&members, index, params);

    let mut per_group: Vec<Vec<&[Trip]>> = vec![Vec::new(); params.group_count];
    for (u, t) in members.iter().zip(&trips) {
        per_group[group_of[u.user_id.as_str()]].push(t);
    }
    let groups: Vec<MobilityNetwork> = per_group
        .into_iter()
        .enumerate()
        .map(|(g, lists)| build_network(&group_label(g), lists, params.keep_self_loops))
        .collect();
    let all = build_network(
        "all",
        trips.iter().map(Vec::as_slice).collect::<Vec<_>>(),
        params.keep_self_loops,
    );

    let clean = |n: &MobilityNetwork| {
        nc_backbone(
            &filter_min_weight(n, params.min_edge_weight, false),
            params.backbone_delta,
        )
    };
    let cleaned: Vec<MobilityNetwork> = groups.par_iter().map(clean).collect();
    let cleaned_all = clean(&all);

    let top = &cleaned[0];
    let correlations = cleaned
        .iter()
        .map(|net| GroupCorrelation {
            group: net.group.clone(),
            degree_r: degree_correlation(top, net, universe.iter().map(|s| &**s)).ok(),
            edge_weight_r: edge_weight_correlation(top, net).ok(),
        })
        .collect();
    Ok(NetworkAnalysis {
        groups,
        all,
        cleaned,
        cleaned_all,
        correlations,
        universe,
    })
}

/// Full pairwise degree-correlation matrix between networks.
pub fn degree_matrix(nets: &[MobilityNetwork], universe: &[Arc<str>]) -> Vec<Vec<Option<f64>>> {
    nets.iter()
        .map(|a| {
            nets.iter()
                .map(|b| degree_correlation(a, b, universe.iter().map(|s| &**s)).ok())
                .collect()
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `group,degree_r,edge_weight_r` with one row per group.
pub fn write_correlations<W: Write>(sink: W, rows: &[GroupCorrelation]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["group", "degree_r", "edge_weight_r"])?;
    for r in rows {
        writer.write_record([r.group.clone(), fmt_opt(r.degree_r), fmt_opt(r.edge_weight_r)])?;
    }
    writer.flush().map_err(|e| Error::io("<correlation sink>", e))
}

/// Writes a labelled square matrix; undefined cells are left empty.
pub fn write_matrix<W: Write>(sink: W, labels: &[String], matrix: &[Vec<Option<f64>>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header = vec![String::new()];
    header.extend(labels.iter().cloned());
    writer.write_record(&header)?;
    for (label, row) in labels.iter().zip(matrix) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(|&v| fmt_opt(v)));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io("<matrix sink>", e))
}

/// Total trip weight per group, keyed by group label.
pub fn group_weights(analysis: &NetworkAnalysis) -> BTreeMap<String, u64> {
    analysis
        .groups
        .iter()
        .map(|n| (n.group.clone(), n.total_weight()))
        .collect()
}
