use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::home::{infer_home, NightWindow};
use super::parse::PingRecord;
use super::region::{tract_of, RegionIndex};
use crate::{Error, Result};

/// A ping joined to its block group (index into the [`RegionIndex`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatedPing {
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub region: Option<u32>,
}

/// All pings of one user, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct UserPings {
    pub user_id: String,
    pub pings: Vec<LocatedPing>,
}

const CHUNK: usize = 1 << 20;

/// Joins pings to regions and groups them per user.
///
/// Users come back sorted by id and each user's pings sorted by
/// `(timestamp, lat, lon)`, so the result does not depend on input order.
pub fn group_by_user<I>(pings: I, index: &RegionIndex) -> Vec<UserPings>
where
    I: IntoIterator<Item = PingRecord>,
{
    let mut users: HashMap<String, Vec<LocatedPing>> = HashMap::new();
    let mut chunk = Vec::with_capacity(CHUNK);
    let flush = |chunk: &mut Vec<PingRecord>, users: &mut HashMap<String, Vec<LocatedPing>>| {
        let regions: Vec<Option<u32>> = chunk
            .par_iter()
            .map(|p| index.locate(p.lat, p.lon).map(|i| i as u32))
            .collect();
        for (p, region) in chunk.drain(..).zip(regions) {
            let located = LocatedPing {
                timestamp: p.timestamp,
                lat: p.lat,
                lon: p.lon,
                region,
            };
            users.entry(p.user_id).or_default().push(located);
        }
    };
    for ping in pings {
        chunk.push(ping);
        if chunk.len() == CHUNK {
            flush(&mut chunk, &mut users);
        }
    }
    flush(&mut chunk, &mut users);

    let mut grouped: Vec<UserPings> = users
        .into_par_iter()
        .map(|(user_id, mut pings)| {
            pings.sort_by(|a, b| {
                a.timestamp
                    .cmp(&b.timestamp)
                    .then(a.lat.total_cmp(&b.lat))
                    .then(a.lon.total_cmp(&b.lon))
            });
            UserPings { user_id, pings }
        })
        .collect();
    grouped.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    grouped
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeConfig {
    pub night: NightWindow,
    pub tz_offset_hours: f64,
}

impl Default for HomeConfig {
    fn default() -> Self {
        Self {
            night: NightWindow::default(),
            tz_offset_hours: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub ping_count: u64,
    pub home_block_group: Option<String>,
    pub home_tract: Option<String>,
    pub night_ping_count: u64,
    /// Home came from all pings because no night ping was located.
    pub fallback: bool,
}

impl UserProfile {
    pub fn new(user_id: impl Into<String>, ping_count: u64, home_block_group: Option<&str>) -> Self {
        Self {
            user_id: user_id.into(),
            ping_count,
            home_block_group: home_block_group.map(str::to_string),
            home_tract: home_block_group.map(|bg| tract_of(bg).to_string()),
            night_ping_count: 0,
            fallback: false,
        }
    }
}

/// Ping count and inferred home for every user.
pub fn build_profiles(users: &[UserPings], index: &RegionIndex, cfg: &HomeConfig) -> Vec<UserProfile> {
    users
        .par_iter()
        .map(|u| {
            let inferred = infer_home(
                u.pings.iter().map(|p| (p.timestamp, p.region)),
                &cfg.night,
                cfg.tz_offset_hours,
            );
            let bg = inferred.home.map(|i| index.region_id(i as usize));
            UserProfile {
                night_ping_count: inferred.night_pings,
                fallback: inferred.fallback,
                ..UserProfile::new(u.user_id.clone(), u.pings.len() as u64, bg)
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ProfileRow {
    user_id: String,
    ping_count: u64,
    home_bg: Option<String>,
    home_tract: Option<String>,
    fallback_flag: bool,
}

/// Writes `user_id,ping_count,home_bg,home_tract,fallback_flag`.
pub fn write_profiles<W: Write>(sink: W, profiles: &[UserProfile]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    for p in profiles {
        writer.serialize(ProfileRow {
            user_id: p.user_id.clone(),
            ping_count: p.ping_count,
            home_bg: p.home_block_group.clone(),
            home_tract: p.home_tract.clone(),
            fallback_flag: p.fallback,
        })?;
    }
    writer.flush().map_err(|e| Error::io("<profile sink>", e))
}

/// Reads a profile CSV. The file does not carry night ping counts, so
/// `night_ping_count` is zero on the returned profiles.
pub fn read_profiles<R: Read>(source: R) -> Result<Vec<UserProfile>> {
    let mut reader = csv::Reader::from_reader(source);
    reader
        .deserialize::<ProfileRow>()
        .map(|row| {
            let row = row?;
            Ok(UserProfile {
                user_id: row.user_id,
                ping_count: row.ping_count,
                home_block_group: row.home_bg,
                home_tract: row.home_tract,
                night_ping_count: 0,
                fallback: row.fallback_flag,
            })
        })
        .collect()
}
