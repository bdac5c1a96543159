//! Ping ingestion: parsing, spatial join, home inference and user filters.

mod filter;
mod home;
mod parse;
mod profile;
mod region;

pub use filter::{filter_users, UserExclusion, UserFilter, UserTally};
pub use home::{infer_home, HomeInference, NightWindow};
pub use parse::{parse_pings, write_pings, ParseStats, PingReader, PingRecord, PingSchema, StudyWindow};
pub use profile::{
    build_profiles, group_by_user, read_profiles, write_profiles, HomeConfig, LocatedPing, UserPings,
    UserProfile,
};
pub use region::{tract_of, Region, RegionIndex, Ring, TRACT_GEOID_LEN};

/// Block group containing the ping, if any.
pub fn assign_region<'a>(ping: &PingRecord, index: &'a RegionIndex) -> Option<&'a str> {
    index.locate(ping.lat, ping.lon).map(|i| index.region_id(i))
}
