#![allow(dead_code)]

use databias::census::{filter_tracts, FeatureSpec, TractRecord};
use databias::ingest::{build_profiles, filter_users, group_by_user, HomeConfig, RegionIndex, UserFilter, UserPings, UserProfile};
use databias::model::{build_samples, TractSample};
use databias::synth::{gen_city, gen_users_and_pings, GroundTruthManifest, SynthCity, SynthConfig};

pub struct Run {
    pub city: SynthCity,
    pub manifest: GroundTruthManifest,
    pub index: RegionIndex,
    pub users: Vec<UserPings>,
    pub all_profiles: Vec<UserProfile>,
    pub profiles: Vec<UserProfile>,
    pub tracts: Vec<TractRecord>,
}

pub fn run(cfg: &SynthConfig) -> Run {
    let city = gen_city(cfg).unwrap();
    let (pings, manifest) = gen_users_and_pings(&city).unwrap();
    let index = city.region_index().unwrap();
    let users = group_by_user(pings, &index);
    let home = HomeConfig {
        tz_offset_hours: cfg.tz_offset_hours,
        ..Default::default()
    };
    let all_profiles = build_profiles(&users, &index, &home);
    let (tracts, _) = filter_tracts(city.tracts.clone(), 500);
    let (profiles, _) = filter_users(all_profiles.clone(), &tracts, &UserFilter::default());
    Run { city, manifest, index, users, all_profiles, profiles, tracts }
}

impl Run {
    pub fn samples(&self) -> Vec<TractSample> {
        build_samples(&self.profiles, &self.tracts, &FeatureSpec::default(), 5).unwrap().0
    }
}
