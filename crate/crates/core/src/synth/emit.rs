use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GroundTruthManifest, SynthCity};
use crate::census::AcsPaths;
use crate::ingest::{write_pings, PingRecord, PingSchema};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixturePaths {
    pub pings: PathBuf,
    pub boundaries: PathBuf,
    pub acs: AcsPaths,
    pub manifest: PathBuf,
}

impl FixturePaths {
    /// Conventional file names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            pings: dir.join("pings.csv"),
            boundaries: dir.join("boundaries.geojson"),
            acs: AcsPaths {
                poverty: dir.join("acs_s1701.csv"),
                age_sex: dir.join("acs_s0101.csv"),
                education: dir.join("acs_s1501.csv"),
            },
            manifest: dir.join("manifest.json"),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// One generated city ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFixture {
    pub city: SynthCity,
    pub pings: Vec<PingRecord>,
    pub manifest: GroundTruthManifest,
}

fn bbox(city: &SynthCity) -> [f64; 4] {
    city.block_groups.iter().fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, c| [b[0].min(c.west), b[1].min(c.south), b[2].max(c.east), b[3].max(c.north)],
    )
}

/// Cities sharing one fixture need distinct names, counties and footprints.
fn check_disjoint(parts: &[SynthFixture]) -> Result<()> {
    for (i, a) in parts.iter().enumerate() {
        for b in &parts[..i] {
            let (ca, cb) = (&a.city.config, &b.city.config);
            if ca.city == cb.city || ca.county == cb.county {
                return Err(Error::Config(format!(
                    "synth cities {} and {} share a name or county",
                    cb.city, ca.city
                )));
            }
            let (x, y) = (bbox(&a.city), bbox(&b.city));
            if x[0] < y[2] && y[0] < x[2] && x[1] < y[3] && y[1] < x[3] {
                return Err(Error::Config(format!(
                    "synth cities {} and {} overlap; move origin_lat or origin_lon",
                    cb.city, ca.city
                )));
            }
        }
    }
    Ok(())
}

/// Block groups as a GeoJSON FeatureCollection with a `GEOID` property.
pub fn boundaries_geojson(cities: &[&SynthCity]) -> Value {
    let features: Vec<Value> = cities
        .iter()
        .flat_map(|c| c.block_groups.iter())
        .map(|b| {
            json!({
                "type": "Feature",
                "properties": { "GEOID": b.geoid },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[
                        [b.west, b.south], [b.east, b.south], [b.east, b.north], [b.west, b.north], [b.west, b.south]
                    ]]
                }
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

fn acs_writer(path: &Path, columns: &[String]) -> Result<csv::Writer<BufWriter<File>>> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["GEO_ID".to_string(), "NAME".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    // Label row as in downloaded tables; the loader skips it.
    let mut labels = vec!["id".to_string(), "Geographic Area Name".to_string()];
    labels.extend(columns.iter().map(|c| format!("Estimate!!{c}")));
    w.write_record(&labels)?;
    Ok(w)
}

fn close(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// The three subject tables, laid out for the default variable map.
pub fn write_acs_tables(cities: &[&SynthCity], paths: &AcsPaths) -> Result<()> {
    let rows = || {
        cities
            .iter()
            .flat_map(|city| city.counts.iter().enumerate().map(move |(k, c)| (*city, k, c)))
    };
    let name = |city: &SynthCity, k: usize| format!("Census Tract {}, {}", k + 1, city.config.city);
    let geo = |city: &SynthCity, k: usize| format!("1400000US{}", city.tracts[k].tract_geoid);

    let mut s0101_cols = vec!["S0101_C01_001E".to_string()];
    s0101_cols.extend((2..=19).map(|r| format!("S0101_C01_{r:03}E")));
    s0101_cols.push("S0101_C03_001E".into());
    let mut w = acs_writer(&paths.age_sex, &s0101_cols)?;
    for (city, k, c) in rows() {
        let mut row = vec![geo(city, k), name(city, k), c.population.to_string()];
        row.extend(c.age_rows.iter().map(u64::to_string));
        row.push(c.male.to_string());
        w.write_record(&row)?;
    }
    close(w, &paths.age_sex)?;

    let mut w = acs_writer(&paths.poverty, &["S1701_C03_001E".to_string()])?;
    for (city, k, c) in rows() {
        w.write_record([geo(city, k), name(city, k), format!("{:.1}", c.poverty_percent)])?;
    }
    close(w, &paths.poverty)?;

    let s1501_cols: Vec<String> = ["S1501_C01_006E", "S1501_C01_028E", "S1501_C01_034E", "S1501_C01_040E", "S1501_C02_015E"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut w = acs_writer(&paths.education, &s1501_cols)?;
    for (city, k, c) in rows() {
        w.write_record([
            geo(city, k),
            name(city, k),
            c.pop_25plus.to_string(),
            c.white.to_string(),
            c.black.to_string(),
            c.asian.to_string(),
            format!("{:.1}", c.academic_percent),
        ])?;
    }
    close(w, &paths.education)
}

/// Writes pings, boundaries, ACS tables and the manifests (a JSON array,
/// one entry per city) of one or more cities.
pub fn emit_fixture(parts: &[SynthFixture], paths: &FixturePaths) -> Result<()> {
    check_disjoint(parts)?;
    let cities: Vec<&SynthCity> = parts.iter().map(|p| &p.city).collect();
    let pings: Vec<PingRecord> = parts.iter().flat_map(|p| p.pings.iter().cloned()).collect();
    let w = create(&paths.pings)?;
    write_pings(w, &pings, &PingSchema::default())?;

    let mut w = create(&paths.boundaries)?;
    serde_json::to_writer(&mut w, &boundaries_geojson(&cities))?;
    finish(w, &paths.boundaries)?;

    write_acs_tables(&cities, &paths.acs)?;

    let manifests: Vec<&GroundTruthManifest> = parts.iter().map(|p| &p.manifest).collect();
    let mut w = create(&paths.manifest)?;
    serde_json::to_writer_pretty(&mut w, &manifests)?;
    finish(w, &paths.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::census::{load_acs, CityResolver, VariableMap};
    use crate::ingest::{parse_pings, RegionIndex};
    use crate::synth::{gen_city, gen_users_and_pings, CountRange, SynthConfig};

    #[test]
    fn fixture_round_trip() {
        let cfg = SynthConfig {
            n_tracts: 12,
            users_per_tract: CountRange { min: 4, max: 6 },
            days: 4,
            ..Default::default()
        };
        let city = gen_city(&cfg).unwrap();
        let (pings, manifest) = gen_users_and_pings(&city).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = FixturePaths::in_dir(dir.path());
        let part = SynthFixture { city: city.clone(), pings: pings.clone(), manifest: manifest.clone() };
        emit_fixture(std::slice::from_ref(&part), &paths).unwrap();

        let (loaded, stats) =
            parse_pings(File::open(&paths.pings).unwrap(), &PingSchema::default(), Some(cfg.study_window())).unwrap();
        assert_eq!(loaded, pings);
        assert_eq!(stats.malformed, 0);

        let index = RegionIndex::from_geojson(File::open(&paths.boundaries).unwrap(), "GEOID").unwrap();
        assert_eq!(index.len(), 24);

        let acs = load_acs(&paths.acs, &VariableMap::default(), &CityResolver::single(cfg.city.clone())).unwrap();
        assert_eq!(acs.records.len(), 12);
        for (loaded, truth) in acs.records.iter().zip(&city.tracts) {
            assert_eq!(loaded, truth);
        }

        let back: Vec<GroundTruthManifest> = serde_json::from_reader(File::open(&paths.manifest).unwrap()).unwrap();
        assert_eq!(back, vec![manifest]);

        // the same city twice overlaps itself
        assert!(matches!(emit_fixture(&[part.clone(), part], &paths), Err(Error::Config(_))));
    }

    #[test]
    fn default_fixture_fits_size_budget() {
        let city = gen_city(&SynthConfig::default()).unwrap();
        let (pings, manifest) = gen_users_and_pings(&city).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = FixturePaths::in_dir(dir.path());
        emit_fixture(&[SynthFixture { city, pings, manifest }], &paths).unwrap();
        let bytes: u64 = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().metadata().unwrap().len()).sum();
        assert!(bytes < 50 * 1024 * 1024, "{bytes} bytes");
    }

    #[test]
    fn two_cities_share_a_fixture() {
        let a = SynthConfig { n_tracts: 4, users_per_tract: CountRange { min: 2, max: 2 }, days: 2, ..Default::default() };
        let b = SynthConfig { city: "other".into(), county: "99002".into(), origin_lat: 41.0, ..a.clone() };
        let parts: Vec<SynthFixture> = [a, b]
            .iter()
            .map(|c| {
                let city = gen_city(c).unwrap();
                let (pings, manifest) = gen_users_and_pings(&city).unwrap();
                SynthFixture { city, pings, manifest }
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let paths = FixturePaths::in_dir(dir.path());
        emit_fixture(&parts, &paths).unwrap();
        let mut cities = CityResolver::default();
        cities.add_city("synth", &["99001"]);
        cities.add_city("other", &["99002"]);
        let acs = load_acs(&paths.acs, &VariableMap::default(), &cities).unwrap();
        assert_eq!(acs.records.iter().filter(|r| r.city_id == "other").count(), 4);
        let index = RegionIndex::from_geojson(File::open(&paths.boundaries).unwrap(), "GEOID").unwrap();
        assert_eq!(index.len(), 16);
    }
}
