use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TractRecord;
use crate::{Error, Result};

/// The three ACS subject tables the audit reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AcsTable {
    /// Poverty status in the past 12 months.
    S1701,
    /// Age and sex.
    S0101,
    /// Educational attainment, including ethnicity of the 25+ population.
    S1501,
}

impl AcsTable {
    pub const ALL: [AcsTable; 3] = [AcsTable::S1701, AcsTable::S0101, AcsTable::S1501];

    pub fn id(self) -> &'static str {
        match self {
            AcsTable::S1701 => "S1701",
            AcsTable::S0101 => "S0101",
            AcsTable::S1501 => "S1501",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcsPaths {
    pub poverty: PathBuf,
    pub age_sex: PathBuf,
    pub education: PathBuf,
}

impl AcsPaths {
    fn path(&self, table: AcsTable) -> &Path {
        match table {
            AcsTable::S1701 => &self.poverty,
            AcsTable::S0101 => &self.age_sex,
            AcsTable::S1501 => &self.education,
        }
    }
}

/// How one variable is computed from table columns:
/// `scale · Σ numerator / denominator` (denominator defaults to 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSource {
    pub table: AcsTable,
    pub numerator: Vec<String>,
    #[serde(default)]
    pub denominator: Option<String>,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

impl VariableSource {
    pub fn count(table: AcsTable, column: &str) -> Self {
        Self {
            table,
            numerator: vec![column.to_string()],
            denominator: None,
            scale: 1.0,
        }
    }

    /// A column holding percentages in `[0,100]`.
    pub fn percent(table: AcsTable, column: &str) -> Self {
        Self {
            scale: 0.01,
            ..Self::count(table, column)
        }
    }

    pub fn ratio(table: AcsTable, numerator: &[&str], denominator: &str) -> Self {
        Self {
            table,
            numerator: numerator.iter().map(|s| s.to_string()).collect(),
            denominator: Some(denominator.to_string()),
            scale: 1.0,
        }
    }

    fn columns(&self) -> impl Iterator<Item = &str> {
        self.numerator
            .iter()
            .map(String::as_str)
            .chain(self.denominator.as_deref())
    }

    fn evaluate(&self, row: &BTreeMap<String, Option<f64>>) -> Option<f64> {
        let mut num = 0.0;
        for col in &self.numerator {
            num += (*row.get(col)?)?;
        }
        let den = match &self.denominator {
            Some(col) => (*row.get(col)?)?,
            None => 1.0,
        };
        if den <= 0.0 {
            return None;
        }
        Some(self.scale * num / den)
    }
}

/// Column mapping from ACS subject tables to [`TractRecord`] fields.
///
/// The default uses 2019 5-year subject-table codes. ACS layouts shift
/// between vintages, so every entry is overridable from config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableMap {
    pub population: VariableSource,
    pub pop_25plus: VariableSource,
    pub poverty_rate: VariableSource,
    pub black: VariableSource,
    pub white: VariableSource,
    pub asian: VariableSource,
    pub academic: VariableSource,
    pub male: VariableSource,
    pub age_under_25: VariableSource,
    pub age_25_44: VariableSource,
    pub age_45_64: VariableSource,
    pub age_65_plus: VariableSource,
}

fn age_cols(rows: std::ops::RangeInclusive<u32>) -> Vec<String> {
    rows.map(|r| format!("S0101_C01_{r:03}E")).collect()
}

impl Default for VariableMap {
    fn default() -> Self {
        use AcsTable::*;
        let age = |rows| VariableSource {
            table: S0101,
            numerator: age_cols(rows),
            denominator: Some("S0101_C01_001E".into()),
            scale: 1.0,
        };
        Self {
            population: VariableSource::count(S0101, "S0101_C01_001E"),
            pop_25plus: VariableSource::count(S1501, "S1501_C01_006E"),
            poverty_rate: VariableSource::percent(S1701, "S1701_C03_001E"),
            white: VariableSource::ratio(S1501, &["S1501_C01_028E"], "S1501_C01_006E"),
            black: VariableSource::ratio(S1501, &["S1501_C01_034E"], "S1501_C01_006E"),
            asian: VariableSource::ratio(S1501, &["S1501_C01_040E"], "S1501_C01_006E"),
            academic: VariableSource::percent(S1501, "S1501_C02_015E"),
            male: VariableSource::ratio(S0101, &["S0101_C03_001E"], "S0101_C01_001E"),
            age_under_25: age(2..=6),
            age_25_44: age(7..=10),
            age_45_64: age(11..=14),
            age_65_plus: age(15..=19),
        }
    }
}

impl VariableMap {
    fn sources(&self) -> [&VariableSource; 12] {
        [
            &self.population,
            &self.pop_25plus,
            &self.poverty_rate,
            &self.black,
            &self.white,
            &self.asian,
            &self.academic,
            &self.male,
            &self.age_under_25,
            &self.age_25_44,
            &self.age_45_64,
            &self.age_65_plus,
        ]
    }

    fn columns_for(&self, table: AcsTable) -> BTreeSet<&str> {
        self.sources()
            .into_iter()
            .filter(|s| s.table == table)
            .flat_map(|s| s.columns())
            .collect()
    }
}

/// Maps tracts to cities through their 5-digit state+county prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityResolver {
    counties: BTreeMap<String, String>,
    fallback: Option<String>,
}

impl CityResolver {
    /// Every tract belongs to `city`.
    pub fn single(city: impl Into<String>) -> Self {
        Self {
            counties: BTreeMap::new(),
            fallback: Some(city.into()),
        }
    }

    pub fn add_city<S: AsRef<str>>(&mut self, city: &str, counties: &[S]) {
        for c in counties {
            self.counties.insert(c.as_ref().to_string(), city.to_string());
        }
    }

    pub fn resolve(&self, geoid: &str) -> Option<&str> {
        geoid
            .get(..5)
            .and_then(|county| self.counties.get(county))
            .or(self.fallback.as_ref())
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingTract {
    pub tract_geoid: String,
    pub missing_tables: Vec<AcsTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcsLoad {
    /// Sorted by GEOID.
    pub records: Vec<TractRecord>,
    pub missing: Vec<MissingTract>,
    /// Tracts outside every configured city.
    pub outside_cities: usize,
}

type TableRows = BTreeMap<String, BTreeMap<String, Option<f64>>>;

/// Parses an ACS estimate cell. Annotations such as `-`, `(X)`, `N`, `**`
/// and the API's negative jam values mean "no value".
fn parse_cell(raw: &str) -> Option<f64> {
    let cleaned: String = raw.trim().chars().filter(|&c| c != ',').collect();
    let cleaned = cleaned.trim_end_matches('+').trim_end_matches('%');
    cleaned
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
}

/// Tract GEOID from a `GEO_ID` cell such as `1400000US36047000100`.
/// Rows whose id does not end in 11 digits (label rows, other summary
/// levels) yield `None`.
fn tract_geoid(geo_id: &str) -> Option<String> {
    let geo_id = geo_id.trim();
    let tail = geo_id.get(geo_id.len().checked_sub(11)?..)?;
    let is_tract = tail.bytes().all(|b| b.is_ascii_digit())
        && (geo_id.len() == 11 || geo_id.contains("US"));
    is_tract.then(|| tail.to_string())
}

fn read_table<R: Read>(reader: R, table: AcsTable, columns: &BTreeSet<&str>) -> Result<TableRows> {
    let mut csv = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = csv.headers()?.clone();
    let index_of = |name: &str| headers.iter().position(|h| h.trim() == name);
    let geo_col = index_of("GEO_ID")
        .ok_or_else(|| Error::Config(format!("{} table has no GEO_ID column", table.id())))?;
    let mut wanted = Vec::new();
    for &col in columns {
        let idx = index_of(col).ok_or_else(|| {
            Error::Config(format!("{} table has no column {col}", table.id()))
        })?;
        wanted.push((col, idx));
    }
    let mut rows = TableRows::new();
    for record in csv.records() {
        let record = record?;
        let Some(geoid) = record.get(geo_col).and_then(tract_geoid) else {
            continue;
        };
        let values = wanted
            .iter()
            .map(|&(col, idx)| (col.to_string(), record.get(idx).and_then(parse_cell)))
            .collect();
        if rows.insert(geoid.clone(), values).is_some() {
            return Err(Error::Data(format!(
                "GEOID {geoid} appears twice in table {}",
                table.id()
            )));
        }
    }
    Ok(rows)
}

/// Loads the three subject tables and joins them per tract.
///
/// Only tracts present in all three tables (and inside a configured city)
/// become records; the rest are listed in [`AcsLoad::missing`].
pub fn load_acs(paths: &AcsPaths, map: &VariableMap, cities: &CityResolver) -> Result<AcsLoad> {
    let mut tables = BTreeMap::new();
    for table in AcsTable::ALL {
        let path = paths.path(table);
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let rows = read_table(file, table, &map.columns_for(table)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })?;
        tables.insert(table, rows);
    }

    let all_geoids: BTreeSet<&String> = tables.values().flat_map(|t| t.keys()).collect();
    let mut records = Vec::new();
    let mut missing = Vec::new();
    let mut outside_cities = 0;
    for geoid in all_geoids {
        let missing_tables: Vec<AcsTable> = AcsTable::ALL
            .into_iter()
            .filter(|t| !tables[t].contains_key(geoid))
            .collect();
        if !missing_tables.is_empty() {
            missing.push(MissingTract {
                tract_geoid: geoid.clone(),
                missing_tables,
            });
            continue;
        }
        let Some(city) = cities.resolve(geoid) else {
            outside_cities += 1;
            continue;
        };
        let eval = |src: &VariableSource| src.evaluate(&tables[&src.table][geoid]);
        let count = |src: &VariableSource| eval(src).map(|v| v.round() as u64);
        let mut record = TractRecord {
            tract_geoid: geoid.clone(),
            city_id: city.to_string(),
            population: count(&map.population),
            pop_25plus: count(&map.pop_25plus),
            poverty_rate: eval(&map.poverty_rate),
            pct_black: eval(&map.black),
            pct_white: eval(&map.white),
            pct_asian: eval(&map.asian),
            pct_other: None,
            pct_academic: eval(&map.academic),
            pct_male: eval(&map.male),
            age_under_25: eval(&map.age_under_25),
            age_25_44: eval(&map.age_25_44),
            age_45_64: eval(&map.age_45_64),
            age_65_plus: eval(&map.age_65_plus),
        };
        record.derive_other();
        records.push(record);
    }
    Ok(AcsLoad {
        records,
        missing,
        outside_cities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_parsing() {
        assert_eq!(parse_cell("12.5"), Some(12.5));
        assert_eq!(parse_cell("1,234"), Some(1234.0));
        assert_eq!(parse_cell("250,000+"), Some(250000.0));
        assert_eq!(parse_cell("-"), None);
        assert_eq!(parse_cell("(X)"), None);
        assert_eq!(parse_cell("-666666666"), None);
        assert_eq!(parse_cell(""), None);
    }

    #[test]
    fn geoid_extraction() {
        assert_eq!(tract_geoid("1400000US36047000100").as_deref(), Some("36047000100"));
        assert_eq!(tract_geoid("36047000100").as_deref(), Some("36047000100"));
        assert_eq!(tract_geoid("Geography"), None);
        assert_eq!(tract_geoid("0500000US36047"), None);
    }

    #[test]
    fn duplicate_geoid_is_data_error() {
        let csv = "GEO_ID,V\n1400000US36047000100,1\n1400000US36047000100,2\n";
        let cols = BTreeSet::from(["V"]);
        let err = read_table(csv.as_bytes(), AcsTable::S1701, &cols).unwrap_err();
        assert!(matches!(err, Error::Data(m) if m.contains("36047000100")));
    }

    #[test]
    fn missing_column_is_config_error() {
        let csv = "GEO_ID,V\n1400000US36047000100,1\n";
        let cols = BTreeSet::from(["W"]);
        assert!(matches!(
            read_table(csv.as_bytes(), AcsTable::S1701, &cols),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn label_rows_are_skipped() {
        let csv = "GEO_ID,V\nid,Estimate!!Total\n1400000US36047000100,7\n";
        let rows = read_table(csv.as_bytes(), AcsTable::S1701, &BTreeSet::from(["V"])).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows["36047000100"]["V"], Some(7.0));
    }

    #[test]
    fn resolver_by_county() {
        let mut r = CityResolver::default();
        r.add_city("nyc", &["36047", "36061"]);
        assert_eq!(r.resolve("36047000100"), Some("nyc"));
        assert_eq!(r.resolve("17031000100"), None);
        assert_eq!(CityResolver::single("x").resolve("17031000100"), Some("x"));
    }
}
