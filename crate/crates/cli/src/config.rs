//! TOML audit configuration with `--set key=value` overrides.
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use databias::census::{AcsPaths, FeatureSpec, FetchSpec, VariableMap};
use databias::ingest::{NightWindow, PingSchema, StudyWindow, UserFilter};
use databias::model::{CvConfig, Hyperparameters};
use databias::networks::{NetworkParams, NodeLevel, StayParams};
use databias::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_SEED: u64 = 1729;

/// Directory under `output_dir` for artifacts spanning several cities.
pub const ALL_CITIES: &str = "_all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub input: InputConfig,
    /// Half-open UTC interval; pings outside it are dropped at parse time.
    #[serde(default)]
    pub study_window: Option<StudyWindow>,
    pub cities: BTreeMap<String, CityConfig>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub model: ModelConfig,
    /// Cities written by the `synth` subcommand. Entries without a `seed`
    /// inherit the master seed.
    #[serde(default)]
    pub synth: Vec<SynthConfig>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub pings: Option<PathBuf>,
    #[serde(default)]
    pub ping_schema: PingSchema,
    pub boundaries: Option<PathBuf>,
    #[serde(default = "default_id_property")]
    pub boundary_id_property: String,
    pub acs: Option<AcsPaths>,
    /// Used when `acs` is absent; tables are downloaded into its cache.
    pub fetch: Option<FetchSpec>,
    #[serde(default)]
    pub variables: VariableMap,
    /// Ground-truth manifest written by `synth`; defaults to
    /// `manifest.json` next to the ping file.
    pub manifest: Option<PathBuf>,
}

fn default_id_property() -> String {
    "GEOID".into()
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            pings: None,
            ping_schema: PingSchema::default(),
            boundaries: None,
            boundary_id_property: default_id_property(),
            acs: None,
            fetch: None,
            variables: VariableMap::default(),
            manifest: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CityConfig {
    /// 5-digit state+county FIPS prefixes.
    pub counties: Vec<String>,
    /// Fixed offset of local time from UTC, no daylight saving.
    #[serde(default)]
    pub tz_offset_hours: f64,
    /// Published income Gini, carried into the report for comparison.
    #[serde(default)]
    pub income_gini: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_pings_exclusive: u64,
    pub max_pings_exclusive: u64,
    pub min_tract_population: u64,
    pub min_users_per_tract: usize,
    pub night_start_hour: f64,
    pub night_end_hour: f64,
    pub stay_radius_m: f64,
    pub stay_dwell_s: i64,
    pub backbone_delta: f64,
    pub min_edge_weight: u64,
    pub group_count: usize,
    pub node_level: NodeLevel,
    pub keep_self_loops: bool,
    pub lorenz_steps: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        let user = UserFilter::default();
        let night = NightWindow::default();
        let net = NetworkParams::default();
        Self {
            min_pings_exclusive: user.min_pings_exclusive,
            max_pings_exclusive: user.max_pings_exclusive,
            min_tract_population: user.min_tract_population,
            min_users_per_tract: 5,
            night_start_hour: night.start_hour,
            night_end_hour: night.end_hour,
            stay_radius_m: net.stay.radius_m,
            stay_dwell_s: net.stay.dwell_s,
            backbone_delta: net.backbone_delta,
            min_edge_weight: net.min_edge_weight,
            group_count: net.group_count,
            node_level: net.level,
            keep_self_loops: net.keep_self_loops,
            lorenz_steps: 100,
        }
    }
}

impl Thresholds {
    pub fn user_filter(&self) -> UserFilter {
        UserFilter {
            min_pings_exclusive: self.min_pings_exclusive,
            max_pings_exclusive: self.max_pings_exclusive,
            min_tract_population: self.min_tract_population,
        }
    }

    pub fn night(&self) -> NightWindow {
        NightWindow {
            start_hour: self.night_start_hour,
            end_hour: self.night_end_hour,
        }
    }

    pub fn network(&self) -> NetworkParams {
        NetworkParams {
            stay: StayParams {
                radius_m: self.stay_radius_m,
                dwell_s: self.stay_dwell_s,
            },
            level: self.node_level,
            keep_self_loops: self.keep_self_loops,
            group_count: self.group_count,
            min_edge_weight: self.min_edge_weight,
            backbone_delta: self.backbone_delta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Feature names; the default feature set when absent.
    pub features: Option<Vec<String>>,
    /// Hyperparameter grid; the default grid when absent.
    pub grid: Option<Vec<Hyperparameters>>,
    pub k_outer: usize,
    pub k_inner: usize,
    /// Features listed in the report, by importance.
    pub top_features: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let cv = CvConfig::default();
        Self {
            features: None,
            grid: None,
            k_outer: cv.k_outer,
            k_inner: cv.k_inner,
            top_features: 5,
        }
    }
}

impl ModelConfig {
    pub fn feature_spec(&self) -> Result<FeatureSpec, CliError> {
        match &self.features {
            None => Ok(FeatureSpec::default()),
            Some(names) => FeatureSpec::from_names(names).map_err(|e| CliError::Config(format!("model.features: {e}"))),
        }
    }

    pub fn grid(&self) -> Vec<Hyperparameters> {
        self.grid.clone().unwrap_or_else(Hyperparameters::default_grid)
    }
}

/// A loaded configuration plus what is needed to reproduce it.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: AuditConfig,
    /// SHA-256 of the effective configuration (after overrides), as JSON.
    pub sha256: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn stage_dir(&self, city: &str, stage: &str) -> PathBuf {
        self.output_dir().join(city).join(stage)
    }

    /// Input path that `stage` cannot run without. Missing files are
    /// configuration errors naming the field.
    pub fn required_input(&self, field: &str, value: Option<&PathBuf>, stage: &str) -> Result<PathBuf, CliError> {
        let path = value.ok_or_else(|| CliError::Config(format!("{field}: required by `{stage}` but not set")))?;
        if path.as_os_str().is_empty() {
            return Err(CliError::Config(format!("{field}: required by `{stage}` but empty")));
        }
        let path = self.resolve(path);
        if !path.is_file() {
            return Err(CliError::Config(format!("{field}: {} is not an existing file", path.display())));
        }
        Ok(path)
    }

    /// Output path for `synth`; only needs to be set.
    pub fn target_path(&self, field: &str, value: Option<&PathBuf>) -> Result<PathBuf, CliError> {
        value
            .map(|p| self.resolve(p))
            .ok_or_else(|| CliError::Config(format!("{field}: required by `synth` but not set")))
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig {
            k_outer: self.config.model.k_outer,
            k_inner: self.config.model.k_inner,
            seed: self.config.seed,
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Sets a dotted key such as `thresholds.stay_radius_m=150`, creating
/// intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} is malformed")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for (depth, part) in parents.iter().enumerate() {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry.as_table_mut().ok_or_else(|| {
            CliError::Config(format!("override {key}: {} is not a table", parts[..=depth].join(".")))
        })?;
    }
    cursor.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

/// Synth entries without their own seed take the master seed.
fn inherit_synth_seed(table: &mut toml::Table) {
    let master = table
        .get("seed")
        .cloned()
        .unwrap_or(toml::Value::Integer(DEFAULT_SEED as i64));
    if let Some(toml::Value::Array(entries)) = table.get_mut("synth") {
        for entry in entries {
            if let toml::Value::Table(t) = entry {
                t.entry("seed").or_insert_with(|| master.clone());
            }
        }
    }
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    inherit_synth_seed(&mut table);
    let config: AuditConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let field = e.path().to_string();
        CliError::Config(format!("{field}: {}", e.into_inner()))
    })?;
    config.validate()?;
    let json = serde_json::to_vec(&config).expect("config serializes");
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok(LoadedConfig {
        config,
        sha256: hex::encode(Sha256::digest(&json)),
        base_dir,
    })
}

fn is_fips(code: &str) -> bool {
    code.len() == 5 && code.bytes().all(|b| b.is_ascii_digit())
}

impl AuditConfig {
    /// Field-level checks that do not touch the file system.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
        if self.cities.is_empty() {
            return bad("cities", "at least one city is required");
        }
        let mut seen = BTreeMap::new();
        for (name, city) in &self.cities {
            let field = format!("cities.{name}");
            if name.is_empty() || name.starts_with('_') || !name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
                return bad(&field, "names use letters, digits, '-' and '_' and may not start with '_'");
            }
            if city.counties.is_empty() {
                return bad(&format!("{field}.counties"), "must list at least one county");
            }
            for c in &city.counties {
                if !is_fips(c) {
                    return bad(&format!("{field}.counties"), &format!("{c:?} is not a 5-digit FIPS code"));
                }
                if let Some(other) = seen.insert(c.clone(), name.clone()) {
                    return bad(&format!("{field}.counties"), &format!("county {c} already belongs to {other}"));
                }
            }
            if !(-14.0..=14.0).contains(&city.tz_offset_hours) {
                return bad(&format!("{field}.tz_offset_hours"), "must lie in -14..=14");
            }
        }
        if let Some(w) = self.study_window {
            if w.start >= w.end {
                return bad("study_window", "start must precede end");
            }
        }
        let t = &self.thresholds;
        if t.max_pings_exclusive <= t.min_pings_exclusive + 1 {
            return bad("thresholds.max_pings_exclusive", "leaves no admissible ping count");
        }
        for (field, value) in [
            ("thresholds.min_tract_population", t.min_tract_population as f64),
            ("thresholds.min_users_per_tract", t.min_users_per_tract as f64),
            ("thresholds.stay_radius_m", t.stay_radius_m),
            ("thresholds.stay_dwell_s", t.stay_dwell_s as f64),
            ("thresholds.backbone_delta", t.backbone_delta),
            ("thresholds.min_edge_weight", t.min_edge_weight as f64),
            ("thresholds.group_count", t.group_count as f64),
            ("thresholds.lorenz_steps", t.lorenz_steps as f64),
        ] {
            if !(value > 0.0) {
                return bad(field, "must be positive");
            }
        }
        for (field, hour) in [
            ("thresholds.night_start_hour", t.night_start_hour),
            ("thresholds.night_end_hour", t.night_end_hour),
        ] {
            if !(0.0..24.0).contains(&hour) {
                return bad(field, "must lie in [0, 24)");
            }
        }
        if t.night_start_hour == t.night_end_hour {
            return bad("thresholds.night_end_hour", "night window is empty");
        }
        let m = &self.model;
        if m.k_outer < 2 || m.k_inner < 2 {
            return bad("model.k_outer", "outer and inner fold counts must be at least 2");
        }
        if m.grid.as_ref().is_some_and(Vec::is_empty) {
            return bad("model.grid", "must not be empty");
        }
        if let Some(grid) = &m.grid {
            if grid.iter().any(|h| h.n_trees == 0 || h.min_leaf == 0) {
                return bad("model.grid", "n_trees and min_leaf must be positive");
            }
        }
        m.feature_spec()?;
        for (i, s) in self.synth.iter().enumerate() {
            let field = format!("synth[{i}]");
            s.validate().map_err(|e| CliError::Config(format!("{field}: {e}")))?;
            let Some(city) = self.cities.get(&s.city) else {
                return bad(&format!("{field}.city"), &format!("{:?} is not a configured city", s.city));
            };
            if !city.counties.contains(&s.county) {
                return bad(&format!("{field}.county"), &format!("{} is not a county of {}", s.county, s.city));
            }
            if city.tz_offset_hours != s.tz_offset_hours {
                return bad(&format!("{field}.tz_offset_hours"), &format!("differs from cities.{}.tz_offset_hours", s.city));
            }
        }
        Ok(())
    }

    /// Synth cities to generate: the configured entries, or one default
    /// city per configured city (stacked north of each other).
    pub fn synth_cities(&self) -> Vec<SynthConfig> {
        if !self.synth.is_empty() {
            return self.synth.clone();
        }
        self.cities
            .iter()
            .enumerate()
            .map(|(i, (name, city))| {
                let base = SynthConfig::default();
                SynthConfig {
                    city: name.clone(),
                    county: city.counties[0].clone(),
                    tz_offset_hours: city.tz_offset_hours,
                    origin_lat: base.origin_lat + i as f64,
                    seed: self.seed,
                    ..base
                }
            })
            .collect()
    }
}
