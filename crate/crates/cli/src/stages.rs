use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use databias::attribution::{attribute_city, beeswarm_svg, write_attribution_csv, CityAttribution};
use databias::census::{fetch_acs, filter_tracts, load_acs, AcsPaths, AcsTable, CityResolver, FetchSpec, TractRecord, TractTally};
use databias::inequality::{lorenz_svg, InequalityReport};
use databias::ingest::{
    build_profiles, filter_users, group_by_user, read_profiles, tract_of, write_profiles, HomeConfig, ParseStats,
    PingReader, RegionIndex, UserPings, UserProfile, UserTally,
};
use databias::model::{
    build_samples, city_matrix, fit_cities, leave_one_out, CitySamples, CvConfig, CvReport, ForestModel,
    LeaveOneOutScore, MedianTally, ScoreMatrix, TractSample,
};
use databias::networks::{analyze, degree_matrix, node_universe, write_correlations, write_matrix, GroupCorrelation, NetworkParams};
use databias::synth::{emit_fixture, gen_city, gen_users_and_pings, FixturePaths, SynthFixture};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{LoadedConfig, ALL_CITIES};
use crate::CliError;

pub struct Ctx {
    pub loaded: LoadedConfig,
    pub command: &'static str,
    pub plots: bool,
    pub overrides: Vec<String>,
}

impl Ctx {
    fn cfg(&self) -> &crate::AuditConfig {
        &self.loaded.config
    }

    fn dir(&self, city: &str, stage: &str) -> PathBuf {
        self.loaded.stage_dir(city, stage)
    }

    fn metadata(&self, city: &str, stage: &str, timings: &Timings) -> Result<(), CliError> {
        let meta = RunMetadata {
            command: self.command,
            stage,
            city,
            config_sha256: &self.loaded.sha256,
            seed: self.cfg().seed,
            versions: BTreeMap::from([("databias", databias::VERSION), ("databias-cli", env!("CARGO_PKG_VERSION"))]),
            finished_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            timings_ms: &timings.0,
            overrides: &self.overrides,
        };
        write_json(&self.dir(city, stage).join("run_metadata.json"), &meta)
    }
}

/// Wall-clock time per step, milliseconds. Only ever written to metadata.
#[derive(Debug, Default)]
struct Timings(BTreeMap<String, f64>);

impl Timings {
    fn time<T>(&mut self, step: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.0.entry(step.to_string()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }
}

#[derive(Serialize)]
struct RunMetadata<'a> {
    command: &'a str,
    stage: &'a str,
    city: &'a str,
    config_sha256: &'a str,
    seed: u64,
    versions: BTreeMap<&'static str, &'static str>,
    finished_unix_s: u64,
    timings_ms: &'a BTreeMap<String, f64>,
    overrides: &'a [String],
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> databias::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().map_err(|e| io_err(path, e))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

/// Artifact written by an earlier stage; its absence is a dependency error.
pub(crate) fn upstream(path: PathBuf, producer: &str) -> Result<PathBuf, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Dependency(format!(
            "{} is missing; run `databias {producer}` first",
            path.display()
        )))
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_retained(ctx: &Ctx, city: &str) -> Result<Vec<UserProfile>, CliError> {
    let path = upstream(ctx.dir(city, "ingest").join("retained.csv"), "ingest")?;
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    Ok(read_profiles(BufReader::new(file))?)
}

fn read_tracts(ctx: &Ctx, city: &str) -> Result<Vec<TractRecord>, CliError> {
    read_json(&upstream(ctx.dir(city, "ingest").join("tracts.json"), "ingest")?)
}

// ---------------------------------------------------------------- inputs

/// Fails on the first missing raw input, pings first.
fn require_raw_inputs(ctx: &Ctx, stage: &str) -> Result<(), CliError> {
    let input = &ctx.cfg().input;
    ctx.loaded.required_input("input.pings", input.pings.as_ref(), stage)?;
    ctx.loaded.required_input("input.boundaries", input.boundaries.as_ref(), stage)?;
    Ok(())
}

fn load_regions(ctx: &Ctx, stage: &str) -> Result<RegionIndex, CliError> {
    let input = &ctx.cfg().input;
    let path = ctx.loaded.required_input("input.boundaries", input.boundaries.as_ref(), stage)?;
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    Ok(RegionIndex::from_geojson(BufReader::new(file), &input.boundary_id_property)?)
}

/// Streams the ping file into per-user located traces.
fn load_users(ctx: &Ctx, index: &RegionIndex, stage: &str) -> Result<(Vec<UserPings>, ParseStats), CliError> {
    let input = &ctx.cfg().input;
    let path = ctx.loaded.required_input("input.pings", input.pings.as_ref(), stage)?;
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let mut reader = PingReader::new(BufReader::with_capacity(1 << 20, file), &input.ping_schema, ctx.cfg().study_window)
        .map_err(|e| match e {
            databias::Error::Config(m) => CliError::Config(format!("input.ping_schema: {m}")),
            other => other.into(),
        })?;
    let mut failure = None;
    let users = group_by_user(
        reader.by_ref().map_while(|r| r.map_err(|e| failure = Some(e)).ok()),
        index,
    );
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok((users, reader.stats()))
}

fn acs_paths(ctx: &Ctx, stage: &str) -> Result<AcsPaths, CliError> {
    let input = &ctx.cfg().input;
    if let Some(acs) = &input.acs {
        let need = |field: &str, p: &PathBuf| ctx.loaded.required_input(field, Some(p), stage);
        return Ok(AcsPaths {
            poverty: need("input.acs.poverty", &acs.poverty)?,
            age_sex: need("input.acs.age_sex", &acs.age_sex)?,
            education: need("input.acs.education", &acs.education)?,
        });
    }
    let Some(spec) = &input.fetch else {
        return Err(CliError::Config(format!(
            "input.acs: required by `{stage}` unless input.fetch is set"
        )));
    };
    let spec = FetchSpec {
        cache_dir: ctx.loaded.resolve(&spec.cache_dir),
        ..spec.clone()
    };
    let paths = fetch_acs(&spec)?;
    let find = |table: AcsTable| {
        spec.table_ids
            .iter()
            .position(|t| t == table.id())
            .map(|i| paths[i].clone())
            .ok_or_else(|| CliError::Config(format!("input.fetch.table_ids: must include {}", table.id())))
    };
    Ok(AcsPaths {
        poverty: find(AcsTable::S1701)?,
        age_sex: find(AcsTable::S0101)?,
        education: find(AcsTable::S1501)?,
    })
}

fn resolver(ctx: &Ctx) -> CityResolver {
    let mut r = CityResolver::default();
    for (name, city) in &ctx.cfg().cities {
        r.add_city(name, &city.counties);
    }
    r
}

/// City of the block group a user is seen in most (ties to the smaller
/// region index). Only used to pick the time zone for home inference.
fn provisional_city<'r>(user: &UserPings, index: &RegionIndex, cities: &'r CityResolver) -> Option<&'r str> {
    let mut counts: HashMap<u32, usize> = HashMap::new();
    for p in &user.pings {
        if let Some(r) = p.region {
            *counts.entry(r).or_default() += 1;
        }
    }
    let (region, _) = counts
        .into_iter()
        .max_by_key(|&(r, n)| (n, std::cmp::Reverse(r)))?;
    cities.resolve(tract_of(index.region_id(region as usize)))
}

/// Home inference with each user's city time zone.
fn profiles(ctx: &Ctx, users: Vec<UserPings>, index: &RegionIndex, cities: &CityResolver) -> Vec<UserProfile> {
    let cfg = ctx.cfg();
    let fallback_tz = cfg.cities.values().next().map_or(0.0, |c| c.tz_offset_hours);
    let mut by_offset: BTreeMap<i64, (f64, Vec<UserPings>)> = BTreeMap::new();
    for u in users {
        let tz = provisional_city(&u, index, cities).map_or(fallback_tz, |c| cfg.cities[c].tz_offset_hours);
        by_offset
            .entry((tz * 3600.0).round() as i64)
            .or_insert_with(|| (tz, Vec::new()))
            .1
            .push(u);
    }
    let night = cfg.thresholds.night();
    let mut out: Vec<UserProfile> = by_offset
        .values()
        .flat_map(|(tz, group)| {
            build_profiles(
                group,
                index,
                &HomeConfig {
                    night,
                    tz_offset_hours: *tz,
                },
            )
        })
        .collect();
    out.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    out
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub parse: ParseStats,
    pub regions: usize,
    /// Users in the whole ping file.
    pub users_total: usize,
    /// Users whose home is unknown or outside every configured city.
    pub users_unassigned: usize,
    /// Tracts missing from at least one ACS table (all cities).
    pub acs_tracts_incomplete: usize,
    pub users: UserTally,
    pub tracts: TractTally,
}

#[derive(Debug, Clone)]
pub struct CityIngest {
    pub retained: Vec<UserProfile>,
    pub summary: IngestSummary,
}

/// Writes `profiles.csv` (every user homed in the city), `retained.csv`
/// (users passing the filters), `tracts.json` (tracts passing the tract
/// filter) and `summary.json` per city.
pub fn ingest(ctx: &Ctx) -> Result<BTreeMap<String, CityIngest>, CliError> {
    let mut t = Timings::default();
    let cfg = ctx.cfg();
    require_raw_inputs(ctx, ctx.command)?;
    let index = t.time("regions", || load_regions(ctx, ctx.command))?;
    let acs_paths = acs_paths(ctx, ctx.command)?;
    let cities = resolver(ctx);
    let acs = t.time("acs", || load_acs(&acs_paths, &cfg.input.variables, &cities))?;
    let (users, parse) = t.time("parse_and_join", || load_users(ctx, &index, ctx.command))?;
    let users_total = users.len();
    let all_profiles = t.time("home_inference", || profiles(ctx, users, &index, &cities));

    let mut homed: BTreeMap<&str, Vec<UserProfile>> = cfg.cities.keys().map(|c| (c.as_str(), Vec::new())).collect();
    let mut unassigned = 0;
    for p in all_profiles {
        match p.home_tract.as_deref().and_then(|tract| cities.resolve(tract)) {
            Some(city) => homed.get_mut(city).expect("resolver only knows configured cities").push(p),
            None => unassigned += 1,
        }
    }

    let filter = cfg.thresholds.user_filter();
    let mut out = BTreeMap::new();
    for (city, profiles) in homed {
        let records: Vec<TractRecord> = acs.records.iter().filter(|r| r.city_id == city).cloned().collect();
        let dir = ctx.dir(city, "ingest");
        write_with(&dir.join("profiles.csv"), |w| write_profiles(w, &profiles))?;
        let (retained, users) = filter_users(profiles, &records, &filter);
        let (tracts, tract_tally) = filter_tracts(records, cfg.thresholds.min_tract_population);
        write_with(&dir.join("retained.csv"), |w| write_profiles(w, &retained))?;
        write_json(&dir.join("tracts.json"), &tracts)?;
        let summary = IngestSummary {
            parse,
            regions: index.len(),
            users_total,
            users_unassigned: unassigned,
            acs_tracts_incomplete: acs.missing.len(),
            users,
            tracts: tract_tally,
        };
        write_json(&dir.join("summary.json"), &summary)?;
        ctx.metadata(city, "ingest", &t)?;
        out.insert(city.to_string(), CityIngest { retained, summary });
    }
    Ok(out)
}

// ---------------------------------------------------------------- audit

/// `inequality.json`: the inequality report plus the configured income Gini
/// for comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityArtifact {
    #[serde(flatten)]
    pub report: InequalityReport,
    pub income_gini: Option<f64>,
}

pub fn audit(ctx: &Ctx) -> Result<(), CliError> {
    let ingested = ingest(ctx)?;
    for (city, data) in &ingested {
        let mut t = Timings::default();
        let counts: Vec<u64> = data.retained.iter().map(|p| p.ping_count).collect();
        let report = t
            .time("inequality", || InequalityReport::from_counts(&counts, ctx.cfg().thresholds.lorenz_steps))
            .map_err(|e| CliError::Data(format!("{city}: {e}")))?;
        let dir = ctx.dir(city, "audit");
        if ctx.plots {
            write_text(&dir.join("lorenz.svg"), &lorenz_svg(&report, city))?;
        }
        let artifact = InequalityArtifact {
            report,
            income_gini: ctx.cfg().cities[city].income_gini,
        };
        write_json(&dir.join("inequality.json"), &artifact)?;
        ctx.metadata(city, "audit", &t)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- networks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub params: NetworkParams,
    pub users: usize,
    pub nodes_in_universe: usize,
    /// Total trip weight of the all-user network.
    pub all_weight: u64,
    pub backbone_weight: u64,
    pub group_weights: BTreeMap<String, u64>,
    pub correlations: Vec<GroupCorrelation>,
}

/// Per city: raw and cleaned edge lists per production group under
/// `edges/` and `backbone/`, `correlations.csv`, `degree_matrix.csv` and
/// `summary.json`.
pub fn networks(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let mut inputs = BTreeMap::new();
    for city in cfg.cities.keys() {
        inputs.insert(city.as_str(), (read_retained(ctx, city)?, read_tracts(ctx, city)?));
    }
    require_raw_inputs(ctx, "networks")?;
    let mut t = Timings::default();
    let index = t.time("regions", || load_regions(ctx, "networks"))?;
    let (users, _) = t.time("parse_and_join", || load_users(ctx, &index, "networks"))?;
    let params = cfg.thresholds.network();

    for (city, (retained, tracts)) in inputs {
        let mut ct = Timings(t.0.clone());
        let keep: BTreeSet<&str> = tracts.iter().map(|r| r.tract_geoid.as_str()).collect();
        let universe = node_universe(&index, params.level, |geoid| keep.contains(tract_of(geoid)));
        let analysis = ct
            .time("analyze", || analyze(&users, &retained, &index, universe, &params))
            .map_err(|e| CliError::from(e))?;
        let dir = ctx.dir(city, "networks");
        for (raw, clean) in analysis.groups.iter().chain([&analysis.all]).zip(analysis.cleaned.iter().chain([&analysis.cleaned_all])) {
            write_with(&dir.join("edges").join(format!("{}.csv", raw.group)), |w| raw.write_edges(w))?;
            write_with(&dir.join("backbone").join(format!("{}.csv", clean.group)), |w| clean.write_edges(w))?;
        }
        write_with(&dir.join("correlations.csv"), |w| write_correlations(w, &analysis.correlations))?;
        let nets: Vec<_> = analysis.cleaned.iter().chain([&analysis.cleaned_all]).cloned().collect();
        let labels: Vec<String> = nets.iter().map(|n| n.group.clone()).collect();
        let matrix = ct.time("degree_matrix", || degree_matrix(&nets, &analysis.universe));
        write_with(&dir.join("degree_matrix.csv"), |w| write_matrix(w, &labels, &matrix))?;
        let summary = NetworkSummary {
            params,
            users: retained.len(),
            nodes_in_universe: analysis.universe.len(),
            all_weight: analysis.all.total_weight(),
            backbone_weight: analysis.cleaned_all.total_weight(),
            group_weights: databias::networks::group_weights(&analysis),
            correlations: analysis.correlations.clone(),
        };
        write_json(&dir.join("summary.json"), &summary)?;
        ctx.metadata(city, "networks", &ct)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- model

/// `cv.json`: cross-validation outcome plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub features: Vec<String>,
    pub grid_size: usize,
    pub cv: CvConfig,
    pub report: CvReport,
    pub samples: MedianTally,
}

/// `_all/model/generalization.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationArtifact {
    pub city_matrix: ScoreMatrix,
    pub leave_one_out: Vec<LeaveOneOutScore>,
}

/// Per city: `samples.json`, `model.json` (the final forest) and `cv.json`.
/// With two or more cities also the cross-city score matrix and the
/// leave-one-city-out scores under `_all/model/`.
pub fn model(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let spec = cfg.model.feature_spec()?;
    let grid = cfg.model.grid();
    let cv = ctx.loaded.cv();
    let mut t = Timings::default();
    let mut cities = Vec::new();
    let mut tallies = Vec::new();
    for city in cfg.cities.keys() {
        let retained = read_retained(ctx, city)?;
        let tracts = read_tracts(ctx, city)?;
        let (samples, tally) = build_samples(&retained, &tracts, &spec, cfg.thresholds.min_users_per_tract)?;
        cities.push(CitySamples {
            city: city.clone(),
            samples,
        });
        tallies.push(tally);
    }
    let fits = t.time("nested_cv", || fit_cities(&cities, &grid, &cv))?;
    for ((c, fit), tally) in cities.iter().zip(&fits).zip(tallies) {
        let dir = ctx.dir(&c.city, "model");
        write_json(&dir.join("samples.json"), &c.samples)?;
        write_text(&dir.join("model.json"), &fit.model.to_json()?)?;
        let artifact = ModelArtifact {
            features: spec.names(),
            grid_size: grid.len(),
            cv,
            report: fit.report.clone(),
            samples: tally,
        };
        write_json(&dir.join("cv.json"), &artifact)?;
        ctx.metadata(&c.city, "model", &t)?;
    }
    if cities.len() >= 2 {
        let matrix = t.time("city_matrix", || city_matrix(&cities, &fits))?;
        let loo = t.time("leave_one_out", || leave_one_out(&cities, &grid, &cv))?;
        let dir = ctx.dir(ALL_CITIES, "model");
        write_with(&dir.join("city_matrix.csv"), |w| matrix.write_csv(w))?;
        write_with(&dir.join("leave_one_out.csv"), |w| {
            let mut csv = String::from("city,train_r2,test_r2\n");
            for s in &loo {
                csv.push_str(&format!("{},{:.6},{:.6}\n", s.city, s.train_r2, s.test_r2));
            }
            w.write_all(csv.as_bytes()).map_err(|e| databias::Error::io("leave_one_out.csv", e))
        })?;
        write_json(
            &dir.join("generalization.json"),
            &GeneralizationArtifact {
                city_matrix: matrix,
                leave_one_out: loo,
            },
        )?;
        ctx.metadata(ALL_CITIES, "model", &t)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- shap

/// Per city: `attributions.csv` (one row per tract and feature) and
/// `shap.json`.
pub fn shap(ctx: &Ctx) -> Result<(), CliError> {
    for city in ctx.cfg().cities.keys() {
        let mut t = Timings::default();
        let dir = ctx.dir(city, "model");
        let model_path = upstream(dir.join("model.json"), "model")?;
        let artifact: ModelArtifact = read_json(&upstream(dir.join("cv.json"), "model")?)?;
        let samples: Vec<TractSample> = read_json(&upstream(dir.join("samples.json"), "model")?)?;
        let text = fs::read_to_string(&model_path).map_err(|e| io_err(&model_path, e))?;
        let model = ForestModel::from_json(&text)?;
        let attr: CityAttribution = t.time("tree_shap", || attribute_city(city, &model, &samples, &artifact.features))?;
        let out = ctx.dir(city, "shap");
        write_with(&out.join("attributions.csv"), |w| write_attribution_csv(w, &attr))?;
        write_json(&out.join("shap.json"), &attr)?;
        if ctx.plots {
            write_text(&out.join("beeswarm.svg"), &beeswarm_svg(&attr, &samples))?;
        }
        ctx.metadata(city, "shap", &t)?;
    }
    Ok(())
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub users: usize,
    pub pings: u64,
    pub gini_expected: f64,
    pub gini_realized: f64,
}

/// Generates the configured synthetic cities and writes them to the
/// configured input paths (pings, boundaries, ACS tables) plus the
/// ground-truth manifest.
pub fn synth(ctx: &Ctx) -> Result<(), CliError> {
    let cfg = ctx.cfg();
    let input = &cfg.input;
    let acs = input
        .acs
        .as_ref()
        .ok_or_else(|| CliError::Config("input.acs: required by `synth` but not set".into()))?;
    let pings = ctx.loaded.target_path("input.pings", input.pings.as_ref())?;
    let manifest = match &input.manifest {
        Some(p) => ctx.loaded.resolve(p),
        None => pings.with_file_name("manifest.json"),
    };
    let paths = FixturePaths {
        boundaries: ctx.loaded.target_path("input.boundaries", input.boundaries.as_ref())?,
        acs: AcsPaths {
            poverty: ctx.loaded.resolve(&acs.poverty),
            age_sex: ctx.loaded.resolve(&acs.age_sex),
            education: ctx.loaded.resolve(&acs.education),
        },
        pings,
        manifest,
    };
    let mut t = Timings::default();
    let mut parts = Vec::new();
    for sc in cfg.synth_cities() {
        let part = t.time("generate", || -> databias::Result<SynthFixture> {
            let city = gen_city(&sc)?;
            let (pings, manifest) = gen_users_and_pings(&city)?;
            Ok(SynthFixture { city, pings, manifest })
        })?;
        parts.push(part);
    }
    t.time("write", || emit_fixture(&parts, &paths))?;
    for p in &parts {
        let m = &p.manifest;
        let summary = SynthSummary {
            users: m.users.len(),
            pings: m.total_pings,
            gini_expected: m.gini_expected,
            gini_realized: m.gini_realized,
        };
        let name = &p.city.config.city;
        write_json(&ctx.dir(name, "synth").join("summary.json"), &summary)?;
        ctx.metadata(name, "synth", &t)?;
    }
    Ok(())
}

pub(crate) fn stage_metadata(ctx: &Ctx, city: &str, stage: &str) -> Result<(), CliError> {
    ctx.metadata(city, stage, &Timings::default())
}
