#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

/// Two small synthetic cities with opposite poverty effects and a one-entry
/// model grid, so a full pipeline run takes seconds.
pub const SMALL_CONFIG: &str = r#"
output_dir = "out"

[input]
pings = "fixture/pings.csv"
boundaries = "fixture/boundaries.geojson"

[input.acs]
poverty = "fixture/acs_s1701.csv"
age_sex = "fixture/acs_s0101.csv"
education = "fixture/acs_s1501.csv"

[cities.alpha]
counties = ["99001"]
tz_offset_hours = -5
income_gini = 0.48

[cities.beta]
counties = ["99002"]
tz_offset_hours = -5

[model]
k_outer = 5
grid = [{ n_trees = 20, max_depth = 6, min_leaf = 3, max_features = "all" }]

[[synth]]
city = "alpha"
county = "99001"
n_tracts = 60
users_per_tract = { min = 20, max = 30 }
days = 14

[[synth]]
city = "beta"
county = "99002"
n_tracts = 60
users_per_tract = { min = 20, max = 30 }
days = 14
origin_lat = 41.0
effects = [{ feature = "poverty", percent_at_max = 10.0 }]
"#;

pub const STAGES: [&str; 6] = ["synth", "audit", "networks", "model", "shap", "report"];

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("audit.toml");
    fs::write(&path, text).unwrap();
    path
}

/// Runs one subcommand in-process and returns its exit code.
pub fn databias(config: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["databias".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--config".into());
    argv.push(config.display().to_string());
    databias_cli::main_with_args(argv)
}

/// Every file under `root`, relative and sorted.
pub fn files(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
