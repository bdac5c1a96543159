//! Client for the public ACS API with an on-disk cache.
//!
//! The API answers with a JSON array of rows whose first row is the header.
//! Each table is stored as one CSV per (year, table, counties) key so that
//! later runs never touch the network.

use std::fs;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchSpec {
    /// URL with `{year}`, `{table}`, `{state}` and `{county}` placeholders.
    pub endpoint: String,
    pub year: u32,
    pub table_ids: Vec<String>,
    /// Five-digit state+county FIPS codes.
    pub counties: Vec<String>,
    pub cache_dir: PathBuf,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_attempts() -> u32 {
    4
}

fn default_backoff_ms() -> u64 {
    500
}

impl FetchSpec {
    pub const CENSUS_ENDPOINT: &'static str = "https://api.census.gov/data/{year}/acs/acs5/subject?get=group({table})&for=tract:*&in=state:{state}%20county:{county}";

    fn cache_path(&self, table: &str) -> PathBuf {
        self.cache_dir.join(format!(
            "acs_{}_{}_{}.csv",
            self.year,
            table,
            self.counties.join("-")
        ))
    }

    fn url(&self, table: &str, county_fips: &str) -> Result<String> {
        if county_fips.len() != 5 || !county_fips.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::Config(format!(
                "county code {county_fips:?} is not a 5-digit FIPS code"
            )));
        }
        Ok(self
            .endpoint
            .replace("{year}", &self.year.to_string())
            .replace("{table}", table)
            .replace("{state}", &county_fips[..2])
            .replace("{county}", &county_fips[2..]))
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(Error),
}

fn get_once(agent: &ureq::Agent, url: &str, table: &str) -> Attempt {
    match agent.get(url).call() {
        Ok(resp) => match resp.into_string() {
            Ok(body) => Attempt::Done(body),
            Err(e) => Attempt::Retry(e.to_string()),
        },
        Err(ureq::Error::Status(404, _)) => {
            Attempt::Fatal(Error::Data(format!("ACS table {table} not found (HTTP 404)")))
        }
        Err(ureq::Error::Status(code, _)) if code >= 500 || code == 429 => {
            Attempt::Retry(format!("HTTP {code}"))
        }
        Err(ureq::Error::Status(code, _)) => Attempt::Fatal(Error::Data(format!(
            "ACS request for table {table} rejected with HTTP {code}"
        ))),
        Err(ureq::Error::Transport(t)) => Attempt::Retry(t.to_string()),
    }
}

fn get_with_retry(agent: &ureq::Agent, spec: &FetchSpec, url: &str, table: &str) -> Result<String> {
    let attempts = spec.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            thread::sleep(Duration::from_millis(spec.backoff_ms << (attempt - 1)));
        }
        match get_once(agent, url, table) {
            Attempt::Done(body) => return Ok(body),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(msg) => last = msg,
        }
    }
    Err(Error::Retryable {
        attempts,
        message: format!("table {table}: {last}"),
    })
}

fn rows_from_payload(body: &str, table: &str) -> Result<Vec<Vec<String>>> {
    let parsed: Vec<Vec<Option<String>>> = serde_json::from_str(body)
        .map_err(|e| Error::Data(format!("malformed ACS payload for table {table}: {e}")))?;
    if parsed.is_empty() {
        return Err(Error::Data(format!("empty ACS payload for table {table}")));
    }
    let width = parsed[0].len();
    if parsed.iter().any(|r| r.len() != width) {
        return Err(Error::Data(format!("ragged ACS payload for table {table}")));
    }
    Ok(parsed
        .into_iter()
        .map(|row| row.into_iter().map(Option::unwrap_or_default).collect())
        .collect())
}

/// Downloads each table for all configured counties into one CSV per table
/// and returns the CSV paths in `table_ids` order. Cached files are returned
/// as-is without any network access.
pub fn fetch_acs(spec: &FetchSpec) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&spec.cache_dir).map_err(|e| Error::io(&spec.cache_dir, e))?;
    let agent = ureq::AgentBuilder::new()
        .timeout(Duration::from_secs(60))
        .build();
    let mut paths = Vec::with_capacity(spec.table_ids.len());
    for table in &spec.table_ids {
        let path = spec.cache_path(table);
        if path.exists() {
            paths.push(path);
            continue;
        }
        let mut header: Option<Vec<String>> = None;
        let mut body_rows = Vec::new();
        for county in &spec.counties {
            let url = spec.url(table, county)?;
            let body = get_with_retry(&agent, spec, &url, table)?;
            let mut rows = rows_from_payload(&body, table)?.into_iter();
            let this_header = rows.next().unwrap_or_default();
            match &header {
                Some(h) if *h != this_header => {
                    return Err(Error::Data(format!(
                        "table {table} header differs between counties"
                    )))
                }
                Some(_) => {}
                None => header = Some(this_header),
            }
            body_rows.extend(rows);
        }
        let mut writer = csv::Writer::from_writer(Vec::new());
        if let Some(h) = header {
            writer.write_record(&h)?;
        }
        for row in body_rows {
            writer.write_record(&row)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::Data(e.to_string()))?;
        let tmp = path.with_extension("csv.partial");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}
