use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One timestamped GPS observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PingRecord {
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
}

impl PingRecord {
    pub fn new(user_id: impl Into<String>, timestamp: i64, lat: f64, lon: f64) -> Self {
        Self {
            user_id: user_id.into(),
            timestamp,
            lat,
            lon,
        }
    }

    pub fn has_valid_coordinates(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Column names and delimiter of a ping file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PingSchema {
    pub user_id: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    /// Single-byte field delimiter, `,` for CSV or `\t` for TSV.
    pub delimiter: char,
}

impl Default for PingSchema {
    fn default() -> Self {
        Self {
            user_id: "user_id".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            delimiter: ',',
        }
    }
}

impl PingSchema {
    pub fn tsv() -> Self {
        Self {
            delimiter: '\t',
            ..Self::default()
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .ok_or_else(|| Error::Config(format!("delimiter {:?} is not a single ASCII byte", self.delimiter)))
    }
}

/// Half-open study period `[start, end)` in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: i64,
    pub end: i64,
}

impl StudyWindow {
    pub fn contains(&self, timestamp: i64) -> bool {
        (self.start..self.end).contains(&timestamp)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub rows: u64,
    pub accepted: u64,
    pub malformed: u64,
    pub out_of_window: u64,
}

/// Streaming reader over a delimited ping file. Yields only well-formed rows
/// inside the study window; everything else is tallied in [`ParseStats`].
pub struct PingReader<R: Read> {
    reader: csv::Reader<R>,
    columns: [usize; 4],
    window: Option<StudyWindow>,
    record: csv::ByteRecord,
    stats: ParseStats,
}

impl<R: Read> PingReader<R> {
    pub fn new(source: R, schema: &PingSchema, window: Option<StudyWindow>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(schema.delimiter_byte()?)
            .flexible(true)
            .from_reader(source);
        let headers = reader.byte_headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name.as_bytes())
                .ok_or_else(|| Error::Config(format!("ping file has no column named {name:?}")))
        };
        let columns = [
            find(&schema.user_id)?,
            find(&schema.timestamp)?,
            find(&schema.lat)?,
            find(&schema.lon)?,
        ];
        Ok(Self {
            reader,
            columns,
            window,
            record: csv::ByteRecord::new(),
            stats: ParseStats::default(),
        })
    }

    pub fn stats(&self) -> ParseStats {
        self.stats
    }

    fn decode(&self) -> Option<PingRecord> {
        let field = |i: usize| self.record.get(self.columns[i]).and_then(|b| std::str::from_utf8(b).ok());
        let user_id = field(0)?.trim();
        if user_id.is_empty() {
            return None;
        }
        let ts_raw = field(1)?.trim();
        let timestamp = match ts_raw.parse::<i64>() {
            Ok(t) => t,
            Err(_) => {
                let t = ts_raw.parse::<f64>().ok().filter(|t| t.is_finite())?;
                t.floor() as i64
            }
        };
        let lat = field(2)?.trim().parse::<f64>().ok()?;
        let lon = field(3)?.trim().parse::<f64>().ok()?;
        let ping = PingRecord::new(user_id, timestamp, lat, lon);
        ping.has_valid_coordinates().then_some(ping)
    }
}

impl<R: Read> Iterator for PingReader<R> {
    type Item = Result<PingRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.reader.read_byte_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {}
                Err(e) if e.is_io_error() => return Some(Err(e.into())),
                Err(_) => {
                    self.stats.rows += 1;
                    self.stats.malformed += 1;
                    continue;
                }
            }
            self.stats.rows += 1;
            let Some(ping) = self.decode() else {
                self.stats.malformed += 1;
                continue;
            };
            if self.window.is_some_and(|w| !w.contains(ping.timestamp)) {
                self.stats.out_of_window += 1;
                continue;
            }
            self.stats.accepted += 1;
            return Some(Ok(ping));
        }
    }
}

/// Reads a whole ping stream, in stream order.
pub fn parse_pings<R: Read>(
    source: R,
    schema: &PingSchema,
    window: Option<StudyWindow>,
) -> Result<(Vec<PingRecord>, ParseStats)> {
    let mut reader = PingReader::new(source, schema, window)?;
    let records = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok((records, reader.stats()))
}

/// Writes pings with the schema's header and delimiter. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_pings<W: Write>(sink: W, pings: &[PingRecord], schema: &PingSchema) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .from_writer(sink);
    writer.write_record([&schema.user_id, &schema.timestamp, &schema.lat, &schema.lon])?;
    for p in pings {
        writer.write_record([
            p.user_id.as_str(),
            &p.timestamp.to_string(),
            &p.lat.to_string(),
            &p.lon.to_string(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io("<ping sink>", e))
}
