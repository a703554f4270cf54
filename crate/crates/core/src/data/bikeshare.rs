//! Trip-record ingestion into a station-by-day rental count matrix, and the
//! per-station regression tasks built from it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::Path;

use chrono::{Days, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Rentals per (day, station). Rows follow `dates`, columns follow
/// `station_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationDayMatrix {
    pub counts: Vec<Vec<u64>>,
    pub station_ids: Vec<String>,
    pub dates: Vec<NaiveDate>,
}

impl StationDayMatrix {
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stations(&self) -> usize {
        self.station_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.dates.len()
            || self
                .counts
                .iter()
                .any(|r| r.len() != self.station_ids.len())
        {
            return Err(Error::Data(
                "count matrix shape does not match labels".into(),
            ));
        }
        if self.dates.windows(2).any(|w| w[1] != w[0] + Days::new(1)) {
            return Err(Error::Data(
                "dates must be contiguous and increasing".into(),
            ));
        }
        Ok(())
    }
}

/// Inclusive calendar window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub from: NaiveDate,
    pub to: NaiveDate,
}

impl DateWindow {
    pub fn new(from: NaiveDate, to: NaiveDate) -> Result<Self> {
        if to < from {
            return Err(Error::Input(format!(
                "window end {to} precedes start {from}"
            )));
        }
        Ok(Self { from, to })
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        self.from <= d && d <= self.to
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        self.from
            .iter_days()
            .take_while(|d| *d <= self.to)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    pub col_start_time: String,
    pub col_start_station: String,
    /// chrono format string; when absent ISO-8601 forms are tried, then
    /// `M/D/YYYY H:MM`.
    pub time_format: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            col_start_time: "Start date".into(),
            col_start_station: "Start station number".into(),
            time_format: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: usize,
    pub counted: usize,
    pub outside_window: usize,
    pub skipped: usize,
}

const ISO_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
];
const US_FORMATS: [&str; 2] = ["%m/%d/%Y %H:%M", "%m/%d/%Y %H:%M:%S"];

/// Calendar date of a trip start timestamp.
pub fn parse_start_date(raw: &str, format: Option<&str>) -> Option<NaiveDate> {
    let s = raw.trim();
    if let Some(f) = format {
        return NaiveDateTime::parse_from_str(s, f)
            .map(|t| t.date())
            .or_else(|_| NaiveDate::parse_from_str(s, f))
            .ok();
    }
    ISO_FORMATS
        .iter()
        .chain(US_FORMATS.iter())
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|t| t.date())
        .or_else(|| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
}

/// Accumulates trip counts from any number of CSV sources.
pub struct TripCounter {
    window: DateWindow,
    opts: IngestOptions,
    counts: BTreeMap<(NaiveDate, String), u64>,
    stats: IngestStats,
}

impl TripCounter {
    pub fn new(window: DateWindow, opts: IngestOptions) -> Self {
        Self {
            window,
            opts,
            counts: BTreeMap::new(),
            stats: IngestStats::default(),
        }
    }

    pub fn add_reader<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Data(format!("missing required column {name:?}")))
        };
        let time_col = find(&self.opts.col_start_time)?;
        let station_col = find(&self.opts.col_start_station)?;
        for rec in rdr.records() {
            self.stats.rows += 1;
            let Ok(rec) = rec else {
                self.stats.skipped += 1;
                continue;
            };
            let date = rec
                .get(time_col)
                .and_then(|t| parse_start_date(t, self.opts.time_format.as_deref()));
            let station = rec
                .get(station_col)
                .map(str::trim)
                .filter(|s| !s.is_empty());
            let (Some(date), Some(station)) = (date, station) else {
                self.stats.skipped += 1;
                continue;
            };
            if !self.window.contains(date) {
                self.stats.outside_window += 1;
                continue;
            }
            *self.counts.entry((date, station.to_string())).or_default() += 1;
            self.stats.counted += 1;
        }
        Ok(())
    }

    pub fn add_path(&mut self, path: &Path) -> Result<()> {
        let f = std::fs::File::open(path)?;
        self.add_reader(f)
    }

    /// Final matrix over every day of the window. Stations with no rentals
    /// in the window are absent.
    pub fn finish(self) -> (StationDayMatrix, IngestStats) {
        if self.stats.skipped > 0 {
            log::warn!("skipped {} unparseable trip rows", self.stats.skipped);
        }
        let dates = self.window.days();
        let stations: BTreeSet<&String> = self.counts.keys().map(|(_, s)| s).collect();
        let station_ids: Vec<String> = stations.into_iter().cloned().collect();
        let col: BTreeMap<&str, usize> = station_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut counts = vec![vec![0u64; station_ids.len()]; dates.len()];
        for ((date, station), c) in &self.counts {
            let row = (*date - self.window.from).num_days() as usize;
            counts[row][col[station.as_str()]] = *c;
        }
        (
            StationDayMatrix {
                counts,
                station_ids,
                dates,
            },
            self.stats,
        )
    }
}

/// Counts rentals by start day and start station across `paths`.
pub fn ingest_trips<P: AsRef<Path>>(
    paths: &[P],
    window: DateWindow,
    opts: &IngestOptions,
) -> Result<(StationDayMatrix, IngestStats)> {
    let mut counter = TripCounter::new(window, opts.clone());
    for p in paths {
        counter.add_path(p.as_ref())?;
    }
    Ok(counter.finish())
}

/// CSV files directly inside `dir`, in name order.
pub fn csv_files_in(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    Ok(files)
}

/// Header `date,<station ids...>`, then one row per date.
pub fn write_matrix_csv<W: std::io::Write>(m: &StationDayMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend(m.station_ids.iter().cloned());
    w.write_record(&header)?;
    for (date, row) in m.dates.iter().zip(&m.counts) {
        let mut rec = vec![date.format("%Y-%m-%d").to_string()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(input: R) -> Result<StationDayMatrix> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("date") {
        return Err(Error::Data(
            "matrix CSV must start with a date column".into(),
        ));
    }
    let station_ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or("").trim(), "%Y-%m-%d")
            .map_err(|e| Error::Data(format!("bad date in matrix CSV: {e}")))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("bad count in matrix CSV: {e}")))?;
        dates.push(date);
        counts.push(row);
    }
    let m = StationDayMatrix {
        counts,
        station_ids,
        dates,
    };
    m.validate()?;
    Ok(m)
}

/// One station's daily counts as the response, the other stations as
/// features, with `test_day` held out as the test point.
pub fn make_regression_task(
    m: &StationDayMatrix,
    response_station: usize,
    test_day: usize,
) -> Result<(Dataset, DVector<f64>, f64)> {
    let (days, stations) = (m.n_days(), m.n_stations());
    if response_station >= stations || test_day >= days {
        return Err(Error::Input(format!(
            "station {response_station} / day {test_day} out of range for {days}x{stations} matrix"
        )));
    }
    if stations < 2 || days < 2 {
        return Err(Error::Input(
            "need at least two stations and two days".into(),
        ));
    }
    let features: Vec<usize> = (0..stations).filter(|&s| s != response_station).collect();
    let train: Vec<usize> = (0..days).filter(|&d| d != test_day).collect();
    let x = DMatrix::from_fn(train.len(), features.len(), |i, j| {
        m.counts[train[i]][features[j]] as f64
    });
    let y = DVector::from_iterator(
        train.len(),
        train.iter().map(|&d| m.counts[d][response_station] as f64),
    );
    let x_new = DVector::from_iterator(
        features.len(),
        features.iter().map(|&s| m.counts[test_day][s] as f64),
    );
    let y_new = m.counts[test_day][response_station] as f64;
    Ok((Dataset::new(x, y)?, x_new, y_new))
}
