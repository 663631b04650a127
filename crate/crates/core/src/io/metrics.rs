use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{MetricsRecord, UserMetrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

impl Format {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// One CSV row: one user of one record.
#[derive(Debug, Serialize, Deserialize)]
struct MetricsRow {
    scheduler: String,
    seed: u64,
    user: usize,
    avg_delay_pck: f64,
    drop_rate: f64,
    avg_power_w: f64,
    idle_subband_frac: f64,
    overflow_frac: f64,
    avg_delay_s: f64,
    wasted_power_w: f64,
    slots: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct HistogramRow {
    scheduler: String,
    seed: u64,
    user: usize,
    queue: usize,
    slots: u64,
}

/// `runs.csv` → `runs.hist.csv`.
pub fn histogram_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.hist.csv"))
}

/// Writes records, replacing the file or appending to it. CSV output also
/// writes the queue histograms to [`histogram_path`].
pub fn write_metrics(records: &[MetricsRecord], path: &Path, format: Format, append: bool) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("no metrics records to write"));
    }
    match format {
        Format::Json => {
            let mut all = if append && path.exists() { read_metrics(path, format)? } else { Vec::new() };
            all.extend_from_slice(records);
            let text = serde_json::to_string_pretty(&all).map_err(|e| Error::parse(path, e))?;
            std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
        }
        Format::Csv => {
            let rows = records.iter().flat_map(|r| {
                r.users.iter().map(move |u| MetricsRow {
                    scheduler: r.scheduler.clone(),
                    seed: r.seed,
                    user: u.user,
                    avg_delay_pck: u.avg_delay_pck,
                    drop_rate: u.drop_rate,
                    avg_power_w: u.avg_power_w,
                    idle_subband_frac: r.idle_subband_frac,
                    overflow_frac: u.overflow_frac,
                    avg_delay_s: u.avg_delay_s,
                    wasted_power_w: u.wasted_power_w,
                    slots: r.slots,
                })
            });
            write_csv(path, rows, append)?;
            let hist = records.iter().flat_map(|r| {
                r.users.iter().flat_map(move |u| {
                    u.histogram.iter().enumerate().map(move |(q, &slots)| HistogramRow {
                        scheduler: r.scheduler.clone(),
                        seed: r.seed,
                        user: u.user,
                        queue: q,
                        slots,
                    })
                })
            });
            write_csv(&histogram_path(path), hist, append)
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>, append: bool) -> Result<()> {
    let header = !(append && path.exists() && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false));
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(file);
    for row in rows {
        w.serialize(row).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::parse(path, e))).collect()
}

/// Reads records written by [`write_metrics`]. In CSV a row with user 0
/// starts a new record.
pub fn read_metrics(path: &Path, format: Format) -> Result<Vec<MetricsRecord>> {
    match format {
        Format::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
        }
        Format::Csv => {
            let rows: Vec<MetricsRow> = read_csv(path)?;
            let mut records: Vec<MetricsRecord> = Vec::new();
            for row in rows {
                if row.user == 0 || records.is_empty() {
                    records.push(MetricsRecord {
                        scheduler: row.scheduler.clone(),
                        seed: row.seed,
                        slots: row.slots,
                        idle_subband_frac: row.idle_subband_frac,
                        users: Vec::new(),
                    });
                }
                let rec = records.last_mut().expect("pushed above");
                if rec.scheduler != row.scheduler || rec.seed != row.seed || rec.users.len() != row.user {
                    return Err(Error::parse(path, format!("row for user {} of {}/{} is out of order", row.user, row.scheduler, row.seed)));
                }
                rec.users.push(UserMetrics {
                    user: row.user,
                    avg_delay_pck: row.avg_delay_pck,
                    avg_delay_s: row.avg_delay_s,
                    drop_rate: row.drop_rate,
                    overflow_frac: row.overflow_frac,
                    avg_power_w: row.avg_power_w,
                    wasted_power_w: row.wasted_power_w,
                    histogram: Vec::new(),
                });
            }
            let hist_path = histogram_path(path);
            if hist_path.exists() {
                let rows: Vec<HistogramRow> = read_csv(&hist_path)?;
                let mut slots = records.iter_mut().flat_map(|r| {
                    let (name, seed) = (r.scheduler.clone(), r.seed);
                    r.users.iter_mut().map(move |u| (name.clone(), seed, u))
                });
                let mut current = slots.next();
                for row in rows {
                    if row.queue == 0 && current.as_ref().is_some_and(|(_, _, u)| !u.histogram.is_empty()) {
                        current = slots.next();
                    }
                    match current.as_mut() {
                        Some((name, seed, u)) if *name == row.scheduler && *seed == row.seed && u.user == row.user && u.histogram.len() == row.queue => {
                            u.histogram.push(row.slots)
                        }
                        _ => {
                            return Err(Error::parse(
                                &hist_path,
                                format!("histogram row {}/{}/user {}/queue {} does not match the metrics file", row.scheduler, row.seed, row.user, row.queue),
                            ))
                        }
                    }
                }
            }
            Ok(records)
        }
    }
}
