//! Smart-meter frames: CSV ingestion and a synthetic load generator.
//!
//! A frame holds one 15-minute slot. Apartment `a` (0-based, first 70
//! columns) is placed at position `a` of a length-512 vector; all other
//! positions are zero.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use thiserror::Error;

pub const FRAME_LEN: usize = 512;
pub const APARTMENTS: usize = 70;
/// Slots per day at a 15-minute cadence.
pub const SLOTS_PER_DAY: u32 = 96;
pub const DEFAULT_SYNTHETIC_SEED: u64 = 2020;

#[derive(Debug, Error)]
pub enum MeterError {
    #[error("dataset missing: {path}: {source}")]
    DatasetMissing {
        path: String,
        source: std::io::Error,
    },
    #[error("row {row}, column {col}: cannot parse {value:?} as a reading")]
    ParseError { row: u64, col: usize, value: String },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("CSV has no apartment columns")]
    NoColumns,
    #[error("invalid generator parameters: {0}")]
    BadGenerator(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeterFrame {
    /// 15-minute slot counted from the start of the dataset.
    pub slot: u32,
    pub readings: Vec<f64>,
}

impl MeterFrame {
    pub fn nonzeros(&self) -> usize {
        self.readings.iter().filter(|v| **v != 0.0).count()
    }
}

/// Position of apartment `a` inside a frame.
pub fn apartment_position(a: usize) -> usize {
    a
}

fn is_time_column(name: &str) -> bool {
    matches!(
        name.trim().to_ascii_lowercase().as_str(),
        "time" | "timestamp" | "date" | "datetime" | "slot"
    )
}

fn is_missing(cell: &str) -> bool {
    matches!(
        cell.trim().to_ascii_lowercase().as_str(),
        "" | "na" | "nan" | "null"
    )
}

/// Reads a CSV with a header row and one column per apartment. A leading
/// `time`/`timestamp`/`date`/`datetime`/`slot` column is skipped. Missing
/// cells become 0 with a warning.
pub fn ingest_meter_csv(path: &Path) -> Result<Vec<MeterFrame>, MeterError> {
    let file = std::fs::File::open(path).map_err(|source| MeterError::DatasetMissing {
        path: path.display().to_string(),
        source,
    })?;
    read_meter_csv(file)
}

pub fn read_meter_csv<R: std::io::Read>(reader: R) -> Result<Vec<MeterFrame>, MeterError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let skip = usize::from(headers.get(0).is_some_and(is_time_column));
    let columns = headers.len().saturating_sub(skip).min(APARTMENTS);
    if columns == 0 {
        return Err(MeterError::NoColumns);
    }
    if columns < APARTMENTS {
        log::warn!("only {columns} apartment columns; the rest of the frame stays zero");
    }

    let mut frames = Vec::new();
    let mut missing = 0usize;
    for (slot, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec.position().map_or(slot as u64 + 2, |p| p.line());
        let mut readings = vec![0.0; FRAME_LEN];
        for a in 0..columns {
            let cell = rec.get(skip + a).unwrap_or("");
            if is_missing(cell) {
                missing += 1;
                continue;
            }
            let value: f64 = cell.trim().parse().map_err(|_| MeterError::ParseError {
                row,
                col: skip + a + 1,
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(MeterError::ParseError {
                    row,
                    col: skip + a + 1,
                    value: cell.to_string(),
                });
            }
            readings[apartment_position(a)] = value;
        }
        frames.push(MeterFrame {
            slot: slot as u32,
            readings,
        });
    }
    if missing > 0 {
        log::warn!("{missing} missing readings set to 0");
    }
    Ok(frames)
}

/// Log-normal household loads with a daily cycle.
///
/// Apartment `a` has a base load `median * exp(sigma g_a)`; the reading in
/// slot `t` is `base_a * (1 + 0.5 sin(2 pi t / 96 - pi / 2)) * exp(0.25 g)`.
/// Every reading is strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMeter {
    pub seed: u64,
    /// Median base load in kW.
    pub median_kw: f64,
    /// Log-scale spread of base loads across apartments.
    pub sigma: f64,
}

impl Default for SyntheticMeter {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SYNTHETIC_SEED,
            median_kw: 0.4,
            sigma: 1.0,
        }
    }
}

impl SyntheticMeter {
    pub fn frames(&self, count: usize) -> Result<Vec<MeterFrame>, MeterError> {
        if !self.median_kw.is_finite()
            || self.median_kw <= 0.0
            || !self.sigma.is_finite()
            || self.sigma < 0.0
        {
            return Err(MeterError::BadGenerator(format!(
                "median {} and sigma {} must be positive",
                self.median_kw, self.sigma
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let base_dist = LogNormal::new(self.median_kw.ln(), self.sigma)
            .map_err(|e| MeterError::BadGenerator(e.to_string()))?;
        let base: Vec<f64> = (0..APARTMENTS)
            .map(|_| base_dist.sample(&mut rng))
            .collect();
        Ok((0..count as u32)
            .map(|slot| {
                let phase = 2.0 * std::f64::consts::PI * (slot % SLOTS_PER_DAY) as f64
                    / SLOTS_PER_DAY as f64;
                let daily = 1.0 + 0.5 * (phase - std::f64::consts::FRAC_PI_2).sin();
                let mut readings = vec![0.0; FRAME_LEN];
                for (a, b) in base.iter().enumerate() {
                    let g: f64 = rng.sample(StandardNormal);
                    readings[apartment_position(a)] = b * daily * (0.25 * g).exp();
                }
                MeterFrame { slot, readings }
            })
            .collect())
    }
}
