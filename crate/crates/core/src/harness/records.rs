//! Result records, error histograms and their CSV/JSON emission.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::SdeMode;
use crate::error::{OnnError, Result};

/// Which experiment produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Routine {
    SweepK,
    SweepScale,
    SweepNoise,
    RandomBatch,
    SingleInvert,
    EnergyInvert,
    DynamicsInvert,
}

impl Routine {
    pub fn as_str(self) -> &'static str {
        match self {
            Routine::SweepK => "sweep_k",
            Routine::SweepScale => "sweep_scale",
            Routine::SweepNoise => "sweep_noise",
            Routine::RandomBatch => "random_batch",
            Routine::SingleInvert => "single_invert",
            Routine::EnergyInvert => "energy_invert",
            Routine::DynamicsInvert => "dynamics_invert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Energy,
    #[default]
    Dynamics,
}

impl std::str::FromStr for Method {
    type Err = OnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "energy" | "grid" => Ok(Method::Energy),
            "dynamics" | "sde" => Ok(Method::Dynamics),
            other => Err(OnnError::Parse(format!("unknown method '{other}'"))),
        }
    }
}

/// One experiment cell outcome. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub routine: Routine,
    pub dim: usize,
    /// Max entry magnitude of the inverted matrix.
    pub scale: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "Kn")]
    pub kn: f64,
    /// Integration steps; empty for the energy method.
    #[serde(rename = "Ns")]
    pub ns: Option<u64>,
    pub dt: Option<f64>,
    pub seed: Option<u64>,
    pub method: Method,
    pub rel_err_pct: Option<f64>,
    pub max_phase: Option<f64>,
    pub wall_s: Option<f64>,
    /// Warning names joined with `;`.
    pub flags: String,
    pub mode: Option<SdeMode>,
    pub burn_in: Option<f64>,
    pub stride: Option<u64>,
    pub grid_points: Option<usize>,
    pub window: Option<String>,
    pub matrix_seed: Option<u64>,
    pub matrix_draws: Option<usize>,
    pub matrix_hash: String,
    pub failure: Option<String>,
}

impl ResultRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    /// `None` for the open overflow bin.
    pub hi: Option<f64>,
    pub count: usize,
}

/// Error distribution for one `Kn` of a batch: equal-width bins over
/// `[0, limit)` plus an overflow bin for everything at or above `limit`.
/// Cells without an error value count as overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    #[serde(rename = "Kn")]
    pub kn: f64,
    pub bins: Vec<HistogramBin>,
}

/// Upper edge of the regular bins, in percent.
pub const OVERFLOW_PCT: f64 = 120.0;

impl ErrorHistogram {
    pub fn new(kn: f64, bin_width: f64) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width <= OVERFLOW_PCT) {
            return Err(OnnError::InvalidParameter(format!(
                "histogram bin width must lie in (0, 120], got {bin_width}"
            )));
        }
        let n = (OVERFLOW_PCT / bin_width).ceil() as usize;
        let mut bins: Vec<HistogramBin> = (0..n)
            .map(|i| HistogramBin {
                lo: i as f64 * bin_width,
                hi: Some(((i + 1) as f64 * bin_width).min(OVERFLOW_PCT)),
                count: 0,
            })
            .collect();
        bins.push(HistogramBin {
            lo: OVERFLOW_PCT,
            hi: None,
            count: 0,
        });
        Ok(Self { kn, bins })
    }

    pub fn add(&mut self, rel_err_pct: Option<f64>) {
        let idx = match rel_err_pct {
            Some(e) if e < OVERFLOW_PCT => self
                .bins
                .iter()
                .position(|b| b.hi.is_some_and(|hi| e < hi))
                .unwrap_or(self.bins.len() - 1),
            _ => self.bins.len() - 1,
        };
        self.bins[idx].count += 1;
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }

    pub fn overflow(&self) -> usize {
        self.bins.last().map_or(0, |b| b.count)
    }

    /// Fraction of cells with error strictly below `pct`, counted from bins
    /// whose upper edge does not exceed `pct`.
    pub fn fraction_below(&self, pct: f64) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let n: usize = self
            .bins
            .iter()
            .filter(|b| b.hi.is_some_and(|hi| hi <= pct))
            .map(|b| b.count)
            .sum();
        n as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = OnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(OnnError::Parse(format!("unknown output format '{other}'"))),
        }
    }
}

fn io_err(path: &str, e: impl std::fmt::Display) -> OnnError {
    OnnError::Io {
        path: path.to_string(),
        message: e.to_string(),
    }
}

pub fn records_to_csv(records: &[ResultRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| io_err("<csv>", e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_err("<csv>", e))?;
    String::from_utf8(bytes).map_err(|e| io_err("<csv>", e))
}

pub fn records_from_csv(text: &str) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| OnnError::Parse(e.to_string()))
}

pub fn records_to_json(records: &[ResultRecord]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(records).map_err(|e| io_err("<json>", e))?;
    s.push('\n');
    Ok(s)
}

pub fn records_from_json(text: &str) -> Result<Vec<ResultRecord>> {
    serde_json::from_str(text).map_err(|e| OnnError::Parse(e.to_string()))
}

/// Columns `Kn, bin_lo, bin_hi, count`; the overflow bin has `bin_hi = inf`.
pub fn histograms_to_csv(hists: &[ErrorHistogram]) -> String {
    let mut s = String::from("Kn,bin_lo,bin_hi,count\n");
    for h in hists {
        for b in &h.bins {
            let hi = b.hi.map_or_else(|| "inf".to_string(), |v| format!("{v:?}"));
            s.push_str(&format!("{:?},{:?},{},{}\n", h.kn, b.lo, hi, b.count));
        }
    }
    s
}

/// Writes `text` to `path`, or to stdout when `path` is `-`.
pub fn write_text(path: &str, text: &str) -> Result<()> {
    if path == "-" {
        let mut out = io::stdout().lock();
        return out
            .write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| io_err("<stdout>", e));
    }
    let mut f = File::create(Path::new(path)).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

/// Serializes `records` in `format` and writes them to `path` (`-` for stdout).
pub fn emit_results(records: &[ResultRecord], format: OutputFormat, path: &str) -> Result<()> {
    if records.is_empty() {
        return Err(OnnError::InvalidParameter("no records to emit".into()));
    }
    let text = match format {
        OutputFormat::Csv => records_to_csv(records)?,
        OutputFormat::Json => records_to_json(records)?,
    };
    write_text(path, &text)
}
