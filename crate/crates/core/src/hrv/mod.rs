//! Heart-rate-variability analytics over windows of RR intervals.
//!
//! Everything in here is a pure function of its inputs. The time-domain
//! statistics live in [`stats`], the spectral estimator and band integration
//! in [`spectral`]; [`analyze`] composes both into an [`HrvReport`].

mod spectral;
mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use spectral::{band_powers, lomb_scargle, lomb_scargle_power, BandPowers, Spectrum};
pub use stats::{mean_heart_rate, sdnn};

/// Lowest physiologically plausible RR interval (300 bpm).
pub const MIN_RR_MS: u32 = 200;
/// Highest physiologically plausible RR interval (20 bpm).
pub const MAX_RR_MS: u32 = 3000;

/// One heartbeat observation: when the R peak happened and how long after the
/// previous one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RRSample {
    pub client_id: String,
    pub r_timestamp_ms: u64,
    pub rr_interval_ms: u32,
}

impl RRSample {
    pub fn new(client_id: impl Into<String>, r_timestamp_ms: u64, rr_interval_ms: u32) -> Self {
        Self {
            client_id: client_id.into(),
            r_timestamp_ms,
            rr_interval_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("rr interval {rr_ms} ms outside [{MIN_RR_MS}, {MAX_RR_MS}]")]
    OutOfRange { rr_ms: u32 },
    #[error("timestamp {got_ms} does not advance past {previous_ms}")]
    NonMonotonic { previous_ms: u64, got_ms: u64 },
}

/// Per-stream validator; remembers the last accepted timestamp.
#[derive(Debug, Default, Clone)]
pub struct SampleValidator {
    last_timestamp_ms: Option<u64>,
}

impl SampleValidator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Accepts `raw` iff its interval is plausible and its timestamp moves
    /// strictly forward. Rejected samples leave the stream state untouched.
    pub fn validate(&mut self, raw: RRSample) -> Result<RRSample, ValidationError> {
        if !(MIN_RR_MS..=MAX_RR_MS).contains(&raw.rr_interval_ms) {
            return Err(ValidationError::OutOfRange {
                rr_ms: raw.rr_interval_ms,
            });
        }
        if let Some(previous_ms) = self.last_timestamp_ms {
            if raw.r_timestamp_ms <= previous_ms {
                return Err(ValidationError::NonMonotonic {
                    previous_ms,
                    got_ms: raw.r_timestamp_ms,
                });
            }
        }
        self.last_timestamp_ms = Some(raw.r_timestamp_ms);
        Ok(raw)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HrvError {
    #[error("insufficient data: need at least {needed} intervals, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("band {band} covers {points} grid points, need at least 2")]
    EmptyBand { band: &'static str, points: usize },
    #[error("invalid frequency grid: {0}")]
    InvalidGrid(String),
    #[error("invalid frequency bands: {0}")]
    InvalidBands(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

/// Samples of one client covering the half-open span `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RRWindow {
    client_id: String,
    samples: Vec<RRSample>,
    window_start_ms: u64,
    window_end_ms: u64,
}

impl RRWindow {
    pub fn new(
        client_id: impl Into<String>,
        window_start_ms: u64,
        window_end_ms: u64,
        samples: Vec<RRSample>,
    ) -> Result<Self, HrvError> {
        let client_id = client_id.into();
        if window_end_ms < window_start_ms {
            return Err(HrvError::InvalidWindow(format!(
                "end {window_end_ms} before start {window_start_ms}"
            )));
        }
        let mut previous: Option<u64> = None;
        for s in &samples {
            if s.client_id != client_id {
                return Err(HrvError::InvalidWindow(
                    "sample belongs to a different client".into(),
                ));
            }
            if s.r_timestamp_ms < window_start_ms || s.r_timestamp_ms >= window_end_ms {
                return Err(HrvError::InvalidWindow(format!(
                    "timestamp {} outside [{window_start_ms}, {window_end_ms})",
                    s.r_timestamp_ms
                )));
            }
            if previous.is_some_and(|p| s.r_timestamp_ms <= p) {
                return Err(HrvError::InvalidWindow("samples not ordered".into()));
            }
            previous = Some(s.r_timestamp_ms);
        }
        Ok(Self {
            client_id,
            samples,
            window_start_ms,
            window_end_ms,
        })
    }

    /// Window spanning exactly the given samples: from the first timestamp to
    /// one past the last.
    pub fn spanning(client_id: impl Into<String>, samples: Vec<RRSample>) -> Result<Self, HrvError> {
        let start = samples.first().map_or(0, |s| s.r_timestamp_ms);
        let end = samples.last().map_or(0, |s| s.r_timestamp_ms + 1);
        Self::new(client_id, start, end, samples)
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn samples(&self) -> &[RRSample] {
        &self.samples
    }

    pub fn window_start_ms(&self) -> u64 {
        self.window_start_ms
    }

    pub fn window_end_ms(&self) -> u64 {
        self.window_end_ms
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn intervals_ms(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| f64::from(s.rr_interval_ms))
    }
}

/// Pass-through analytic: hands the window back untouched so raw data can be
/// echoed to its owner.
pub fn identity(window: RRWindow) -> RRWindow {
    window
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Band {
    pub const fn new(low_hz: f64, high_hz: f64) -> Self {
        Self { low_hz, high_hz }
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.low_hz && f <= self.high_hz
    }

    pub fn width(&self) -> f64 {
        self.high_hz - self.low_hz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBands {
    pub vlf: Band,
    pub lf: Band,
    pub hf: Band,
}

impl Default for FrequencyBands {
    fn default() -> Self {
        Self {
            vlf: Band::new(0.0033, 0.04),
            lf: Band::new(0.04, 0.15),
            hf: Band::new(0.15, 0.4),
        }
    }
}

impl FrequencyBands {
    pub fn new(vlf: Band, lf: Band, hf: Band) -> Result<Self, HrvError> {
        let bands = Self { vlf, lf, hf };
        bands.validate()?;
        Ok(bands)
    }

    pub fn validate(&self) -> Result<(), HrvError> {
        let edges = [
            self.vlf.low_hz,
            self.vlf.high_hz,
            self.lf.low_hz,
            self.lf.high_hz,
            self.hf.low_hz,
            self.hf.high_hz,
        ];
        if edges.iter().any(|e| !e.is_finite()) || edges[0] <= 0.0 {
            return Err(HrvError::InvalidBands(format!("{edges:?}")));
        }
        let ordered = self.vlf.low_hz < self.vlf.high_hz
            && self.vlf.high_hz <= self.lf.low_hz
            && self.lf.low_hz < self.lf.high_hz
            && self.lf.high_hz <= self.hf.low_hz
            && self.hf.low_hz < self.hf.high_hz;
        if ordered {
            Ok(())
        } else {
            Err(HrvError::InvalidBands(format!("{edges:?}")))
        }
    }
}

/// Uniform frequency grid `start, start + step, …, ≤ end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start_hz: f64,
    pub end_hz: f64,
    pub step_hz: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            start_hz: 0.0033,
            end_hz: 0.4,
            step_hz: 0.002,
        }
    }
}

impl GridSpec {
    pub fn frequencies(&self) -> Result<Vec<f64>, HrvError> {
        if !(self.start_hz > 0.0 && self.step_hz > 0.0 && self.end_hz >= self.start_hz)
            || !self.end_hz.is_finite()
        {
            return Err(HrvError::InvalidGrid(format!("{self:?}")));
        }
        let count = ((self.end_hz - self.start_hz) / self.step_hz + 1e-9).floor() as usize + 1;
        Ok((0..count)
            .map(|k| self.start_hz + k as f64 * self.step_hz)
            .collect())
    }
}

/// Everything the analytics pipeline is parameterised by.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HrvConfig {
    pub bands: FrequencyBands,
    pub grid: GridSpec,
}

/// Per-client, per-window analytics. `None` marks a metric whose
/// preconditions the window did not meet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrvReport {
    pub client_id: String,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub n_intervals: usize,
    pub sdnn_ms: Option<f64>,
    pub mean_hr_bpm: Option<f64>,
    pub vlf_power: Option<f64>,
    pub lf_power: Option<f64>,
    pub hf_power: Option<f64>,
    pub lf_hf_ratio: Option<f64>,
}

/// Runs every analytic on `window`. Metric failures degrade to `None`.
pub fn analyze(window: &RRWindow, config: &HrvConfig) -> HrvReport {
    let bands = config
        .grid
        .frequencies()
        .and_then(|grid| lomb_scargle_power(window, &grid))
        .and_then(|spectrum| band_powers(&spectrum, &config.bands))
        .ok();
    let (vlf_power, lf_power, hf_power, lf_hf_ratio) = match bands {
        Some(p) => (Some(p.vlf), Some(p.lf), Some(p.hf), p.lf_hf_ratio()),
        None => (None, None, None, None),
    };
    HrvReport {
        client_id: window.client_id().to_owned(),
        window_start_ms: window.window_start_ms(),
        window_end_ms: window.window_end_ms(),
        n_intervals: window.len(),
        sdnn_ms: sdnn(window).ok(),
        mean_hr_bpm: mean_heart_rate(window).ok(),
        vlf_power,
        lf_power,
        hf_power,
        lf_hf_ratio,
    }
}
