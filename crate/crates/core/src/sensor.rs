//! Deterministic RR-interval streams standing in for wearable sensors.
//!
//! Each beat is drawn as
//! `round(60000/hr + A_lf·sin(2π f_lf t) + A_hf·sin(2π f_hf t) + N(0, σ))`
//! clamped to the plausible range, with `t` the time of the previous R peak.
//! The random source is ChaCha8 seeded from the 64-bit config seed, so a
//! (seed, phases) pair always yields the same stream.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hrv::{RRSample, MAX_RR_MS, MIN_RR_MS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub amplitude_ms: f64,
    pub freq_hz: f64,
}

impl Modulation {
    pub const fn new(amplitude_ms: f64, freq_hz: f64) -> Self {
        Self {
            amplitude_ms,
            freq_hz,
        }
    }

    fn at(&self, t_s: f64) -> f64 {
        self.amplitude_ms * (2.0 * PI * self.freq_hz * t_s).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityPhase {
    pub label: String,
    pub duration_s: f64,
    pub target_hr_bpm: f64,
    pub rr_jitter_ms: f64,
    pub lf_mod: Modulation,
    pub hf_mod: Modulation,
}

impl ActivityPhase {
    /// Phase with the default modulations: a 0.1 Hz (LF) and a 0.25 Hz (HF)
    /// oscillation so the spectral analytics have structure to find.
    pub fn new(label: impl Into<String>, duration_s: f64, target_hr_bpm: f64, rr_jitter_ms: f64) -> Self {
        Self {
            label: label.into(),
            duration_s,
            target_hr_bpm,
            rr_jitter_ms,
            lf_mod: Modulation::new(25.0, 0.1),
            hf_mod: Modulation::new(15.0, 0.25),
        }
    }

    pub fn without_modulation(mut self) -> Self {
        self.lf_mod.amplitude_ms = 0.0;
        self.hf_mod.amplitude_ms = 0.0;
        self
    }

    fn validate(&self) -> Result<(), SensorError> {
        let bad = |why: &str| Err(SensorError::InvalidConfig(format!("phase {}: {why}", self.label)));
        if !(20.0..=300.0).contains(&self.target_hr_bpm) {
            return bad("target heart rate outside [20, 300] bpm");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration must be positive");
        }
        if !(self.lf_mod.freq_hz > 0.0 && self.hf_mod.freq_hz > 0.0) {
            return bad("modulation frequencies must be positive");
        }
        if !(self.rr_jitter_ms >= 0.0 && self.rr_jitter_ms.is_finite()) {
            return bad("jitter must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Pacing {
    #[default]
    Realtime,
    Accelerated,
}

impl std::str::FromStr for Pacing {
    type Err = SensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realtime" => Ok(Self::Realtime),
            "accelerated" => Ok(Self::Accelerated),
            other => Err(SensorError::InvalidConfig(format!("unknown pacing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub client_id: String,
    pub seed: u64,
    pub phases: Vec<ActivityPhase>,
    pub pacing: Pacing,
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.phases.is_empty() {
            return Err(SensorError::InvalidConfig("at least one phase required".into()));
        }
        self.phases.iter().try_for_each(ActivityPhase::validate)
    }

    pub fn total_duration_ms(&self) -> u64 {
        self.phases
            .iter()
            .map(|p| (p.duration_s * 1000.0).round() as u64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SensorError {
    #[error("invalid sensor configuration: {0}")]
    InvalidConfig(String),
    #[error("stream exhausted")]
    Exhausted,
}

/// The receiving side went away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("sink closed")]
pub struct SinkClosed;

pub trait SampleSink {
    fn accept(&mut self, sample: RRSample) -> Result<(), SinkClosed>;
}

impl SampleSink for Vec<RRSample> {
    fn accept(&mut self, sample: RRSample) -> Result<(), SinkClosed> {
        self.push(sample);
        Ok(())
    }
}

impl SampleSink for crossbeam_channel::Sender<RRSample> {
    fn accept(&mut self, sample: RRSample) -> Result<(), SinkClosed> {
        self.send(sample).map_err(|_| SinkClosed)
    }
}

impl<F: FnMut(RRSample) -> Result<(), SinkClosed>> SampleSink for F {
    fn accept(&mut self, sample: RRSample) -> Result<(), SinkClosed> {
        self(sample)
    }
}

/// Generator state for one client stream.
#[derive(Debug, Clone)]
pub struct RrGenerator {
    client_id: String,
    phases: Vec<ActivityPhase>,
    /// Cumulative end of each phase in ms.
    phase_ends_ms: Vec<u64>,
    rng: ChaCha8Rng,
    elapsed_ms: u64,
}

impl RrGenerator {
    pub fn new(config: &SensorConfig) -> Result<Self, SensorError> {
        config.validate()?;
        let mut end = 0;
        let phase_ends_ms = config
            .phases
            .iter()
            .map(|p| {
                end += (p.duration_s * 1000.0).round() as u64;
                end
            })
            .collect();
        Ok(Self {
            client_id: config.client_id.clone(),
            phases: config.phases.clone(),
            phase_ends_ms,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            elapsed_ms: 0,
        })
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.elapsed_ms
    }

    pub fn next_sample(&mut self) -> Result<RRSample, SensorError> {
        let idx = self
            .phase_ends_ms
            .iter()
            .position(|end| self.elapsed_ms < *end)
            .ok_or(SensorError::Exhausted)?;
        let phase = &self.phases[idx];
        let t_s = self.elapsed_ms as f64 / 1000.0;
        let jitter = Normal::new(0.0, phase.rr_jitter_ms)
            .expect("jitter validated non-negative")
            .sample(&mut self.rng);
        let raw = 60_000.0 / phase.target_hr_bpm + phase.lf_mod.at(t_s) + phase.hf_mod.at(t_s) + jitter;
        let rr = raw.round().clamp(f64::from(MIN_RR_MS), f64::from(MAX_RR_MS)) as u32;
        self.elapsed_ms += u64::from(rr);
        Ok(RRSample::new(self.client_id.clone(), self.elapsed_ms, rr))
    }
}

impl Iterator for RrGenerator {
    type Item = RRSample;

    fn next(&mut self) -> Option<RRSample> {
        self.next_sample().ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamSummary {
    pub delivered: u64,
    pub sink_closed: bool,
    pub stopped: bool,
}

/// Drives `config`'s stream into `sink` until the stream is exhausted, the
/// sink closes or `stop` is raised.
///
/// Realtime pacing delivers each sample `rr` ms after the previous one,
/// scheduled against the stream start so sleeps do not accumulate drift.
pub fn stream<S: SampleSink>(
    config: &SensorConfig,
    sink: &mut S,
    stop: Option<&AtomicBool>,
) -> Result<StreamSummary, SensorError> {
    let mut generator = RrGenerator::new(config)?;
    let started = Instant::now();
    let mut summary = StreamSummary::default();
    loop {
        if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            summary.stopped = true;
            break;
        }
        let sample = match generator.next_sample() {
            Ok(s) => s,
            Err(SensorError::Exhausted) => break,
            Err(e) => return Err(e),
        };
        if config.pacing == Pacing::Realtime {
            let due = started + Duration::from_millis(sample.r_timestamp_ms);
            if !sleep_until(due, stop) {
                summary.stopped = true;
                break;
            }
        }
        if sink.accept(sample).is_err() {
            summary.sink_closed = true;
            break;
        }
        summary.delivered += 1;
    }
    Ok(summary)
}

/// Sleeps in short slices so a raised stop flag is noticed promptly.
/// Returns false when interrupted.
fn sleep_until(due: Instant, stop: Option<&AtomicBool>) -> bool {
    loop {
        let now = Instant::now();
        if now >= due {
            return true;
        }
        if stop.is_some_and(|s| s.load(Ordering::Relaxed)) {
            return false;
        }
        std::thread::sleep((due - now).min(Duration::from_millis(100)));
    }
}
