//! The analytics pipeline that runs inside the boundary, and the identical
//! plain baseline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::batch::{BatchRecord, ParseError};
use crate::hrv::{analyze, identity, HrvConfig, HrvError, HrvReport};
use crate::secure::Measurement;

pub const PIPELINE_VERSION: &str = "cardiogrid-hrv/1";
pub const ANALYTICS: [&str; 5] = ["identity", "sdnn", "mean_hr", "lomb_scargle", "band_powers"];

/// Reply to one processed batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    /// Sequence of the request envelope (or plain file) this answers.
    pub request_sequence: u64,
    pub reports: Vec<HrvReport>,
    /// CSV lines dropped as malformed or implausible.
    pub skipped_lines: usize,
    pub error: Option<String>,
}

impl ReportSet {
    pub fn failed(request_sequence: u64, why: impl Into<String>) -> Self {
        Self {
            request_sequence,
            reports: Vec::new(),
            skipped_lines: 0,
            error: Some(why.into()),
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("report sets always serialize")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pipeline {
    config: HrvConfig,
}

impl Pipeline {
    pub fn new(config: HrvConfig) -> Result<Self, HrvError> {
        config.bands.validate()?;
        config.grid.frequencies()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &HrvConfig {
        &self.config
    }

    /// SHA-256 over the version string, the band edges and grid as
    /// big-endian f64, and the analytic list.
    pub fn measurement(&self) -> Measurement {
        let b = &self.config.bands;
        let g = &self.config.grid;
        let mut h = Sha256::new();
        h.update((PIPELINE_VERSION.len() as u32).to_be_bytes());
        h.update(PIPELINE_VERSION.as_bytes());
        for x in [
            b.vlf.low_hz,
            b.vlf.high_hz,
            b.lf.low_hz,
            b.lf.high_hz,
            b.hf.low_hz,
            b.hf.high_hz,
            g.start_hz,
            g.end_hz,
            g.step_hz,
        ] {
            h.update(x.to_be_bytes());
        }
        h.update((ANALYTICS.len() as u32).to_be_bytes());
        for a in ANALYTICS {
            h.update((a.len() as u32).to_be_bytes());
            h.update(a.as_bytes());
        }
        h.finalize().into()
    }

    /// One window per batch: validated lines become a window that is
    /// analysed as a whole. Returns the reports and the lines rejected by
    /// validation.
    pub fn run(&self, record: &BatchRecord) -> (Vec<HrvReport>, usize) {
        match record.to_window() {
            Ok((window, rejected)) if !window.is_empty() => {
                (vec![analyze(&identity(window), &self.config)], rejected)
            }
            Ok((_, rejected)) => (Vec::new(), rejected),
            Err(_) => (Vec::new(), record.len()),
        }
    }

    /// Decodes a batch payload and analyses it.
    pub fn process_payload(&self, request_sequence: u64, payload: &[u8]) -> Result<ReportSet, ParseError> {
        let (record, malformed) = BatchRecord::decode_payload(payload)?;
        let (reports, rejected) = self.run(&record);
        Ok(ReportSet {
            request_sequence,
            reports,
            skipped_lines: malformed + rejected,
            error: None,
        })
    }
}

/// Baseline path: same analytics, no sealing, no boundary crossing.
pub fn plain_process_batch(pipeline: &Pipeline, request_sequence: u64, payload: &[u8]) -> Result<ReportSet, ParseError> {
    pipeline.process_payload(request_sequence, payload)
}
