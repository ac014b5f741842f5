//! Core of the cardiogrid pipeline: RR-interval analytics, simulated sensors,
//! the MQTT-subset gateway, sealed envelopes and attestation, the emulated
//! trusted boundary, the micro-batch engine and the stability sweeps.

pub mod hrv;
pub mod enclave;
pub mod engine;
pub mod gateway;
pub mod secure;
pub mod sensor;
pub mod sweep;

pub use hrv::{analyze, FrequencyBands, GridSpec, HrvConfig, HrvReport, RRSample, RRWindow};
pub use engine::Mode;

/// Milliseconds since the Unix epoch, 0 if the clock is before it.
pub fn unix_time_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
