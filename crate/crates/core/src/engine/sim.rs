//! Virtual-clock execution of the same scheduling discipline.
//!
//! Windows close every `interval_ms` of virtual time and queue for a single
//! worker. Each window is really processed, and its measured service time,
//! multiplied by `time_scale`, advances the virtual clock. A point that would
//! take minutes of wall time is judged in a fraction of it, while the ratio
//! between two modes is preserved.

use std::time::Instant;

use super::metrics::{BatchMetrics, StabilityReport};
use super::processor::{BatchProcessor, InboundItem};
use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub interval_ms: f64,
    /// Virtual milliseconds per measured millisecond of service.
    pub time_scale: f64,
    pub warmup_intervals: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            interval_ms: 10_000.0,
            time_scale: 1.0,
            warmup_intervals: 2,
        }
    }
}

/// Replaces measured service time, in virtual milliseconds.
pub type ServiceOverride<'a> = &'a mut dyn FnMut(u64, &[InboundItem]) -> f64;

pub fn run_simulated(
    windows: &[Vec<InboundItem>],
    processor: &mut dyn BatchProcessor,
    config: &SimConfig,
    mut service_override: Option<ServiceOverride<'_>>,
) -> Result<StabilityReport, EngineError> {
    let mut metrics = Vec::with_capacity(windows.len());
    let mut finishes: Vec<f64> = Vec::with_capacity(windows.len());
    let mut worker_free = 0.0f64;
    for (k, items) in windows.iter().enumerate() {
        let close = (k as f64 + 1.0) * config.interval_ms;
        let t = Instant::now();
        processor.process(items)?;
        let measured_ms = t.elapsed().as_secs_f64() * 1000.0;
        let service = match service_override.as_mut() {
            Some(f) => f(k as u64, items),
            None => measured_ms * config.time_scale,
        };
        let start = close.max(worker_free);
        let finish = start + service;
        worker_free = finish;
        let queue_depth = finishes.iter().filter(|&&f| f > close).count();
        finishes.push(finish);
        metrics.push(BatchMetrics {
            interval_index: k as u64,
            record_count: items.len(),
            input_bytes: items.iter().map(|i| i.bytes.len() as u64).sum(),
            processing_ms: finish - close,
            queue_depth,
            rss_kb: None,
        });
    }
    StabilityReport::from_metrics(
        processor.mode(),
        config.interval_ms / 1000.0,
        config.warmup_intervals,
        metrics,
    )
}
