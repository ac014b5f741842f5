//! Server-side micro-batching: fixed windows over arriving inputs, a worker
//! pool that processes them, and the stability criterion.

mod metrics;
mod processor;
mod realtime;
mod sim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{
    is_unstable, mean_processing_ms, resident_set_kb, BatchMetrics, MetricsWriter, StabilityReport, METRICS_HEADER,
};
pub use processor::{BatchProcessor, InboundItem, OutboundItem, PlainProcessor, SecureProcessor, WindowOutcome};
pub use realtime::{run_engine, share, EngineConfig, EngineCounters, EngineRun, SharedProcessor};
pub use sim::{run_simulated, ServiceOverride, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Secure,
    Plain,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Secure => "secure",
            Mode::Plain => "plain",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "secure" => Ok(Mode::Secure),
            "plain" => Ok(Mode::Plain),
            other => Err(format!("unknown mode {other:?} (expected secure or plain)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("trusted boundary failed: {0}")]
    BoundaryDied(String),
    #[error("no measurements after warmup")]
    NoData,
    #[error("engine configuration: {0}")]
    Config(String),
    #[error("file drop: {0}")]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Idle;

    impl BatchProcessor for Idle {
        fn mode(&self) -> Mode {
            Mode::Plain
        }
        fn process(&mut self, _: &[InboundItem]) -> Result<WindowOutcome, EngineError> {
            Ok(WindowOutcome::default())
        }
    }

    #[test]
    fn forced_twelve_seconds_is_unstable() {
        let windows = vec![Vec::new(); 12];
        let mut p = Idle;
        let mut forced = |_: u64, _: &[InboundItem]| 12_000.0;
        let r = run_simulated(&windows, &mut p, &SimConfig::default(), Some(&mut forced)).unwrap();
        assert!(r.unstable);
        assert_eq!(r.metrics[0].processing_ms, 12_000.0);
        assert_eq!(r.metrics[1].processing_ms, 14_000.0, "backlog carries over");
        assert_eq!(r.metrics[1].queue_depth, 1);
    }

    #[test]
    fn below_interval_never_queues() {
        let windows = vec![Vec::new(); 12];
        let mut forced = |_: u64, _: &[InboundItem]| 9_900.0;
        let r = run_simulated(&windows, &mut Idle, &SimConfig::default(), Some(&mut forced)).unwrap();
        assert!(!r.unstable);
        assert!(r.metrics.iter().all(|m| m.processing_ms == 9_900.0 && m.queue_depth == 0));
    }

    #[test]
    fn mode_parses() {
        assert_eq!("secure".parse::<Mode>().unwrap(), Mode::Secure);
        assert_eq!(Mode::Plain.to_string(), "plain");
        assert!("fast".parse::<Mode>().is_err());
    }
}
