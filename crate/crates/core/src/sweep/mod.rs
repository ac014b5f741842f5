//! Stability sweeps: for each mode, the largest client count or input load
//! the engine sustains, located by doubling then bisection.

mod calibrate;
mod oracle;
mod report;
mod workload;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enclave::{EnclaveError, OverheadModel};
use crate::engine::{EngineError, Mode};

pub use calibrate::{calibrate, Calibration, CalibrationConfig};
pub use oracle::{CostModel, CostModelOracle, EngineOracle, PointOutcome, StabilityOracle, StubOracle};
pub use report::{emit_report, summary_table, write_csv, ReportFiles, CSV_HEADER};
pub use workload::{clients_workload, load_workload, Workload, LOAD_BATCH_LINES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Many clients at about 1 Hz each; points are client counts.
    Clients,
    /// One client at a target input rate; points are payload bytes/s.
    Load,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Clients => "clients",
            Experiment::Load => "load",
        })
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clients" => Ok(Experiment::Clients),
            "load" => Ok(Experiment::Load),
            other => Err(format!("unknown experiment {other:?} (expected clients or load)")),
        }
    }
}

/// How close the bisection must bring the stable and unstable bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Tolerance {
    Absolute(u64),
    /// Fraction of the stable bound.
    Relative(f64),
}

impl Tolerance {
    fn width(self, stable: u64) -> u64 {
        match self {
            Tolerance::Absolute(a) => a.max(1),
            Tolerance::Relative(r) => ((stable as f64 * r).floor() as u64).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub run_duration_s: u64,
    pub interval_s: u64,
    pub warmup_intervals: usize,
    /// Per-client sample rate for the clients experiment.
    pub client_rate_hz: f64,
    pub lower: u64,
    pub upper: u64,
    pub tolerance: Tolerance,
    pub modes: Vec<Mode>,
    pub seed: u64,
}

impl SweepConfig {
    pub fn clients(seed: u64) -> Self {
        Self {
            experiment: Experiment::Clients,
            run_duration_s: 120,
            interval_s: 10,
            warmup_intervals: 2,
            client_rate_hz: 1.0,
            lower: 1,
            upper: 4096,
            tolerance: Tolerance::Absolute(4),
            modes: vec![Mode::Secure, Mode::Plain],
            seed,
        }
    }

    pub fn load(seed: u64) -> Self {
        Self {
            experiment: Experiment::Load,
            lower: 64,
            upper: 1 << 24,
            tolerance: Tolerance::Relative(0.10),
            ..Self::clients(seed)
        }
    }

    pub fn windows(&self) -> usize {
        (self.run_duration_s / self.interval_s.max(1)) as usize
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |why: &str| Err(SweepError::Config(why.into()));
        if self.interval_s == 0 {
            return bad("interval must be positive");
        }
        if self.windows() < 6 {
            return bad("duration must cover at least 6 intervals");
        }
        if self.warmup_intervals >= self.windows() {
            return bad("warmup leaves no measured intervals");
        }
        if self.lower == 0 || self.upper < self.lower {
            return bad("search bounds must satisfy 0 < lower <= upper");
        }
        if !(self.client_rate_hz > 0.0 && self.client_rate_hz.is_finite()) {
            return bad("client rate must be positive");
        }
        if let Tolerance::Relative(r) = self.tolerance {
            if !(r > 0.0 && r < 1.0) {
                return bad("relative tolerance must lie in (0, 1)");
            }
        }
        if self.modes.is_empty() {
            return bad("no modes to sweep");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Enclave(#[from] EnclaveError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One judged run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub experiment: Experiment,
    pub mode: Mode,
    pub point: u64,
    pub stable: bool,
    pub mean_processing_ms: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub mode: Mode,
    /// Largest stable point; 0 when even the lower bound was unstable.
    pub maximum: u64,
    /// The upper bound was still stable.
    pub never_unstable: bool,
    /// Repeated runs disagreed at the search frontier.
    pub non_monotone: bool,
    pub points: Vec<PointRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub overhead: OverheadModel,
    /// Virtual milliseconds per measured millisecond of service.
    pub time_scale: f64,
    pub outcomes: Vec<ModeOutcome>,
}

impl SweepResult {
    pub fn outcome(&self, mode: Mode) -> Option<&ModeOutcome> {
        self.outcomes.iter().find(|o| o.mode == mode)
    }

    pub fn maximum(&self, mode: Mode) -> Option<u64> {
        self.outcome(mode).map(|o| o.maximum)
    }

    /// Secure maximum over plain maximum.
    pub fn proportion(&self) -> Option<f64> {
        let plain = self.maximum(Mode::Plain)?;
        let secure = self.maximum(Mode::Secure)?;
        (plain > 0).then(|| secure as f64 / plain as f64)
    }
}

struct Search<'a> {
    oracle: &'a mut dyn StabilityOracle,
    config: &'a SweepConfig,
    mode: Mode,
    points: Vec<PointRecord>,
}

impl Search<'_> {
    fn run(&mut self, point: u64) -> Result<bool, SweepError> {
        let out = self.oracle.run_point(self.config, self.mode, point)?;
        log::info!(
            "sweep: {} {} point {point}: {} (mean {:.1} ms)",
            self.config.experiment,
            self.mode,
            if out.stable { "stable" } else { "unstable" },
            out.mean_processing_ms
        );
        self.points.push(PointRecord {
            experiment: self.config.experiment,
            mode: self.mode,
            point,
            stable: out.stable,
            mean_processing_ms: out.mean_processing_ms,
            seed: self.config.seed,
        });
        Ok(out.stable)
    }

    /// Reruns a frontier point. Returns true when a disagreement with the
    /// search verdict survives a third run.
    fn confirm(&mut self, point: u64, verdict: bool) -> Result<bool, SweepError> {
        if self.run(point)? == verdict {
            return Ok(false);
        }
        log::warn!("sweep: {} {} point {point} flipped on rerun", self.config.experiment, self.mode);
        Ok(self.run(point)? != verdict)
    }
}

/// Doubling from `lower` until a point is unstable, then bisection until
/// the bounds are within tolerance. The frontier points are rerun once to
/// expose non-monotone noise.
pub fn search(oracle: &mut dyn StabilityOracle, config: &SweepConfig, mode: Mode) -> Result<ModeOutcome, SweepError> {
    config.validate()?;
    let mut s = Search {
        oracle,
        config,
        mode,
        points: Vec::new(),
    };
    let mut stable: Option<u64> = None;
    let mut unstable: Option<u64> = None;
    let mut p = config.lower;
    loop {
        if s.run(p)? {
            stable = Some(p);
            if p == config.upper {
                break;
            }
            p = p.saturating_mul(2).min(config.upper);
        } else {
            unstable = Some(p);
            break;
        }
    }
    if let (Some(lo), Some(hi)) = (stable, unstable) {
        let (mut lo, mut hi) = (lo, hi);
        while hi - lo > config.tolerance.width(lo) {
            let mid = lo + (hi - lo) / 2;
            if s.run(mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        stable = Some(lo);
        unstable = Some(hi);
    }
    let mut non_monotone = false;
    if let Some(lo) = stable {
        non_monotone |= s.confirm(lo, true)?;
    }
    if let Some(hi) = unstable {
        non_monotone |= s.confirm(hi, false)?;
    }
    let never_unstable = unstable.is_none();
    if never_unstable {
        log::warn!("sweep: {} {mode} still stable at the upper bound {}", config.experiment, config.upper);
    }
    if non_monotone {
        log::warn!("sweep: {} {mode} stability is not monotone near the frontier", config.experiment);
    }
    Ok(ModeOutcome {
        mode,
        maximum: stable.unwrap_or(0),
        never_unstable,
        non_monotone,
        points: s.points,
    })
}

/// Searches every configured mode in turn.
pub fn sweep(
    oracle: &mut dyn StabilityOracle,
    config: &SweepConfig,
    overhead: OverheadModel,
    time_scale: f64,
) -> Result<SweepResult, SweepError> {
    let outcomes = config
        .modes
        .iter()
        .map(|&m| search(oracle, config, m))
        .collect::<Result<_, _>>()?;
    Ok(SweepResult {
        config: config.clone(),
        overhead,
        time_scale,
        outcomes,
    })
}
