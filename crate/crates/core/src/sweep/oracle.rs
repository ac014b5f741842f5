//! Judges single sweep points: the real engine, a cost model, or a stub
//! with a known threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::workload::{clients_workload, load_workload, Workload};
use super::{Experiment, SweepConfig, SweepError};
use crate::enclave::{EnclaveHost, EnclaveLauncher, EnclaveSpec, OverheadModel};
use crate::engine::{
    run_simulated, BatchProcessor, EngineError, InboundItem, Mode, PlainProcessor, SecureProcessor, SimConfig,
    WindowOutcome,
};
use crate::gateway::filedrop::{client_dir_name, FileKind};
use crate::secure::{client_id_hash, Direction, PendingAttestation, RootPublicKey, Sealer, HEADER_LEN, TAG_LEN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointOutcome {
    pub stable: bool,
    pub mean_processing_ms: f64,
}

pub trait StabilityOracle {
    fn run_point(&mut self, config: &SweepConfig, mode: Mode, point: u64) -> Result<PointOutcome, SweepError>;
}

fn workload(config: &SweepConfig, point: u64) -> Result<Workload, SweepError> {
    match config.experiment {
        Experiment::Clients => clients_workload(point, config),
        Experiment::Load => load_workload(point, config),
    }
}

fn sim_config(config: &SweepConfig, time_scale: f64) -> SimConfig {
    SimConfig {
        interval_ms: config.interval_s as f64 * 1000.0,
        time_scale,
        warmup_intervals: config.warmup_intervals,
    }
}

/// Stability flips from stable to unstable just above a configured point
/// per mode.
#[derive(Debug, Clone, Default)]
pub struct StubOracle {
    secure: u64,
    plain: u64,
    calls: usize,
}

impl StubOracle {
    pub fn new(secure_threshold: u64, plain_threshold: u64) -> Self {
        Self {
            secure: secure_threshold,
            plain: plain_threshold,
            calls: 0,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl StabilityOracle for StubOracle {
    fn run_point(&mut self, config: &SweepConfig, mode: Mode, point: u64) -> Result<PointOutcome, SweepError> {
        self.calls += 1;
        let threshold = match mode {
            Mode::Secure => self.secure,
            Mode::Plain => self.plain,
        };
        let interval_ms = config.interval_s as f64 * 1000.0;
        let mean = interval_ms * point as f64 / (threshold as f64 + 0.5);
        Ok(PointOutcome {
            stable: mean <= interval_ms,
            mean_processing_ms: mean,
        })
    }
}

/// Plain-mode service cost of one batch, in virtual milliseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub per_batch_ms: f64,
    pub per_kb_ms: f64,
}

impl CostModel {
    fn cost(&self, payload_bytes: usize) -> f64 {
        self.per_batch_ms + self.per_kb_ms * payload_bytes as f64 / 1024.0
    }
}

/// Runs the real workload and scheduling discipline with service times
/// taken from a cost model instead of measurement. Secure batches pay the
/// plain cost plus the boundary overhead on their sealed size.
#[derive(Debug, Clone)]
pub struct CostModelOracle {
    pub cost: CostModel,
    pub overhead: OverheadModel,
}

struct Idle(Mode);

impl BatchProcessor for Idle {
    fn mode(&self) -> Mode {
        self.0
    }

    fn process(&mut self, _: &[InboundItem]) -> Result<WindowOutcome, EngineError> {
        Ok(WindowOutcome::default())
    }
}

impl StabilityOracle for CostModelOracle {
    fn run_point(&mut self, config: &SweepConfig, mode: Mode, point: u64) -> Result<PointOutcome, SweepError> {
        let w = workload(config, point)?;
        let windows: Vec<Vec<InboundItem>> = w
            .windows
            .iter()
            .map(|batches| {
                batches
                    .iter()
                    .map(|b| InboundItem {
                        client_dir: b.client_id.clone(),
                        sequence: 0,
                        kind: FileKind::Plain,
                        bytes: b.encode_payload(),
                    })
                    .collect()
            })
            .collect();
        let (cost, overhead) = (self.cost, self.overhead);
        let mut service = move |_: u64, items: &[InboundItem]| -> f64 {
            items
                .iter()
                .map(|i| {
                    let plain = cost.cost(i.bytes.len());
                    match mode {
                        Mode::Plain => plain,
                        Mode::Secure => {
                            plain + overhead.cost(i.bytes.len() + HEADER_LEN + TAG_LEN).as_secs_f64() * 1000.0
                        }
                    }
                })
                .sum()
        };
        let report = run_simulated(&windows, &mut Idle(mode), &sim_config(config, 1.0), Some(&mut service))?;
        Ok(PointOutcome {
            stable: !report.unstable,
            mean_processing_ms: report.mean_processing_ms,
        })
    }
}

/// Processes each point's workload for real, through a fresh boundary
/// process in secure mode, on the virtual clock of [`run_simulated`].
pub struct EngineOracle {
    pub launcher: EnclaveLauncher,
    pub spec: EnclaveSpec,
    pub root: RootPublicKey,
    pub time_scale: f64,
}

impl EngineOracle {
    fn plain_windows(w: &Workload) -> Vec<Vec<InboundItem>> {
        let mut seq = std::collections::HashMap::<&str, u64>::new();
        w.windows
            .iter()
            .map(|batches| {
                batches
                    .iter()
                    .map(|b| {
                        let s = seq.entry(&b.client_id).or_insert(0);
                        *s += 1;
                        InboundItem {
                            client_dir: client_dir_name(&client_id_hash(&b.client_id)),
                            sequence: *s,
                            kind: FileKind::Plain,
                            bytes: b.encode_payload(),
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn secure_windows(
        &self,
        host: &mut EnclaveHost,
        w: &Workload,
        seed: u64,
    ) -> Result<Vec<Vec<InboundItem>>, SweepError> {
        let measurement = self.spec.measurement()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut sealers = std::collections::HashMap::new();
        for id in &w.clients {
            let pending = PendingAttestation::new(&mut rng);
            let quote = host.attest(&pending.request())?;
            let key = pending
                .verify(&quote, &measurement, &self.root, crate::unix_time_ms())
                .map_err(|e| SweepError::Config(format!("attestation: {e}")))?;
            sealers.insert(id.as_str(), Sealer::new(key, client_id_hash(id), Direction::Uplink));
        }
        w.windows
            .iter()
            .map(|batches| {
                batches
                    .iter()
                    .map(|b| {
                        let sealer = sealers.get_mut(b.client_id.as_str()).expect("client attested");
                        let env = sealer
                            .seal(&b.encode_payload())
                            .map_err(|e| SweepError::Config(e.to_string()))?;
                        Ok(InboundItem {
                            client_dir: client_dir_name(&env.client_id_hash),
                            sequence: env.sequence,
                            kind: FileKind::Envelope,
                            bytes: env.to_bytes(),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

impl StabilityOracle for EngineOracle {
    fn run_point(&mut self, config: &SweepConfig, mode: Mode, point: u64) -> Result<PointOutcome, SweepError> {
        let w = workload(config, point)?;
        let sim = sim_config(config, self.time_scale);
        let report = match mode {
            Mode::Plain => {
                let windows = Self::plain_windows(&w);
                run_simulated(&windows, &mut PlainProcessor::new(self.spec.pipeline()?), &sim, None)?
            }
            Mode::Secure => {
                let mut host = EnclaveHost::spawn(&self.launcher, &self.spec)?;
                let windows = self.secure_windows(&mut host, &w, config.seed ^ point)?;
                let mut processor = SecureProcessor::new(host);
                let report = run_simulated(&windows, &mut processor, &sim, None)?;
                processor.into_host().shutdown()?;
                report
            }
        };
        Ok(PointOutcome {
            stable: !report.unstable,
            mean_processing_ms: report.mean_processing_ms,
        })
    }
}
