//! Fits the emulated boundary overhead so a secure batch costs a chosen
//! multiple of a plain one, and picks virtual time scales that put the
//! plain maxima at chosen points.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::enclave::{EnclaveHost, EnclaveLauncher, EnclaveSpec, OverheadModel};
use crate::engine::{BatchProcessor, InboundItem, PlainProcessor, SecureProcessor};
use crate::gateway::filedrop::{client_dir_name, FileKind};
use crate::gateway::{AggregatorConfig, BatchRecord};
use crate::secure::{client_id_hash, Direction, PendingAttestation, RootPublicKey, Sealer};
use crate::sensor::{ActivityPhase, Pacing, RrGenerator, SensorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Wanted secure-to-plain cost per batch.
    pub target_ratio: f64,
    /// Lines per batch at the two fitting points.
    pub sizes: [usize; 2],
    pub batches_per_round: usize,
    pub rounds: usize,
    pub clients: usize,
    pub seed: u64,
    pub interval_s: u64,
    /// Plain maximum the clients time scale aims for.
    pub clients_target: u64,
    /// Plain maximum, in payload bytes/s, the load time scale aims for.
    pub load_target_bps: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            target_ratio: 2.0,
            sizes: [5, super::LOAD_BATCH_LINES],
            batches_per_round: 200,
            rounds: 7,
            clients: 16,
            seed: 1,
            interval_s: 10,
            clients_target: 225,
            load_target_bps: 32_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub overhead: OverheadModel,
    /// Median per-batch plain service, ms, at each size.
    pub plain_ms: [f64; 2],
    /// Median per-batch secure service without emulated overhead, ms.
    pub secure_ms: [f64; 2],
    /// Secure service with the fitted overhead, as a multiple of plain.
    pub achieved_ratio: [f64; 2],
    /// Sealed input bytes per call.
    pub crossing_bytes: [f64; 2],
    pub payload_bytes: [f64; 2],
    pub clients_time_scale: f64,
    pub load_time_scale: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn make_batches(cfg: &CalibrationConfig, lines: usize, count: usize) -> Result<Vec<BatchRecord>, SweepError> {
    let mut gens = (0..cfg.clients)
        .map(|i| {
            RrGenerator::new(&SensorConfig {
                client_id: format!("cal-{i:03}"),
                seed: cfg.seed.wrapping_add(i as u64),
                phases: vec![ActivityPhase::new("steady", 1.0e9, 60.0, 25.0)],
                pacing: Pacing::Accelerated,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SweepError::Config(e.to_string()))?;
    Ok((0..count)
        .map(|k| {
            let g = &mut gens[k % cfg.clients];
            let mut b = BatchRecord::new(format!("cal-{:03}", k % cfg.clients), 0);
            b.lines = g.by_ref().take(lines).map(|s| (s.r_timestamp_ms, s.rr_interval_ms)).collect();
            b
        })
        .collect())
}

struct Sessions {
    sealers: Vec<Sealer>,
}

impl Sessions {
    fn attest(host: &mut EnclaveHost, spec: &EnclaveSpec, root: &RootPublicKey, cfg: &CalibrationConfig) -> Result<Self, SweepError> {
        let measurement = spec.measurement()?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let sealers = (0..cfg.clients)
            .map(|i| {
                let pending = PendingAttestation::new(&mut rng);
                let quote = host.attest(&pending.request())?;
                let key = pending
                    .verify(&quote, &measurement, root, crate::unix_time_ms())
                    .map_err(|e| SweepError::Config(format!("attestation: {e}")))?;
                Ok(Sealer::new(key, client_id_hash(&format!("cal-{i:03}")), Direction::Uplink))
            })
            .collect::<Result<_, SweepError>>()?;
        Ok(Self { sealers })
    }

    fn seal(&mut self, batches: &[BatchRecord]) -> Vec<InboundItem> {
        let n = self.sealers.len();
        batches
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let env = self.sealers[k % n].seal(&b.encode_payload()).expect("sequence space");
                InboundItem {
                    client_dir: client_dir_name(&env.client_id_hash),
                    sequence: env.sequence,
                    kind: FileKind::Envelope,
                    bytes: env.to_bytes(),
                }
            })
            .collect()
    }
}

fn plain_items(batches: &[BatchRecord]) -> Vec<InboundItem> {
    batches
        .iter()
        .enumerate()
        .map(|(k, b)| InboundItem {
            client_dir: client_dir_name(&client_id_hash(&b.client_id)),
            sequence: k as u64 + 1,
            kind: FileKind::Plain,
            bytes: b.encode_payload(),
        })
        .collect()
}

fn timed(processor: &mut dyn BatchProcessor, window: &[InboundItem]) -> Result<f64, SweepError> {
    let t = Instant::now();
    processor.process(window)?;
    Ok(t.elapsed().as_secs_f64() * 1000.0 / window.len() as f64)
}

/// Median per-batch service of plain and secure processing at one size,
/// alternating the two each round so both see the same machine state. The
/// first round warms up and is discarded.
fn measure_pair(
    plain: &mut PlainProcessor,
    secure: &mut SecureProcessor,
    sessions: &mut Sessions,
    chunks: &[Vec<BatchRecord>],
) -> Result<(f64, f64), SweepError> {
    let (mut p, mut q) = (Vec::new(), Vec::new());
    for (round, chunk) in chunks.iter().enumerate() {
        let plain_window = plain_items(chunk);
        let sealed_window = sessions.seal(chunk);
        let (pm, qm) = if round % 2 == 0 {
            (timed(plain, &plain_window)?, timed(secure, &sealed_window)?)
        } else {
            let qm = timed(secure, &sealed_window)?;
            (timed(plain, &plain_window)?, qm)
        };
        if round > 0 {
            p.push(pm);
            q.push(qm);
        }
    }
    Ok((median(p), median(q)))
}

/// Worst relative miss of the target ratio over the two sizes.
fn miss(m: OverheadModel, plain: [f64; 2], secure: [f64; 2], kb: [f64; 2], ratio: f64) -> f64 {
    (0..2)
        .map(|i| ((secure[i] + m.per_call_ms + m.per_kb_ms * kb[i]) / plain[i] - ratio).abs())
        .fold(0.0, f64::max)
}

/// Minimizes a convex function of one non-negative variable.
fn ternary(hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (0.0, hi.max(0.0));
    for _ in 0..200 {
        let (m1, m2) = (a + (b - a) / 3.0, b - (b - a) / 3.0);
        if f(m1) <= f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    (a + b) / 2.0
}

/// Overhead making `secure + per_call + per_kb·kb = ratio·plain` at both
/// sizes. When that needs a negative term, the best non-negative model
/// with one term at zero is used instead, judged by the worst miss.
fn fit(plain: [f64; 2], secure: [f64; 2], kb: [f64; 2], ratio: f64) -> OverheadModel {
    let extra = [0, 1].map(|i| ratio * plain[i] - secure[i]);
    if kb[1] > kb[0] {
        let per_kb = (extra[1] - extra[0]) / (kb[1] - kb[0]);
        let per_call = extra[0] - per_kb * kb[0];
        if per_kb >= 0.0 && per_call >= 0.0 {
            return OverheadModel::new(per_call, per_kb).expect("non-negative");
        }
    }
    let score = |m: OverheadModel| miss(m, plain, secure, kb, ratio);
    let model = |c: f64, k: f64| OverheadModel::new(c, k).expect("non-negative");
    let kb_hi = (0..2).map(|i| extra[i].max(0.0) / kb[i]).fold(0.0, f64::max);
    let call_hi = extra[0].max(extra[1]).max(0.0);
    let by_kb = model(0.0, ternary(kb_hi, |k| score(model(0.0, k))));
    let by_call = model(ternary(call_hi, |c| score(model(c, 0.0))), 0.0);
    if score(by_kb) <= score(by_call) {
        by_kb
    } else {
        by_call
    }
}

pub fn calibrate(
    launcher: &EnclaveLauncher,
    spec: &EnclaveSpec,
    root: &RootPublicKey,
    cfg: &CalibrationConfig,
) -> Result<Calibration, SweepError> {
    if cfg.target_ratio.is_nan() || cfg.target_ratio < 1.0 || cfg.rounds == 0 || cfg.batches_per_round == 0 || cfg.clients == 0 {
        return Err(SweepError::Config("calibration needs ratio >= 1 and non-empty rounds".into()));
    }
    let bare = EnclaveSpec {
        overhead: OverheadModel::NONE,
        ..spec.clone()
    };
    let total = cfg.batches_per_round * (cfg.rounds + 1);
    let mut payload_bytes = [0.0; 2];
    let mut crossing_bytes = [0.0; 2];
    let mut rounds: Vec<Vec<Vec<BatchRecord>>> = Vec::new();
    for (i, &lines) in cfg.sizes.iter().enumerate() {
        let batches = make_batches(cfg, lines, total)?;
        payload_bytes[i] = batches.iter().map(|b| b.encode_payload().len()).sum::<usize>() as f64 / total as f64;
        rounds.push(batches.chunks(cfg.batches_per_round).map(<[BatchRecord]>::to_vec).collect());
    }
    let mut plain = PlainProcessor::new(bare.pipeline()?);

    let run = |spec: &EnclaveSpec, plain: &mut PlainProcessor, crossing: Option<&mut [f64; 2]>| {
        let mut host = EnclaveHost::spawn(launcher, spec)?;
        let mut sessions = Sessions::attest(&mut host, spec, root, cfg)?;
        let mut secure = SecureProcessor::new(host);
        let mut out = [(0.0, 0.0); 2];
        for (i, chunks) in rounds.iter().enumerate() {
            out[i] = measure_pair(plain, &mut secure, &mut sessions, chunks)?;
        }
        if let Some(c) = crossing {
            for (i, chunks) in rounds.iter().enumerate() {
                let sealed = sessions.seal(&chunks[0]);
                c[i] = sealed.iter().map(|s| s.bytes.len()).sum::<usize>() as f64 / sealed.len() as f64;
            }
        }
        secure.into_host().shutdown()?;
        Ok::<_, SweepError>(out)
    };

    let bare_run = run(&bare, &mut plain, Some(&mut crossing_bytes))?;
    let plain_ms = bare_run.map(|(p, _)| p);
    let secure_ms = bare_run.map(|(_, q)| q);
    let overhead = fit(plain_ms, secure_ms, crossing_bytes.map(|b| b / 1024.0), cfg.target_ratio);
    log::info!(
        "calibration: plain {plain_ms:?} ms, secure {secure_ms:?} ms per batch; fitted {}",
        overhead.disclosure()
    );
    let fitted = EnclaveSpec { overhead, ..bare.clone() };
    let achieved_ratio = run(&fitted, &mut plain, None)?.map(|(p, q)| q / p);

    let interval_ms = cfg.interval_s as f64 * 1000.0;
    let flushes_per_window = interval_ms / AggregatorConfig::default().flush_interval_ms as f64;
    let clients_time_scale = interval_ms / (cfg.clients_target as f64 * flushes_per_window * plain_ms[0]);
    let load_batches = cfg.load_target_bps as f64 * cfg.interval_s as f64 / payload_bytes[1];
    let load_time_scale = interval_ms / (load_batches * plain_ms[1]);
    Ok(Calibration {
        overhead,
        plain_ms,
        secure_ms,
        achieved_ratio,
        crossing_bytes,
        payload_bytes,
        clients_time_scale,
        load_time_scale,
    })
}
