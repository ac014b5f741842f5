//! Deterministic inputs for sweep points, generated on virtual time with the
//! same sensor and batching logic the client package uses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SweepConfig, SweepError};
use crate::gateway::{Aggregator, AggregatorConfig, BatchRecord};
use crate::sensor::{ActivityPhase, Pacing, RrGenerator, SensorConfig};

/// Lines per batch in the load experiment: the size flush of a client that
/// samples faster than it flushes by time.
pub const LOAD_BATCH_LINES: usize = 64;

/// Batches per window, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub clients: Vec<String>,
    pub windows: Vec<Vec<BatchRecord>>,
}

impl Workload {
    pub fn batch_count(&self) -> usize {
        self.windows.iter().map(Vec::len).sum()
    }

    pub fn payload_bytes(&self) -> u64 {
        self.windows
            .iter()
            .flatten()
            .map(|b| b.encode_payload().len() as u64)
            .sum()
    }
}

fn client_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn sensor(client_id: String, seed: u64, hr_bpm: f64, duration_s: f64) -> SensorConfig {
    SensorConfig {
        client_id,
        seed,
        phases: vec![ActivityPhase::new("steady", duration_s, hr_bpm, 25.0)],
        pacing: Pacing::Accelerated,
    }
}

/// `n` clients sampling at `config.client_rate_hz`, each starting at a
/// random offset within one flush interval so flushes do not align.
pub fn clients_workload(n: u64, config: &SweepConfig) -> Result<Workload, SweepError> {
    let interval_ms = config.interval_s * 1000;
    let duration_ms = interval_ms * config.windows() as u64;
    let agg_config = AggregatorConfig::default();
    let hr = 60.0 * config.client_rate_hz;
    let mut offsets = ChaCha8Rng::seed_from_u64(config.seed);
    let mut arrivals: Vec<(u64, u64, BatchRecord)> = Vec::new();
    let mut clients = Vec::with_capacity(n as usize);
    for i in 0..n {
        let id = format!("sim-{i:05}");
        let offset = offsets.gen_range(0..agg_config.flush_interval_ms);
        let cfg = sensor(id.clone(), client_seed(config.seed, i), hr, duration_ms as f64 / 1000.0 + 60.0);
        let mut generator = RrGenerator::new(&cfg).map_err(|e| SweepError::Config(e.to_string()))?;
        let mut agg = Aggregator::new(agg_config);
        loop {
            let sample = generator.next_sample().map_err(|e| SweepError::Config(e.to_string()))?;
            let now = offset + sample.r_timestamp_ms;
            while let Some(due) = agg.next_deadline_ms().filter(|&d| d <= now.min(duration_ms)) {
                arrivals.extend(agg.poll(due).into_iter().map(|b| (due, i, b)));
            }
            if now >= duration_ms {
                break;
            }
            if let Some(b) = agg.push_line(&id, (sample.r_timestamp_ms, sample.rr_interval_ms), now) {
                arrivals.push((now, i, b));
            }
        }
        clients.push(id);
    }
    arrivals.sort_by_key(|(t, i, _)| (*t, *i));
    let mut windows = vec![Vec::new(); config.windows()];
    for (t, _, b) in arrivals {
        if let Some(w) = windows.get_mut((t / interval_ms) as usize) {
            w.push(b);
        }
    }
    Ok(Workload { clients, windows })
}

/// One client delivering `bytes_per_s` of batch payload, in batches of
/// [`LOAD_BATCH_LINES`] lines.
pub fn load_workload(bytes_per_s: u64, config: &SweepConfig) -> Result<Workload, SweepError> {
    let id = "sim-load".to_string();
    let cfg = sensor(id.clone(), client_seed(config.seed, u64::MAX), 75.0, 1.0e9);
    let mut generator = RrGenerator::new(&cfg).map_err(|e| SweepError::Config(e.to_string()))?;
    let interval_ms = config.interval_s * 1000;
    let per_window = bytes_per_s * config.interval_s;
    let mut emitted = 0u64;
    let mut windows = Vec::with_capacity(config.windows());
    for k in 0..config.windows() as u64 {
        let mut window = Vec::new();
        while emitted < per_window * (k + 1) {
            let mut b = BatchRecord::new(id.clone(), k * interval_ms);
            for s in generator.by_ref().take(LOAD_BATCH_LINES) {
                b.lines.push((s.r_timestamp_ms, s.rr_interval_ms));
            }
            emitted += b.encode_payload().len() as u64;
            window.push(b);
        }
        windows.push(window);
    }
    Ok(Workload {
        clients: vec![id],
        windows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hertz_clients_flush_every_five_seconds() {
        let cfg = SweepConfig::clients(3);
        let w = clients_workload(4, &cfg).unwrap();
        assert_eq!(w.windows.len(), 12);
        for window in &w.windows[1..] {
            assert!((4..=8).contains(&window.len()), "{}", window.len());
            for id in &w.clients {
                assert!(window.iter().any(|b| &b.client_id == id));
            }
            assert!(window.iter().all(|b| (3..=8).contains(&b.len())));
        }
        assert_eq!(w, clients_workload(4, &cfg).unwrap());
    }

    #[test]
    fn load_matches_target_rate() {
        let cfg = SweepConfig::load(3);
        let w = load_workload(16_000, &cfg).unwrap();
        let secs = cfg.run_duration_s as f64;
        let rate = w.payload_bytes() as f64 / secs;
        assert!((rate - 16_000.0).abs() / 16_000.0 < 0.01, "{rate}");
        assert!(w.windows.iter().flatten().all(|b| b.len() == LOAD_BATCH_LINES));
    }
}
